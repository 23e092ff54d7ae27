#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moodgen/core/archive.hpp"
#include "moodgen/nn/graph.hpp"

namespace moodgen::nn {

// Owns the trainable leaves of a model. Layers register parameters at
// construction time; optimizers and checkpoints iterate in registration
// order, which keeps update order (and therefore trajectories) fixed.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init);

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    const Var& at(const std::string& name) const;

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::int64_t count() const { return static_cast<std::int64_t>(items_.size()); }
    std::int64_t value_count() const;

    void zero_grads();
    void set_trainable(bool on);

    // Values only; optimizer state lives with the optimizer. Keys get an
    // optional prefix so several stores can share one archive.
    void save(TensorArchive& arc, const std::string& prefix = "") const;
    void load(const TensorArchive& arc, const std::string& prefix = "");

    // Order-stable hash of every parameter value; used to prove modules
    // stayed frozen across later stages.
    std::string fingerprint() const;

private:
    std::vector<std::pair<std::string, Var>> items_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace moodgen::nn
