#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moodgen/core/archive.hpp"
#include "moodgen/nn/params.hpp"

namespace moodgen::nn {

// Adam with bias correction. Moment buffers are aligned with ParamStore
// registration order and round-trip through TensorArchive so a resumed run
// continues the exact trajectory.
class Adam {
public:
    struct Config {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(ParamStore& params, Config cfg);

    // Applies one update from the gradients currently on the parameters.
    // Parameters whose grad was never touched this step count as zero.
    void step();

    std::int64_t step_count() const { return step_; }

    void save(TensorArchive& arc, const std::string& prefix) const;
    void load(const TensorArchive& arc, const std::string& prefix);

private:
    ParamStore* params_;
    Config cfg_;
    std::int64_t step_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace moodgen::nn
