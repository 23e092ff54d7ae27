#include "moodgen/nn/params.hpp"

#include "moodgen/core/check.hpp"
#include "moodgen/core/hash.hpp"

namespace moodgen::nn {

Var ParamStore::add(const std::string& name, Tensor init) {
    MG_CHECK(!index_.count(name), "duplicate parameter name: " + name);
    Var v = Var::leaf(std::move(init));
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
}

const Var& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    MG_CHECK(it != index_.end(), "unknown parameter: " + name);
    return items_[it->second].second;
}

std::int64_t ParamStore::value_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : items_) n += v.value().size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, v] : items_) v.zero_grad();
}

void ParamStore::set_trainable(bool on) {
    for (auto& [name, v] : items_) v.node()->requires_grad = on;
}

void ParamStore::save(TensorArchive& arc, const std::string& prefix) const {
    for (const auto& [name, v] : items_) arc.put(prefix + name, v.value());
}

void ParamStore::load(const TensorArchive& arc, const std::string& prefix) {
    for (auto& [name, v] : items_) {
        const std::string key = prefix + name;
        MG_CHECK_IO(arc.has(key), "archive missing parameter: " + key);
        const Tensor& t = arc.get(key);
        MG_CHECK_IO(t.same_shape(v.value()), "shape mismatch loading parameter: " + key);
        v.value() = t;
    }
}

std::string ParamStore::fingerprint() const {
    Fnv64 h;
    for (const auto& [name, v] : items_) {
        h.update(name.data(), name.size());
        h.update(v.value().data(), static_cast<std::size_t>(v.value().size()) * sizeof(double));
    }
    return h.hex();
}

}  // namespace moodgen::nn
