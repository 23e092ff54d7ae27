#include "moodgen/nn/adam.hpp"

#include <cmath>

#include "moodgen/core/check.hpp"

namespace moodgen::nn {

Adam::Adam(ParamStore& params, Config cfg) : params_(&params), cfg_(cfg) {
    m_.reserve(params.items().size());
    v_.reserve(params.items().size());
    for (const auto& [name, var] : params.items()) {
        m_.emplace_back(Tensor::zeros(var.value().shape()));
        v_.emplace_back(Tensor::zeros(var.value().shape()));
    }
}

void Adam::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const auto& items = params_->items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        auto node = items[p].second.node();
        Tensor& val = node->value;
        Tensor& m = m_[p];
        Tensor& v = v_[p];
        const bool has_grad = node->grad_alloc;
        for (std::int64_t i = 0; i < val.size(); ++i) {
            const double g = has_grad ? node->grad[i] : 0.0;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            val[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
    }
}

void Adam::save(TensorArchive& arc, const std::string& prefix) const {
    const auto& items = params_->items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        arc.put(prefix + "m." + items[p].first, m_[p]);
        arc.put(prefix + "v." + items[p].first, v_[p]);
    }
    arc.put(prefix + "step", Tensor::scalar(static_cast<double>(step_)));
}

void Adam::load(const TensorArchive& arc, const std::string& prefix) {
    const auto& items = params_->items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        const std::string mk = prefix + "m." + items[p].first;
        const std::string vk = prefix + "v." + items[p].first;
        MG_CHECK_IO(arc.has(mk) && arc.has(vk), "archive missing optimizer state for " + items[p].first);
        m_[p] = arc.get(mk);
        v_[p] = arc.get(vk);
        MG_CHECK_IO(m_[p].same_shape(items[p].second.value()) &&
                        v_[p].same_shape(items[p].second.value()),
                    "optimizer state shape mismatch for " + items[p].first);
    }
    MG_CHECK_IO(arc.has(prefix + "step"), "archive missing optimizer step counter");
    step_ = static_cast<std::int64_t>(arc.get(prefix + "step")[0]);
}

}  // namespace moodgen::nn
