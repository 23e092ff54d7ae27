#include "moodgen/nn/layers.hpp"

#include <cmath>

#include "moodgen/core/check.hpp"

namespace moodgen::nn {

Linear::Linear(ParamStore& ps, const std::string& name, std::int64_t din, std::int64_t dout,
               Rng& rng, double weight_scale) {
    const double scale = weight_scale < 0.0 ? 1.0 / std::sqrt(static_cast<double>(din))
                                            : weight_scale;
    w_ = ps.add(name + ".w", Tensor::randn({din, dout}, rng, scale));
    b_ = ps.add(name + ".b", Tensor::zeros({dout}));
}

Var Linear::forward_vec(const Var& x) const {
    Var row = reshape(x, {1, x.value().dim(0)});
    return reshape(forward(row), {w_.value().dim(1)});
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, std::int64_t cin,
                         std::int64_t cout, int kernel, int stride, int pad, Rng& rng,
                         bool zero_init)
    : stride_(stride), pad_(pad) {
    const double fan_in = static_cast<double>(cin) * kernel * kernel;
    Tensor w = zero_init ? Tensor::zeros({cout, cin, kernel, kernel})
                         : Tensor::randn({cout, cin, kernel, kernel}, rng, 1.0 / std::sqrt(fan_in));
    w_ = ps.add(name + ".w", std::move(w));
    b_ = ps.add(name + ".b", Tensor::zeros({cout}));
}

GroupNormLayer::GroupNormLayer(ParamStore& ps, const std::string& name, int groups,
                               std::int64_t channels)
    : groups_(groups) {
    gamma_ = ps.add(name + ".gamma", Tensor::full({channels}, 1.0));
    beta_ = ps.add(name + ".beta", Tensor::zeros({channels}));
}

EmbeddingLayer::EmbeddingLayer(ParamStore& ps, const std::string& name, std::int64_t vocab,
                               std::int64_t dim, Rng& rng) {
    table_ = ps.add(name + ".table",
                    Tensor::randn({vocab, dim}, rng, 1.0 / std::sqrt(static_cast<double>(dim))));
}

Mlp::Mlp(ParamStore& ps, const std::string& name, const std::vector<std::int64_t>& dims,
         Rng& rng) {
    MG_CHECK(dims.size() >= 2, "Mlp needs at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        layers_.emplace_back(ps, name + ".fc" + std::to_string(i), dims[i], dims[i + 1], rng);
}

Var Mlp::forward(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
}

}  // namespace moodgen::nn
