#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moodgen/core/rng.hpp"
#include "moodgen/nn/graph.hpp"
#include "moodgen/nn/params.hpp"

namespace moodgen::nn {

// Fully connected layer; weights [din, dout] so forward is x @ w + b.
class Linear {
public:
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, std::int64_t din, std::int64_t dout,
           Rng& rng, double weight_scale = -1.0);  // -1 -> 1/sqrt(din)

    Var forward(const Var& x) const { return linear(x, w_, b_); }
    Var forward_vec(const Var& x) const;  // [din] -> [dout]

    const Var& weight() const { return w_; }
    const Var& bias() const { return b_; }

private:
    Var w_, b_;
};

class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
                int kernel, int stride, int pad, Rng& rng, bool zero_init = false);

    Var forward(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_); }

private:
    Var w_, b_;
    int stride_ = 1, pad_ = 0;
};

class GroupNormLayer {
public:
    GroupNormLayer() = default;
    GroupNormLayer(ParamStore& ps, const std::string& name, int groups, std::int64_t channels);

    Var forward(const Var& x) const { return group_norm(x, groups_, gamma_, beta_); }

private:
    Var gamma_, beta_;
    int groups_ = 1;
};

// Token embedding table [vocab, dim].
class EmbeddingLayer {
public:
    EmbeddingLayer() = default;
    EmbeddingLayer(ParamStore& ps, const std::string& name, std::int64_t vocab, std::int64_t dim,
                   Rng& rng);

    Var forward(const std::vector<std::int64_t>& idx) const { return gather_rows(table_, idx); }
    const Var& table() const { return table_; }

private:
    Var table_;
};

// Plain MLP with ReLU between layers and no activation on the output.
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, const std::vector<std::int64_t>& dims,
        Rng& rng);

    Var forward(const Var& x) const;

private:
    std::vector<Linear> layers_;
};

}  // namespace moodgen::nn
