#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moodgen/conditioning/conditioning.hpp"
#include "moodgen/core/tensor.hpp"
#include "moodgen/nn/graph.hpp"
#include "moodgen/nn/layers.hpp"
#include "moodgen/nn/params.hpp"

namespace moodgen::diffusion {

// Small U-shaped noise predictor. One residual block per resolution on the
// way down and up, two at the bottom with a single cross-attention block over
// the conditioning token sequence in between. Step and pooled-token vectors
// are injected as per-sample channel biases inside every residual block. The
// output convolution starts at zero, so an untrained denoiser predicts zero.
struct DenoiserConfig {
    std::int64_t in_channels = 3;
    std::vector<std::int64_t> channels = {16, 32, 64};  // one entry per resolution
    int groups = 8;                                     // group-norm groups
    std::int64_t time_dim = 32;                         // sinusoidal features, even
    std::int64_t cond_dim = 64;                         // shared conditioning vector width
    std::int64_t context_dim = 64;                      // token width of the mapping output
    std::int64_t attn_dim = 32;                         // attention query/key width
    std::uint64_t seed = 31;
};

class Denoiser {
  public:
    explicit Denoiser(const DenoiserConfig& cfg = {});

    // z: [N, C, H, W] with H, W divisible by 2^(levels-1); t: per-sample step
    // (>= 1); token_sequences: one [L, context_dim] entry per sample. Returns
    // the predicted noise with the shape of z.
    nn::Var forward(const nn::Var& z, const std::vector<std::int64_t>& t,
                    const std::vector<nn::Var>& token_sequences) const;

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    std::string fingerprint() const { return params_.fingerprint(); }

  private:
    struct ResBlock {
        nn::GroupNormLayer gn1, gn2;
        nn::Conv2dLayer conv1, conv2;  // conv2 starts at zero
        nn::Linear cond;

        nn::Var forward(const nn::Var& x, const nn::Var& cond_vec) const;
    };

    ResBlock make_block(const std::string& name, std::int64_t channels, Rng& rng);
    nn::Var attend(const nn::Var& x, const std::vector<nn::Var>& token_sequences) const;

    DenoiserConfig cfg_;
    nn::ParamStore params_;

    nn::Mlp time_mlp_;
    nn::Linear ctx_pool_;
    nn::Conv2dLayer stem_;
    std::vector<ResBlock> down_blocks_;
    std::vector<nn::Conv2dLayer> down_convs_;
    ResBlock mid_a_, mid_b_;
    nn::Linear attn_q_, attn_k_, attn_v_, attn_out_;
    std::vector<nn::Conv2dLayer> up_convs_, merge_convs_;
    std::vector<ResBlock> up_blocks_;
    nn::GroupNormLayer out_norm_;
    nn::Conv2dLayer out_conv_;
};

// Sinusoidal step features, one row per entry of t; dim must be even.
Tensor time_features(const std::vector<std::int64_t>& t, std::int64_t dim);

// Noise-prediction losses. The prediction keeps its autodiff graph, so
// gradients reach whatever produced it (denoiser and, through the token
// sequences, the mapping network).
nn::Var ldm_loss_per_sample(const nn::Var& eps_hat, const Tensor& eps);  // [N]
nn::Var ldm_loss_from_prediction(const nn::Var& eps_hat, const Tensor& eps);  // scalar

// Single-sample convenience over a frozen conditioning embedding.
nn::Var ldm_loss(const Denoiser& denoiser, const Tensor& z_t, std::int64_t t,
                 const conditioning::ConditioningEmbedding& cond, const Tensor& eps);

// (1 - alpha) * ldm + alpha * attr; alpha must lie in [0, 1].
double combined_loss(double ldm, double attr, double alpha);

}  // namespace moodgen::diffusion
