#include "moodgen/diffusion/denoiser.hpp"

#include <cmath>

#include "moodgen/core/check.hpp"
#include "moodgen/core/rng.hpp"

namespace moodgen::diffusion {

using nn::Var;

Denoiser::ResBlock Denoiser::make_block(const std::string& name, std::int64_t channels,
                                        Rng& rng) {
    ResBlock b;
    b.gn1 = nn::GroupNormLayer(params_, name + ".gn1", cfg_.groups, channels);
    b.conv1 = nn::Conv2dLayer(params_, name + ".conv1", channels, channels, 3, 1, 1, rng);
    b.cond = nn::Linear(params_, name + ".cond", cfg_.cond_dim, channels, rng);
    b.gn2 = nn::GroupNormLayer(params_, name + ".gn2", cfg_.groups, channels);
    b.conv2 = nn::Conv2dLayer(params_, name + ".conv2", channels, channels, 3, 1, 1, rng,
                              /*zero_init=*/true);
    return b;
}

Var Denoiser::ResBlock::forward(const Var& x, const Var& cond_vec) const {
    Var h = conv1.forward(nn::silu(gn1.forward(x)));
    h = nn::add_bias_channels_per_sample(h, cond.forward(cond_vec));
    h = conv2.forward(nn::silu(gn2.forward(h)));
    return nn::add(x, h);
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
    MG_CHECK(cfg.in_channels >= 1, "denoiser needs at least one input channel");
    MG_CHECK(cfg.channels.size() >= 2, "denoiser needs at least two resolution levels");
    MG_CHECK(cfg.groups >= 1, "group count must be positive");
    for (std::int64_t c : cfg.channels)
        MG_CHECK(c > 0 && c % cfg.groups == 0, "channel counts must be divisible by groups");
    MG_CHECK(cfg.time_dim >= 2 && cfg.time_dim % 2 == 0, "time_dim must be even and >= 2");
    MG_CHECK(cfg.cond_dim >= 1 && cfg.context_dim >= 1 && cfg.attn_dim >= 1,
             "conditioning widths must be positive");

    Rng rng(derive_seed(cfg.seed, 0));
    const std::size_t levels = cfg.channels.size();
    const std::int64_t bottom = cfg.channels.back();

    time_mlp_ = nn::Mlp(params_, "time", {cfg.time_dim, cfg.cond_dim, cfg.cond_dim}, rng);
    ctx_pool_ = nn::Linear(params_, "ctxpool", cfg.context_dim, cfg.cond_dim, rng);
    stem_ = nn::Conv2dLayer(params_, "stem", cfg.in_channels, cfg.channels[0], 3, 1, 1, rng);

    for (std::size_t l = 0; l + 1 < levels; ++l) {
        const std::string tag = std::to_string(l);
        down_blocks_.push_back(make_block("down" + tag, cfg.channels[l], rng));
        down_convs_.emplace_back(params_, "downconv" + tag, cfg.channels[l], cfg.channels[l + 1],
                                 3, 2, 1, rng);
    }

    mid_a_ = make_block("mid_a", bottom, rng);
    attn_q_ = nn::Linear(params_, "attn.q", bottom, cfg.attn_dim, rng);
    attn_k_ = nn::Linear(params_, "attn.k", cfg.context_dim, cfg.attn_dim, rng);
    attn_v_ = nn::Linear(params_, "attn.v", cfg.context_dim, bottom, rng);
    attn_out_ = nn::Linear(params_, "attn.out", bottom, bottom, rng, /*weight_scale=*/0.0);
    mid_b_ = make_block("mid_b", bottom, rng);

    for (std::size_t l = levels - 1; l-- > 0;) {
        const std::string tag = std::to_string(l);
        up_convs_.emplace_back(params_, "upconv" + tag, cfg.channels[l + 1], cfg.channels[l], 3,
                               1, 1, rng);
        merge_convs_.emplace_back(params_, "merge" + tag, 2 * cfg.channels[l], cfg.channels[l],
                                  3, 1, 1, rng);
        up_blocks_.push_back(make_block("up" + tag, cfg.channels[l], rng));
    }

    out_norm_ = nn::GroupNormLayer(params_, "out.norm", cfg.groups, cfg.channels[0]);
    out_conv_ = nn::Conv2dLayer(params_, "out.conv", cfg.channels[0], cfg.in_channels, 3, 1, 1,
                                rng, /*zero_init=*/true);
}

Var Denoiser::attend(const Var& x, const std::vector<Var>& token_sequences) const {
    const auto& s = x.value().shape();
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.attn_dim));

    std::vector<Var> per_sample;
    per_sample.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Var sp = nn::spatial_tokens(x, i);                       // [HW, C]
        Var q = attn_q_.forward(sp);                             // [HW, A]
        Var k = attn_k_.forward(token_sequences[static_cast<std::size_t>(i)]);  // [L, A]
        Var v = attn_v_.forward(token_sequences[static_cast<std::size_t>(i)]);  // [L, C]
        Var attn = nn::softmax_rows(nn::mul_scalar(nn::matmul(q, nn::transpose2(k)), scale));
        per_sample.push_back(attn_out_.forward(nn::matmul(attn, v)));
    }
    return nn::add(x, nn::stack_tokens_to_batch(per_sample, c, h, w));
}

Var Denoiser::forward(const Var& z, const std::vector<std::int64_t>& t,
                      const std::vector<Var>& token_sequences) const {
    const auto& s = z.value().shape();
    MG_CHECK(s.size() == 4 && s[1] == cfg_.in_channels, "denoiser input must be [N, C, H, W]");
    const std::int64_t n = s[0];
    const std::int64_t stride_total = std::int64_t{1} << (cfg_.channels.size() - 1);
    MG_CHECK(s[2] % stride_total == 0 && s[3] % stride_total == 0,
             "image size must be divisible by the total downsampling factor");
    MG_CHECK(static_cast<std::int64_t>(t.size()) == n, "one step per sample required");
    MG_CHECK(static_cast<std::int64_t>(token_sequences.size()) == n,
             "one token sequence per sample required");
    for (std::int64_t step : t) MG_CHECK(step >= 1, "steps are 1-based");
    std::vector<Var> pooled;
    pooled.reserve(static_cast<std::size_t>(n));
    for (const Var& seq : token_sequences) {
        const auto& ts = seq.value().shape();
        MG_CHECK(ts.size() == 2 && ts[1] == cfg_.context_dim && ts[0] >= 1,
                 "token sequences must be [L, context_dim]");
        pooled.push_back(nn::reshape(nn::mean_rows(seq), {1, cfg_.context_dim}));
    }

    Var cond = nn::add(time_mlp_.forward(Var::constant(time_features(t, cfg_.time_dim))),
                       ctx_pool_.forward(nn::concat_rows(pooled)));

    Var x = stem_.forward(z);
    std::vector<Var> skips;
    for (std::size_t l = 0; l < down_blocks_.size(); ++l) {
        x = down_blocks_[l].forward(x, cond);
        skips.push_back(x);
        x = down_convs_[l].forward(x);
    }

    x = mid_a_.forward(x, cond);
    x = attend(x, token_sequences);
    x = mid_b_.forward(x, cond);

    for (std::size_t i = 0; i < up_blocks_.size(); ++i) {
        x = up_convs_[i].forward(nn::upsample_nearest2(x));
        x = nn::concat_channels(x, skips[skips.size() - 1 - i]);
        x = merge_convs_[i].forward(x);
        x = up_blocks_[i].forward(x, cond);
    }

    return out_conv_.forward(nn::silu(out_norm_.forward(x)));
}

Tensor time_features(const std::vector<std::int64_t>& t, std::int64_t dim) {
    MG_CHECK(dim >= 2 && dim % 2 == 0, "time feature dim must be even and >= 2");
    const std::int64_t half = dim / 2;
    Tensor out({static_cast<std::int64_t>(t.size()), dim});
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (std::int64_t i = 0; i < half; ++i) {
            const double exponent =
                half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
            const double freq = std::exp(-std::log(10000.0) * exponent);
            const double angle = static_cast<double>(t[r]) * freq;
            out.data()[r * static_cast<std::size_t>(dim) + 2 * i] = std::sin(angle);
            out.data()[r * static_cast<std::size_t>(dim) + 2 * i + 1] = std::cos(angle);
        }
    }
    return out;
}

Var ldm_loss_per_sample(const Var& eps_hat, const Tensor& eps) {
    MG_CHECK(eps_hat.value().shape() == eps.shape(), "prediction and noise shapes must match");
    return nn::mean_per_sample(nn::square(nn::sub(eps_hat, Var::constant(eps))));
}

Var ldm_loss_from_prediction(const Var& eps_hat, const Tensor& eps) {
    MG_CHECK(eps_hat.value().shape() == eps.shape(), "prediction and noise shapes must match");
    return nn::mean_all(nn::square(nn::sub(eps_hat, Var::constant(eps))));
}

Var ldm_loss(const Denoiser& denoiser, const Tensor& z_t, std::int64_t t,
             const conditioning::ConditioningEmbedding& cond, const Tensor& eps) {
    MG_CHECK(z_t.shape().size() == 3, "single-sample loss expects a [C, H, W] image");
    std::vector<std::int64_t> batch_shape = {1, z_t.shape()[0], z_t.shape()[1], z_t.shape()[2]};
    Var z = Var::constant(z_t.reshaped(batch_shape));
    Var eps_hat = denoiser.forward(z, {t}, {Var::constant(cond.token_sequence)});
    return ldm_loss_from_prediction(eps_hat, eps.reshaped(batch_shape));
}

double combined_loss(double ldm, double attr, double alpha) {
    MG_CHECK(alpha >= 0.0 && alpha <= 1.0, "loss weight must lie in [0, 1]");
    return (1.0 - alpha) * ldm + alpha * attr;
}

}  // namespace moodgen::diffusion
