#include "moodgen/apps/apps.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moodgen/conditioning/conditioning.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/corpus/corpus.hpp"
#include "moodgen/emotion/emotion_space.hpp"

namespace moodgen::apps {

namespace {

void check_pipeline(const diffusion::TrainState& state,
                    const embedder::JointEmbedder& frozen_embedder) {
    MG_CHECK(state.step() > 0, "generator state is untrained");
    MG_CHECK(state.embedder_fingerprint() == frozen_embedder.fingerprint(),
             "embedder does not match the one recorded in this state");
}

void check_emotion(int emotion) {
    MG_CHECK(emotion >= 0 && emotion < corpus::kNumEmotions, "emotion index out of range");
}

}  // namespace

DecompositionResult decompose(const diffusion::TrainState& state,
                              const embedder::JointEmbedder& frozen_embedder,
                              const std::vector<std::string>& attribute_names, int emotion,
                              int samples, int topk, std::uint64_t seed) {
    check_pipeline(state, frozen_embedder);
    check_emotion(emotion);
    MG_CHECK(samples >= 1, "need at least one emotion sample");
    const int k = static_cast<int>(attribute_names.size());
    MG_CHECK(k >= 1, "no attributes to rank");
    MG_CHECK(topk >= 1 && topk <= k, "topk must be in [1, number of attributes]");

    Tensor texts =
        conditioning::attribute_text_matrix(frozen_embedder, attribute_names);  // [K, D]
    const auto d = texts.shape()[1];

    Rng rng(derive_seed(seed, 9100));
    std::vector<double> score(static_cast<std::size_t>(k), 0.0);
    for (int s = 0; s < samples; ++s) {
        Tensor evec = emotion::sample_emotion(state.clusters(), emotion, rng);
        conditioning::ConditioningEmbedding ce =
            conditioning::map_emotion(state.mapping(), frozen_embedder, evec);
        // v_emo and the text rows are unit norm, so the dot is the cosine.
        for (int a = 0; a < k; ++a) {
            double dot = 0.0;
            for (std::int64_t c = 0; c < d; ++c) dot += ce.v_emo[c] * texts[a * d + c];
            score[static_cast<std::size_t>(a)] += dot;
        }
    }
    for (auto& v : score) v /= static_cast<double>(samples);

    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&score](int a, int b) { return score[static_cast<std::size_t>(a)] >
                                                     score[static_cast<std::size_t>(b)]; });

    DecompositionResult result;
    result.emotion = emotion;
    for (int r = 0; r < topk; ++r) {
        const int a = order[static_cast<std::size_t>(r)];
        result.ranked.push_back(
            {attribute_names[static_cast<std::size_t>(a)], score[static_cast<std::size_t>(a)]});
    }
    return result;
}

std::vector<Tensor> transfer(const diffusion::TrainState& state,
                             const embedder::JointEmbedder& frozen_embedder, int emotion,
                             const std::string& neutral_concept, std::int64_t n,
                             std::uint64_t seed, const TransferOptions& opts) {
    check_pipeline(state, frozen_embedder);
    check_emotion(emotion);
    MG_CHECK(opts.emotion_scale >= 0.0, "emotion scale must be nonnegative");
    // Tokenization rejects out-of-vocabulary words up front.
    const Tensor concept_tokens = frozen_embedder.text_token_outputs(neutral_concept);
    const auto lc = concept_tokens.shape()[0];
    const auto d = concept_tokens.shape()[1];

    const auto tokens_for = [&](std::size_t, Rng& r) {
        if (opts.emotion_scale == 0.0) return concept_tokens;
        Tensor evec = opts.generate.use_mean_emotion
                          ? emotion::mean_emotion(state.clusters(), emotion)
                          : emotion::sample_emotion(state.clusters(), emotion, r);
        Tensor emo_tokens =
            conditioning::map_emotion(state.mapping(), frozen_embedder, evec).token_sequence;
        const auto le = emo_tokens.shape()[0];
        Tensor out({lc + le, d});
        std::copy(concept_tokens.data(), concept_tokens.data() + lc * d, out.data());
        for (std::int64_t i = 0; i < le * d; ++i)
            out.data()[lc * d + i] = opts.emotion_scale * emo_tokens[i];
        return out;
    };
    return reverse_diffusion(state, tokens_for, n, seed, opts.generate);
}

std::vector<Tensor> fuse(const diffusion::TrainState& state,
                         const embedder::JointEmbedder& frozen_embedder, int emotion_a,
                         int emotion_b, double weight, std::int64_t n, std::uint64_t seed,
                         const FuseOptions& opts) {
    check_pipeline(state, frozen_embedder);
    check_emotion(emotion_a);
    check_emotion(emotion_b);
    MG_CHECK(weight >= 0.0 && weight <= 1.0, "fusion weight must be in [0, 1]");

    // Canonical operand order: (a, b, w) and (b, a, 1-w) then run the exact
    // same arithmetic, so the swap symmetry holds to the bit whenever the
    // two weights are exact complements.
    if (emotion_b < emotion_a) {
        std::swap(emotion_a, emotion_b);
        weight = 1.0 - weight;
    }

    const emotion::EmotionClusterStats& stats = state.clusters();
    const auto e = stats.mean.shape()[1];

    // One shared normal draw expressed in both cluster Gaussians: consumes
    // the stream exactly like a single plain emotion draw, and makes the
    // blend symmetric under (a, b, w) -> (b, a, 1-w).
    const auto draw_pair = [&](Rng& r, Tensor& va, Tensor& vb) {
        va = Tensor({e});
        vb = Tensor({e});
        if (opts.generate.use_mean_emotion) {
            for (std::int64_t c = 0; c < e; ++c) {
                va[c] = stats.mean[emotion_a * e + c];
                vb[c] = stats.mean[emotion_b * e + c];
            }
        } else {
            for (std::int64_t c = 0; c < e; ++c) {
                const double z = r.normal();
                va[c] = stats.mean[emotion_a * e + c] + stats.std[emotion_a * e + c] * z;
                vb[c] = stats.mean[emotion_b * e + c] + stats.std[emotion_b * e + c] * z;
            }
        }
    };

    const auto tokens_for = [&](std::size_t, Rng& r) {
        Tensor va, vb;
        draw_pair(r, va, vb);
        if (!opts.token_level) {
            Tensor v({e});
            for (std::int64_t c = 0; c < e; ++c)
                v[c] = weight * va[c] + (1.0 - weight) * vb[c];
            return conditioning::map_emotion(state.mapping(), frozen_embedder, v).token_sequence;
        }
        Tensor ta =
            conditioning::map_emotion(state.mapping(), frozen_embedder, va).token_sequence;
        const Tensor tb =
            conditioning::map_emotion(state.mapping(), frozen_embedder, vb).token_sequence;
        for (std::int64_t i = 0; i < ta.size(); ++i)
            ta[i] = weight * ta[i] + (1.0 - weight) * tb[i];
        return ta;
    };
    return reverse_diffusion(state, tokens_for, n, seed, opts.generate);
}

Tensor contact_sheet(const std::vector<Tensor>& images, int columns) {
    MG_CHECK(!images.empty(), "no images to tile");
    MG_CHECK(columns >= 1, "need at least one column");
    const auto& s = images[0].shape();
    MG_CHECK(s.size() == 3, "images must be [C,H,W]");
    const std::int64_t c = s[0], h = s[1], w = s[2];
    const std::int64_t cols = std::min<std::int64_t>(columns, static_cast<std::int64_t>(images.size()));
    const std::int64_t rows =
        (static_cast<std::int64_t>(images.size()) + cols - 1) / cols;
    Tensor sheet({c, rows * h, cols * w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        MG_CHECK(images[i].shape() == s, "inconsistent image shapes");
        const std::int64_t r0 = (static_cast<std::int64_t>(i) / cols) * h;
        const std::int64_t c0 = (static_cast<std::int64_t>(i) % cols) * w;
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x)
                    sheet[(ch * rows * h + (r0 + y)) * cols * w + c0 + x] =
                        images[i][(ch * h + y) * w + x];
    }
    return sheet;
}

}  // namespace moodgen::apps
