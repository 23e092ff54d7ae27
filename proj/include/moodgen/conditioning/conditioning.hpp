#pragma once

// Stage-2 conditioning path: a trainable MLP maps emotion-space vectors into
// seed tokens for the frozen text head, which produces the denoiser's
// conditioning sequence and the end-token feature used by the attribute loss.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moodgen/core/tensor.hpp"
#include "moodgen/embedder/embedder.hpp"
#include "moodgen/nn/graph.hpp"
#include "moodgen/nn/layers.hpp"
#include "moodgen/nn/params.hpp"

namespace moodgen::conditioning {

struct MappingConfig {
    int emotion_dim = 64;    // E, input
    int joint_dim = 64;      // D, token width of the frozen head
    int seed_tokens = 3;     // learned tokens; the frozen end token is appended
    int hidden_mult = 4;     // hidden width = hidden_mult * emotion_dim; 0 = plain linear map
    std::uint64_t seed = 21;
};

class MappingNetwork {
  public:
    explicit MappingNetwork(const MappingConfig& cfg = {});

    // [N, E] -> [N, seed_tokens * D]
    nn::Var forward(const nn::Var& emotion_vectors) const;

    const MappingConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    std::string fingerprint() const { return params_.fingerprint(); }

    void save(const std::filesystem::path& path, const std::string& embedder_fingerprint) const;
    static MappingNetwork load(const std::filesystem::path& path);

  private:
    static constexpr int kCheckpointSchema = 1;
    MappingConfig cfg_;
    nn::ParamStore params_;
    nn::Mlp mlp_;
};

// Inference-side result of mapping one emotion vector.
struct ConditioningEmbedding {
    Tensor token_sequence;  // [L, D], L = seed_tokens + 1 (frozen end token)
    Tensor v_emo;           // [D], unit norm
};

// Differentiable counterpart used by the stage-2 trainer. Gradients flow only
// into the mapping network; the text head stays frozen.
struct MappedBatch {
    std::vector<nn::Var> token_sequences;  // N entries, each [L, D]
    nn::Var v_emos;                        // [N, D], unit rows
};

ConditioningEmbedding map_emotion(const MappingNetwork& mapping,
                                  const embedder::JointEmbedder& frozen_embedder,
                                  const Tensor& emotion_vector);

MappedBatch map_batch(const MappingNetwork& mapping,
                      const embedder::JointEmbedder& frozen_embedder,
                      const nn::Var& emotion_vectors /* [N, E] */);

// Plain cosine similarity on raw vectors; throws ValidationError on zero norm.
double cosine_similarity(const Tensor& p, const Tensor& q);

// Cross-entropy over cosine similarities between one emotion feature and the
// K frozen attribute text embeddings, scaled by 1/temperature.
nn::Var attribute_loss(const nn::Var& v_emo, const Tensor& attribute_texts, int true_attribute,
                       double temperature);

// Batched form used in training. `symmetric` adds the transposed term (texts
// classifying samples, multi-positive) with equal weight.
nn::Var attribute_loss_batch(const nn::Var& v_emos, const Tensor& attribute_texts,
                             const std::vector<std::int64_t>& labels, double temperature,
                             bool symmetric = false);

// Per-sample losses ([N], forward direction only) for callers that weight
// each sample individually before reducing.
nn::Var attribute_loss_rows(const nn::Var& v_emos, const Tensor& attribute_texts,
                            const std::vector<std::int64_t>& labels, double temperature);

// Frozen attribute text embeddings stacked as [K, D] rows.
Tensor attribute_text_matrix(const embedder::JointEmbedder& frozen_embedder,
                             const std::vector<corpus::AttributeSpec>& attrs);
Tensor attribute_text_matrix(const embedder::JointEmbedder& frozen_embedder,
                             const std::vector<std::string>& names);

}  // namespace moodgen::conditioning
