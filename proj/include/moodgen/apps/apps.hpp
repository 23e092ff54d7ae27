#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moodgen/core/tensor.hpp"
#include "moodgen/diffusion/generator.hpp"
#include "moodgen/embedder/embedder.hpp"

// Application modes on top of a trained generator state: decomposing an
// emotion into its closest attributes, transferring an emotion onto a
// neutral concept, and fusing two emotions. All read-only on the state.

namespace moodgen::apps {

struct AttributeScore {
    std::string attribute;
    double score;  // mean cosine against the mapped emotion feature
};

struct DecompositionResult {
    int emotion = 0;
    std::vector<AttributeScore> ranked;  // descending score, catalog order on ties
};

// Draws `samples` emotion vectors, maps each to the joint feature, and ranks
// attributes by mean cosine against their frozen text embeddings. topk must
// be in [1, #attributes].
DecompositionResult decompose(const diffusion::TrainState& state,
                              const embedder::JointEmbedder& frozen_embedder,
                              const std::vector<std::string>& attribute_names, int emotion,
                              int samples, int topk, std::uint64_t seed);

struct TransferOptions {
    // Multiplier on the mapped emotion tokens. Zero drops those rows
    // entirely (and skips the emotion draw), leaving exactly the
    // concept-only conditioning sequence.
    double emotion_scale = 1.0;
    diffusion::GenerateOptions generate;
};

// Conditions reverse diffusion on the concept's frozen text tokens followed
// by the emotion's mapped tokens. The concept must tokenize within the
// embedder vocabulary.
std::vector<Tensor> transfer(const diffusion::TrainState& state,
                             const embedder::JointEmbedder& frozen_embedder, int emotion,
                             const std::string& neutral_concept, std::int64_t n,
                             std::uint64_t seed, const TransferOptions& opts = {});

struct FuseOptions {
    // Default blends in emotion space (before mapping); token_level instead
    // maps both draws separately and blends the resulting token sequences,
    // kept around for experimentation.
    bool token_level = false;
    diffusion::GenerateOptions generate;
};

// Blends per-image emotion draws, weight on emotion_a. Both draws share one
// underlying normal vector, so weight 1 (or 0) consumes the stream exactly
// like plain generation of emotion_a (or b) and reproduces it bitwise, and
// fuse(a, b, w) equals fuse(b, a, 1-w) outright.
std::vector<Tensor> fuse(const diffusion::TrainState& state,
                         const embedder::JointEmbedder& frozen_embedder, int emotion_a,
                         int emotion_b, double weight, std::int64_t n, std::uint64_t seed,
                         const FuseOptions& opts = {});

// Tiles images (all one shape) into a grid with `columns` per row, for quick
// visual inspection of generated sets.
Tensor contact_sheet(const std::vector<Tensor>& images, int columns);

}  // namespace moodgen::apps
