#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moodgen/corpus/corpus.hpp"
#include "moodgen/nn/adam.hpp"
#include "moodgen/nn/tower.hpp"

namespace moodgen::embedder {

struct EmbedderConfig {
    std::int64_t dim = 64;       // joint space dimensionality
    double temperature = 0.07;   // contrastive softmax temperature
    double lr = 2e-3;
    int steps = 1200;
    int batch_size = 32;
    std::uint64_t seed = 7;
};

// Extra single-word concepts that stay in the vocabulary for transfer
// prompts even when they never appear as attribute names.
const std::vector<std::string>& transfer_words();

// Two-tower joint text-image embedding space. The text side is a token
// embedding table plus a small mixing head and a final linear projection;
// after training everything is frozen and downstream stages reuse the head
// to push mapped emotion tokens through the same pipeline.
class JointEmbedder {
public:
    JointEmbedder(EmbedderConfig cfg, std::vector<std::string> vocab);

    static std::vector<std::string> build_vocab(const std::vector<corpus::AttributeSpec>& attrs);

    // Contrastive training over (image, attribute-name) pairs; returns final
    // loss. Throws TrainingDiverged on non-finite loss, ValidationError when
    // fewer than two attributes are present.
    double train(const std::vector<corpus::LabeledImage>& images,
                 const std::vector<corpus::AttributeSpec>& attrs);

    // --- inference (pure given parameters) ---
    std::vector<std::int64_t> tokenize(const std::string& phrase) const;  // appends <end>
    Tensor embed_text(const std::string& phrase) const;                    // [D], unit norm
    Tensor embed_image(const Tensor& chw) const;                           // [D], unit norm
    // Pre-normalization pooled image features, the metric feature space.
    Tensor image_features_prenorm(const std::vector<Tensor>& images) const;  // [N, D]
    // Per-token head outputs for a phrase (with <end> appended): [L, D].
    Tensor text_token_outputs(const std::string& phrase) const;

    // --- autodiff-visible pieces reused by the conditioning stage ---
    nn::Var head_forward_tokens(const nn::Var& tokens) const;  // [L,D] -> [L,D]
    nn::Var project_and_normalize(const nn::Var& token) const;  // [D] -> [D] unit
    nn::Var token_embedding_rows(const std::vector<std::int64_t>& idx) const;  // [L,D]
    nn::Var image_features_var(const nn::Var& batch) const;     // [N,3,H,W] -> [N,D]
    std::int64_t end_token() const { return static_cast<std::int64_t>(vocab_.size()) - 1; }

    const EmbedderConfig& config() const { return cfg_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    std::string fingerprint() const { return params_.fingerprint(); }
    double final_loss() const { return final_loss_; }

    void save(const std::filesystem::path& path, const std::string& corpus_fingerprint) const;
    static JointEmbedder load(const std::filesystem::path& path);

private:
    EmbedderConfig cfg_;
    std::vector<std::string> vocab_;
    nn::ParamStore params_;
    nn::ConvTower tower_;
    nn::EmbeddingLayer tokens_;
    nn::Linear mix1_, mix2_, proj_;
    double final_loss_ = -1.0;

    nn::Var text_embedding_var(const std::string& phrase) const;  // [D] unit
};

}  // namespace moodgen::embedder
