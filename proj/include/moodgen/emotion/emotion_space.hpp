#pragma once

// Stage-1 emotion representation: a small conv classifier trained with
// cross-entropy over the eight emotion labels. Its penultimate features define
// the emotion space; per-emotion diagonal Gaussians fitted on the train split
// provide sampling at inference time.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moodgen/core/rng.hpp"
#include "moodgen/core/tensor.hpp"
#include "moodgen/corpus/corpus.hpp"
#include "moodgen/nn/graph.hpp"
#include "moodgen/nn/layers.hpp"
#include "moodgen/nn/params.hpp"
#include "moodgen/nn/tower.hpp"

namespace moodgen::emotion {

struct EmotionEncoderConfig {
    int feature_dim = 64;
    double lr = 2e-3;
    int steps = 500;
    int batch_size = 32;
    std::uint64_t seed = 11;
};

// Mean cross-entropy between logits [N,C] and integer labels; the stage-1
// training loss, exposed for direct identity checks.
nn::Var emotion_ce_loss(const nn::Var& logits, const std::vector<std::int64_t>& labels);

class EmotionEncoder {
  public:
    explicit EmotionEncoder(const EmotionEncoderConfig& cfg = {});

    // Trains on labeled images (labels = emotion indices); returns final loss.
    double train(const std::vector<corpus::LabeledImage>& images);

    // Penultimate features for a batch of [3,H,W] images; raw, not normalized.
    Tensor features(const std::vector<Tensor>& images) const;
    Tensor feature(const Tensor& image) const;
    nn::Var features_var(const nn::Var& batch) const;  // differentiable path

    // Class logits [N, C] for a batch.
    Tensor logits(const std::vector<Tensor>& images) const;
    int classify(const Tensor& image) const;

    void save(const std::filesystem::path& path, const std::string& corpus_fingerprint) const;
    static EmotionEncoder load(const std::filesystem::path& path);

    std::string fingerprint() const { return params_.fingerprint(); }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const EmotionEncoderConfig& config() const { return cfg_; }
    double final_loss() const { return final_loss_; }
    void set_trainable(bool on) { params_.set_trainable(on); }

  private:
    static constexpr int kCheckpointSchema = 1;

    EmotionEncoderConfig cfg_;
    nn::ParamStore params_;
    nn::ConvTower tower_;
    nn::Linear head_;
    double final_loss_ = 0.0;
};

struct EmotionClusterStats {
    Tensor mean;                       // [C, E]
    Tensor std;                        // [C, E], elementwise sample std (n-1)
    std::vector<std::int64_t> counts;  // per emotion

    void save(const std::filesystem::path& path) const;
    static EmotionClusterStats load(const std::filesystem::path& path);
};

// Fits per-emotion elementwise mean/std of encoder features over the given
// images. Every emotion must appear at least twice.
EmotionClusterStats fit_clusters(const EmotionEncoder& encoder,
                                 const std::vector<corpus::LabeledImage>& images);

// mu_i + sigma_i * z with z standard normal, one rng draw per dimension.
Tensor sample_emotion(const EmotionClusterStats& stats, int emotion, Rng& rng);

// Deterministic variant: the cluster mean.
Tensor mean_emotion(const EmotionClusterStats& stats, int emotion);

}  // namespace moodgen::emotion
