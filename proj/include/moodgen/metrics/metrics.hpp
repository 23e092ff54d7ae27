#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moodgen/corpus/corpus.hpp"
#include "moodgen/core/tensor.hpp"
#include "moodgen/diffusion/generator.hpp"
#include "moodgen/embedder/embedder.hpp"
#include "moodgen/emotion/emotion_space.hpp"
#include "moodgen/nn/layers.hpp"
#include "moodgen/nn/params.hpp"

// Evaluation suite: distribution distance (Frechet over embedder features),
// feature diversity, emotion accuracy under the frozen emotion classifier,
// and attribute-level clarity / richness under a dedicated attribute
// classifier trained here. All reductions are in fixed order.

namespace moodgen::metrics {

struct AttributeClassifierConfig {
    int feature_dim = 64;
    double lr = 2e-3;
    int steps = 600;
    int batch_size = 32;
    std::uint64_t seed = 13;
};

// K-way conv classifier over attribute labels. Same tower shape as the
// emotion classifier, trained independently so the clarity/richness metrics
// do not share weights with anything being evaluated.
class AttributeClassifier {
  public:
    explicit AttributeClassifier(std::vector<std::string> attribute_names,
                                 const AttributeClassifierConfig& cfg = {});

    // Trains on labeled images (labels = attribute indices); every attribute
    // must appear at least once. Returns the final loss.
    double train(const std::vector<corpus::LabeledImage>& images);

    Tensor logits(const std::vector<Tensor>& images) const;         // [N, K]
    Tensor probabilities(const std::vector<Tensor>& images) const;  // softmax rows
    int classify(const Tensor& image) const;  // argmax, ties -> lowest index

    int num_attributes() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& attribute_names() const { return names_; }

    void save(const std::filesystem::path& path, const std::string& corpus_fingerprint) const;
    static AttributeClassifier load(const std::filesystem::path& path);

    std::string fingerprint() const { return params_.fingerprint(); }
    const AttributeClassifierConfig& config() const { return cfg_; }
    double final_loss() const { return final_loss_; }

  private:
    static constexpr int kCheckpointSchema = 1;

    AttributeClassifierConfig cfg_;
    std::vector<std::string> names_;
    nn::ParamStore params_;
    nn::ConvTower tower_;
    nn::Linear head_;
    double final_loss_ = 0.0;
};

// Frechet distance between the two feature populations (rows = samples):
// |mu_r - mu_g|^2 + tr(S_r + S_g - 2 (S_r S_g)^{1/2}), sample covariances
// with the n-1 divisor. Each set needs at least dim+1 rows. When either
// covariance is near singular a 1e-6 diagonal jitter goes on both sides;
// *jitter_used reports it (0.0 when untouched). Result is clamped at zero
// against rounding in the trace term.
double frechet_distance(const Tensor& real_features, const Tensor& gen_features,
                        double* jitter_used = nullptr);

// Mean pairwise (1 - cosine) within each group, averaged across groups.
// Every group needs at least two rows and no zero-norm rows.
double feature_diversity(const std::vector<Tensor>& per_group_features);

// Fraction of images whose predicted emotion matches the intended label.
double emotion_accuracy(const emotion::EmotionEncoder& classifier,
                        const diffusion::GeneratedSet& set);

// Mean over rows of the max probability; rows are softmax distributions.
double semantic_clarity(const Tensor& probabilities);
double semantic_clarity(const AttributeClassifier& classifier,
                        const std::vector<Tensor>& images);

// Normalized entropy H/ln(K) of the predicted-attribute histogram, computed
// per group and averaged over the groups present.
double semantic_diversity(const std::vector<int>& predicted_attributes,
                          const std::vector<int>& group_labels, int num_attributes);
double semantic_diversity(const AttributeClassifier& classifier,
                          const diffusion::GeneratedSet& set);

struct MetricsReport {
    double fid = 0.0;
    double diversity = 0.0;
    double emo_a = 0.0;  // meaningful only when emo_a_defined
    double sem_c = 0.0;
    double sem_d = 0.0;
    // Clarity of the real reference set under the same classifier; upper
    // reference for sem_c.
    double sem_c_real = 0.0;
    bool emo_a_defined = false;
    double fid_jitter = 0.0;  // diagonal jitter applied inside the distance
    std::int64_t real_count = 0;
    std::int64_t gen_count = 0;
    std::string config_fingerprint;  // hash over the three model fingerprints

    void save_json(const std::filesystem::path& path) const;
    static MetricsReport load_json(const std::filesystem::path& path);
    // Single header + single value row, same columns as the JSON fields.
    void save_csv(const std::filesystem::path& path) const;
};

// Full evaluation of a generated set against a real reference set. Features
// come from the embedder's pre-normalization image pathway. Every emotion
// present in the generated set needs at least two images (diversity).
MetricsReport evaluate(const embedder::JointEmbedder& emb,
                       const emotion::EmotionEncoder& emotion_classifier,
                       const AttributeClassifier& attribute_classifier,
                       const std::vector<corpus::LabeledImage>& real_images,
                       const diffusion::GeneratedSet& generated);

}  // namespace moodgen::metrics
