#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moodgen/conditioning/conditioning.hpp"
#include "moodgen/confidence/confidence.hpp"
#include "moodgen/corpus/corpus.hpp"
#include "moodgen/diffusion/denoiser.hpp"
#include "moodgen/diffusion/schedule.hpp"
#include "moodgen/embedder/embedder.hpp"
#include "moodgen/emotion/emotion_space.hpp"
#include "moodgen/nn/adam.hpp"

namespace moodgen::diffusion {

struct GeneratorConfig {
    std::int64_t image_size = 32;
    std::int64_t timesteps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    DenoiserConfig denoiser;
    conditioning::MappingConfig mapping;

    std::int64_t steps = 2000;
    std::int64_t batch_size = 16;
    double lr_denoiser = 1e-4;
    double lr_mapping = 1e-4;
    double attr_temperature = 0.07;

    bool freeze_denoiser = false;   // train only the mapping network
    bool train_attr_loss = true;    // false drops the attribute term entirely
    double fixed_alpha = -1.0;      // >= 0 replaces the per-image confidence lookup
    double divergence_limit = 1e8;  // non-finite or larger total loss aborts
    std::uint64_t seed = 41;
};

struct LossRow {
    std::int64_t step = 0;
    double ldm = 0.0;
    double attr = 0.0;
    double alpha = 0.0;  // batch mean of the per-sample weights
    double total = 0.0;
};

// Everything the stage-2 trainer owns: both trainable networks, their
// optimizer states, the rng, the step counter and the loss history. A saved
// state resumes the exact trajectory; emotion cluster statistics ride along
// so a checkpoint alone (plus the frozen embedder) can generate.
class TrainState {
  public:
    TrainState(TrainState&&) noexcept = default;
    TrainState& operator=(TrainState&&) noexcept = default;

    static TrainState init(const GeneratorConfig& cfg,
                           const emotion::EmotionClusterStats& clusters,
                           const std::string& encoder_fingerprint,
                           const std::string& embedder_fingerprint);

    const GeneratorConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    Denoiser& denoiser() { return *denoiser_; }
    const Denoiser& denoiser() const { return *denoiser_; }
    conditioning::MappingNetwork& mapping() { return *mapping_; }
    const conditioning::MappingNetwork& mapping() const { return *mapping_; }
    nn::Adam& denoiser_opt() { return *opt_denoiser_; }
    nn::Adam& mapping_opt() { return *opt_mapping_; }
    Rng& rng() { return rng_; }
    const emotion::EmotionClusterStats& clusters() const { return clusters_; }
    std::int64_t step() const { return step_; }
    const std::vector<LossRow>& history() const { return history_; }
    const std::string& encoder_fingerprint() const { return encoder_fp_; }
    const std::string& embedder_fingerprint() const { return embedder_fp_; }

    void record(const LossRow& row) {
        history_.push_back(row);
        step_ = row.step;
    }

    void save(const std::filesystem::path& path) const;
    static TrainState load(const std::filesystem::path& path);
    void write_history_csv(const std::filesystem::path& path) const;

  private:
    static constexpr int kCheckpointSchema = 1;
    TrainState() = default;

    GeneratorConfig cfg_;
    NoiseSchedule schedule_;
    std::unique_ptr<Denoiser> denoiser_;
    std::unique_ptr<conditioning::MappingNetwork> mapping_;
    std::unique_ptr<nn::Adam> opt_denoiser_, opt_mapping_;
    Rng rng_;
    emotion::EmotionClusterStats clusters_;
    std::int64_t step_ = 0;
    std::vector<LossRow> history_;
    std::string encoder_fp_, embedder_fp_;
};

// Trains denoiser and mapping on the train images with per-sample loss
// weights from the confidence matrix. The encoder and embedder stay frozen;
// conditioning during training comes from each image's own encoder feature.
// With a non-empty out_dir, writes checkpoint.bin and loss.csv there (also on
// divergence, before throwing TrainingDiverged).
TrainState train_generator(const std::vector<corpus::LabeledImage>& train_images,
                           const emotion::EmotionEncoder& encoder,
                           const emotion::EmotionClusterStats& clusters,
                           const embedder::JointEmbedder& frozen_embedder,
                           const confidence::ConfidenceMatrix& confidence,
                           const GeneratorConfig& cfg,
                           const std::filesystem::path& out_dir = {});

// Continues a (possibly reloaded) state until total_steps; pass -1 to use the
// step target from the state's own config. Fingerprints of the passed frozen
// modules must match the ones recorded at init.
TrainState resume_training(TrainState state,
                           const std::vector<corpus::LabeledImage>& train_images,
                           const emotion::EmotionEncoder& encoder,
                           const embedder::JointEmbedder& frozen_embedder,
                           const confidence::ConfidenceMatrix& confidence,
                           std::int64_t total_steps = -1,
                           const std::filesystem::path& out_dir = {});

struct GenerateOptions {
    bool use_mean_emotion = false;  // cluster mean instead of a Gaussian draw
    std::int64_t batch_size = 16;   // images per reverse-diffusion batch
};

// Reverse-diffusion engine shared by plain generation and the application
// modes. `tokens_for(i, stream)` runs once per image with that image's
// stream at its start and returns the [L, joint_dim] conditioning sequence;
// whatever it draws comes off the same stream that then produces the initial
// and per-step noise, so providers with identical consumption are bitwise
// interchangeable. Pixels land in [0, 1], each tensor [3, size, size].
std::vector<Tensor> reverse_diffusion(
    const TrainState& state,
    const std::function<Tensor(std::size_t, Rng&)>& tokens_for, std::int64_t n,
    std::uint64_t seed, const GenerateOptions& opts = {});

// Samples n images for one emotion: draw an emotion vector per image from the
// cluster Gaussian, map it to conditioning tokens, then run the full reverse
// chain from pure noise. Deterministic per (state, seed). Pixels land in
// [0, 1] and each tensor is [3, image_size, image_size].
std::vector<Tensor> generate(const TrainState& state,
                             const embedder::JointEmbedder& frozen_embedder, int emotion,
                             std::int64_t n, std::uint64_t seed,
                             const GenerateOptions& opts = {});

// A generated set plus its intended emotion labels, the unit consumed by the
// evaluation suite. On disk: PNG files plus a manifest.jsonl with one
// {file, emotion} row per image.
struct GeneratedSet {
    std::vector<Tensor> images;
    std::vector<int> emotions;
};

void write_generated_set(const std::filesystem::path& dir, const GeneratedSet& set);
GeneratedSet load_generated_set(const std::filesystem::path& dir);

}  // namespace moodgen::diffusion
