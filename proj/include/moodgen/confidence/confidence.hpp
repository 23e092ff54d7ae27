#pragma once

// Emotion-confidence matrix: for every attribute, the average softmax output
// of a frozen emotion classifier over all images carrying that attribute.
// Downstream training looks up alpha by (emotion, attribute) to balance the
// denoising and attribute losses per sample.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moodgen/core/tensor.hpp"
#include "moodgen/corpus/corpus.hpp"
#include "moodgen/emotion/emotion_space.hpp"

namespace moodgen::confidence {

struct ConfidenceMatrix {
    Tensor alpha;                             // [C, K], column-stochastic where present
    std::vector<std::int64_t> counts;         // per attribute, N_j
    std::vector<bool> present;                // attribute had at least one image
    std::vector<std::string> attribute_names;
    std::string classifier_fingerprint;

    // Stored alpha for valid indices; 0 for absent attributes.
    double lookup(int emotion, int attribute) const;

    void save(const std::filesystem::path& path) const;  // CSV table
    static ConfidenceMatrix load(const std::filesystem::path& path);
};

// Averages classifier softmax outputs per attribute over the given images
// (normally the train split; pass a classifier trained on a held-out split to
// avoid leakage if desired). Attributes with no images are flagged absent.
// The reduction sorts each cell's contributions, so any permutation of the
// input yields bit-identical alphas.
ConfidenceMatrix compute_confidence(const emotion::EmotionEncoder& classifier,
                                    const corpus::CorpusManifest& manifest,
                                    const std::vector<corpus::LabeledImage>& images);

}  // namespace moodgen::confidence
