#pragma once

// Shared, lazily built test fixtures. Each test binary trains its own copies
// (process-local singletons); corpora live under the system temp directory.

#include <filesystem>

#include "moodgen/core/hash.hpp"
#include "moodgen/corpus/corpus.hpp"
#include "moodgen/embedder/embedder.hpp"
#include "moodgen/emotion/emotion_space.hpp"
#include "moodgen/metrics/metrics.hpp"

namespace testfix {

inline const moodgen::corpus::CorpusManifest& shared_corpus() {
    using namespace moodgen::corpus;
    static const CorpusManifest manifest = [] {
        // Default configuration throughout: several regression thresholds are
        // pinned against the default corpus, so the fixture must match it.
        CorpusConfig cfg;
        cfg.out_dir = std::filesystem::temp_directory_path() / "mg_fixture_corpus";
        std::filesystem::remove_all(cfg.out_dir);
        return generate_corpus(cfg);
    }();
    return manifest;
}

inline const std::vector<moodgen::corpus::LabeledImage>& shared_images() {
    static const auto images = moodgen::corpus::load_images(shared_corpus());
    return images;
}

inline std::vector<moodgen::corpus::LabeledImage> shared_split(moodgen::corpus::Split split) {
    std::vector<moodgen::corpus::LabeledImage> out;
    for (const auto& li : shared_images())
        if (li.split == split) out.push_back(li);
    return out;
}

// Content key for cached fixture models: training is bit-deterministic, so a
// checkpoint trained on the same corpus bytes can be reused across binaries.
inline std::string shared_corpus_key() {
    const auto root = std::filesystem::path(shared_corpus().root);
    return moodgen::hash_string(moodgen::hash_file(root / "manifest.jsonl") +
                                moodgen::hash_file(root / "meta.json"));
}

inline std::filesystem::path fixture_model_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "mg_fixture_models";
    std::filesystem::create_directories(dir);
    return dir;
}

inline const moodgen::embedder::JointEmbedder& shared_embedder() {
    using namespace moodgen::embedder;
    static const JointEmbedder model = [] {
        const auto& manifest = shared_corpus();
        const auto key = shared_corpus_key();
        const auto path = fixture_model_dir() / ("embedder_" + key + ".bin");
        if (std::filesystem::exists(path)) {
            try {
                return JointEmbedder::load(path);
            } catch (...) {
                std::filesystem::remove(path);
            }
        }
        EmbedderConfig cfg;
        JointEmbedder e(cfg, JointEmbedder::build_vocab(manifest.attributes));
        e.train(shared_split(moodgen::corpus::Split::train), manifest.attributes);
        e.save(path, key);
        return e;
    }();
    return model;
}

inline const moodgen::metrics::AttributeClassifier& shared_attribute_classifier() {
    using namespace moodgen::metrics;
    static const AttributeClassifier model = [] {
        const auto& manifest = shared_corpus();
        const auto key = shared_corpus_key();
        const auto path = fixture_model_dir() / ("attribute_" + key + ".bin");
        if (std::filesystem::exists(path)) {
            try {
                return AttributeClassifier::load(path);
            } catch (...) {
                std::filesystem::remove(path);
            }
        }
        std::vector<std::string> names;
        for (const auto& a : manifest.attributes) names.push_back(a.name);
        AttributeClassifier clf(std::move(names));
        clf.train(shared_split(moodgen::corpus::Split::train));
        clf.save(path, key);
        return clf;
    }();
    return model;
}

inline const moodgen::emotion::EmotionEncoder& shared_emotion_encoder() {
    using namespace moodgen::emotion;
    static const EmotionEncoder model = [] {
        const auto key = shared_corpus_key();
        const auto path = fixture_model_dir() / ("emotion_" + key + ".bin");
        if (std::filesystem::exists(path)) {
            try {
                return EmotionEncoder::load(path);
            } catch (...) {
                std::filesystem::remove(path);
            }
        }
        EmotionEncoder enc;
        enc.train(shared_split(moodgen::corpus::Split::train));
        enc.save(path, key);
        return enc;
    }();
    return model;
}

}  // namespace testfix
