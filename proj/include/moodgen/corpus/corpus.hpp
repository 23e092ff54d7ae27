#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moodgen/core/rng.hpp"
#include "moodgen/core/tensor.hpp"

namespace moodgen::corpus {

inline constexpr int kNumEmotions = 8;
inline constexpr int kManifestSchemaVersion = 1;

// Fixed emotion catalog: four positive, four negative.
const std::vector<std::string>& emotion_names();
int emotion_index(const std::string& name);  // throws ValidationError if unknown

enum class AttributeKind { object, scene };

struct AttributeSpec {
    std::string name;
    AttributeKind kind;
    int specific_emotion;  // owning emotion index, or -1 for emotion-agnostic
};

// Default catalog: two specific attributes per emotion plus two agnostic ones.
const std::vector<AttributeSpec>& default_attributes();
int attribute_index(const std::vector<AttributeSpec>& attrs, const std::string& name);

// Column-stochastic emotion-attribute affinity: column j is the distribution
// over emotions for attribute j. Specific attributes concentrate mass on
// their owner; agnostic ones are uniform.
Tensor default_affinity(const std::vector<AttributeSpec>& attrs);
// Degenerate variant: each specific attribute belongs to its owner with
// probability 1 (agnostic columns stay uniform). Used by oracle tests.
Tensor degenerate_affinity(const std::vector<AttributeSpec>& attrs);

enum class Split { train, val };
std::string split_name(Split s);

struct ManifestRecord {
    std::string path;  // relative to the corpus directory
    int emotion = 0;
    int attribute = 0;
    AttributeKind kind = AttributeKind::object;
    Split split = Split::train;
};

struct CorpusManifest {
    std::vector<std::string> emotions;
    std::vector<AttributeSpec> attributes;
    std::vector<ManifestRecord> records;
    Tensor affinity;  // C x K, ground truth used at generation time
    std::uint64_t seed = 0;
    int images_per_cell = 0;
    int image_size = 0;
    double val_fraction = 0.0;
    int schema_version = kManifestSchemaVersion;

    std::filesystem::path root;  // directory holding manifest + images

    // Per (emotion, attribute) image counts, C x K.
    Tensor cell_counts() const;
};

struct CorpusConfig {
    std::filesystem::path out_dir;
    std::uint64_t seed = 1;
    int images_per_cell = 12;
    int image_size = 32;
    double val_fraction = 0.2;
    std::vector<AttributeSpec> attributes = default_attributes();
    Tensor affinity;  // empty -> default_affinity(attributes)
};

// Renders every image, writes PNGs plus manifest.jsonl and meta.json under
// config.out_dir, and returns the manifest. Pure function of the config.
CorpusManifest generate_corpus(const CorpusConfig& config);

// Reads manifest.jsonl + meta.json from a corpus directory.
CorpusManifest load_manifest(const std::filesystem::path& dir);

struct LabeledImage {
    Tensor pixels;  // [3, H, W] in [0, 1]
    int emotion = 0;
    int attribute = 0;
    Split split = Split::train;
};

// Loads records (optionally one split only) in manifest order.
std::vector<LabeledImage> load_images(const CorpusManifest& manifest);
std::vector<LabeledImage> load_images(const CorpusManifest& manifest, Split split);

// Renders one image deterministically; exposed so tests can check label
// consistency without touching disk.
Tensor render_image(const AttributeSpec& attr, int attr_index, int emotion, int image_size,
                    Rng& rng);

}  // namespace moodgen::corpus
