#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "moodgen/core/check.hpp"
#include "moodgen/core/hash.hpp"
#include "moodgen/corpus/corpus.hpp"

using namespace moodgen;
using namespace moodgen::corpus;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<AttributeSpec> small_catalog() {
    auto all = default_attributes();
    return {all[0], all[2], all[16], all[17]};  // toy, mountain_snowy, tree, room
}

}  // namespace

TEST_CASE("default catalog satisfies the coverage contract") {
    const auto& attrs = default_attributes();
    Tensor aff = default_affinity(attrs);
    const auto k = static_cast<std::int64_t>(attrs.size());
    // Every emotion owns at least two attributes with affinity > 0.5.
    for (int e = 0; e < kNumEmotions; ++e) {
        int strong = 0;
        for (std::int64_t j = 0; j < k; ++j)
            if (aff[e * k + j] > 0.5) ++strong;
        CHECK(strong >= 2);
    }
    // And at least two near-uniform (agnostic) attributes exist.
    int agnostic = 0;
    for (std::int64_t j = 0; j < k; ++j) {
        double mx = 0.0;
        for (int e = 0; e < kNumEmotions; ++e) mx = std::max(mx, aff[e * k + j]);
        if (mx < 0.2) ++agnostic;
    }
    CHECK(agnostic >= 2);
}

TEST_CASE("generate rejects invalid input") {
    CorpusConfig cfg;
    cfg.out_dir = fresh_dir("mg_corpus_invalid");
    cfg.attributes = small_catalog();
    cfg.images_per_cell = 0;
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);

    cfg.images_per_cell = 1;
    cfg.affinity = Tensor::full({kNumEmotions, 4}, 0.2);  // columns sum to 1.6
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);

    cfg.affinity = Tensor::full({kNumEmotions, 4}, 0.125);
    cfg.affinity[0] = -0.1;
    cfg.affinity[1 * 4] = 0.35;  // fix the sum, keep a negative entry
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);

    cfg.attributes.clear();
    cfg.affinity = Tensor();
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);
}

TEST_CASE("degenerate affinity puts every image on the block") {
    CorpusConfig cfg;
    cfg.out_dir = fresh_dir("mg_corpus_degen");
    cfg.seed = 5;
    cfg.images_per_cell = 2;
    cfg.image_size = 16;
    cfg.attributes = small_catalog();
    cfg.affinity = degenerate_affinity(cfg.attributes);
    CorpusManifest m = generate_corpus(cfg);
    Tensor counts = m.cell_counts();
    const std::int64_t k = 4;
    for (std::int64_t j = 0; j < k; ++j) {
        const int owner = cfg.attributes[static_cast<std::size_t>(j)].specific_emotion;
        if (owner < 0) continue;
        for (std::int64_t e = 0; e < kNumEmotions; ++e)
            if (e != owner) CHECK(counts[e * k + j] == 0.0);
        CHECK(counts[owner * k + j] == 2.0 * kNumEmotions);
    }
}

TEST_CASE("uniform affinity spreads an attribute over all emotions") {
    CorpusConfig cfg;
    cfg.out_dir = fresh_dir("mg_corpus_uniform");
    cfg.seed = 9;
    cfg.images_per_cell = 40;  // 320 images for the uniform column
    cfg.image_size = 8;
    cfg.attributes = {default_attributes()[16]};  // tree, agnostic
    CorpusManifest m = generate_corpus(cfg);
    Tensor counts = m.cell_counts();
    const double n = static_cast<double>(m.records.size());
    for (int e = 0; e < kNumEmotions; ++e) {
        const double frac = counts[e] / n;
        CHECK(frac > 0.125 - 0.06);
        CHECK(frac < 0.125 + 0.06);
    }
}

TEST_CASE("same seed regenerates byte-identical corpora") {
    CorpusConfig cfg;
    cfg.seed = 1;
    cfg.images_per_cell = 2;
    cfg.image_size = 16;
    cfg.attributes = small_catalog();

    cfg.out_dir = fresh_dir("mg_corpus_det_a");
    CorpusManifest a = generate_corpus(cfg);
    cfg.out_dir = fresh_dir("mg_corpus_det_b");
    CorpusManifest b = generate_corpus(cfg);

    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].path == b.records[i].path);
        CHECK(hash_file(a.root / a.records[i].path) == hash_file(b.root / b.records[i].path));
    }
    CHECK(hash_file(a.root / "manifest.jsonl") == hash_file(b.root / "manifest.jsonl"));
}

TEST_CASE("manifest round-trips through save and load") {
    CorpusConfig cfg;
    cfg.out_dir = fresh_dir("mg_corpus_rt");
    cfg.seed = 3;
    cfg.images_per_cell = 2;
    cfg.image_size = 16;
    cfg.attributes = small_catalog();
    CorpusManifest m = generate_corpus(cfg);
    CorpusManifest back = load_manifest(cfg.out_dir);

    CHECK(back.seed == m.seed);
    CHECK(back.image_size == m.image_size);
    CHECK(back.attributes.size() == m.attributes.size());
    REQUIRE(back.records.size() == m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        CHECK(back.records[i].path == m.records[i].path);
        CHECK(back.records[i].emotion == m.records[i].emotion);
        CHECK(back.records[i].attribute == m.records[i].attribute);
        CHECK(back.records[i].split == m.records[i].split);
    }
    for (std::int64_t i = 0; i < m.affinity.size(); ++i)
        CHECK(back.affinity[i] == m.affinity[i]);

    // Loading yields exactly N images, in manifest order, with valid pixels.
    auto images = load_images(back);
    REQUIRE(images.size() == back.records.size());
    for (const auto& li : images) {
        CHECK(li.pixels.shape() == std::vector<std::int64_t>{3, 16, 16});
        for (std::int64_t p = 0; p < li.pixels.size(); ++p) {
            CHECK(li.pixels[p] >= 0.0);
            CHECK(li.pixels[p] <= 1.0);
        }
    }
    auto train = load_images(back, Split::train);
    auto val = load_images(back, Split::val);
    CHECK(train.size() + val.size() == images.size());
}

TEST_CASE("load errors on missing or tampered corpora") {
    CHECK_THROWS_AS(load_manifest(fs::temp_directory_path() / "mg_corpus_nowhere"), IoError);

    CorpusConfig cfg;
    cfg.out_dir = fresh_dir("mg_corpus_tamper");
    cfg.seed = 3;
    cfg.images_per_cell = 1;
    cfg.image_size = 8;
    cfg.attributes = small_catalog();
    CorpusManifest m = generate_corpus(cfg);
    fs::remove(cfg.out_dir / m.records[0].path);
    CHECK_THROWS_AS(load_manifest(cfg.out_dir), IoError);
}

TEST_CASE("rendered colors track the emotion palette") {
    auto attrs = default_attributes();
    Rng rng(7);
    auto mean_channel = [&](int emotion, int channel) {
        double acc = 0.0;
        for (int trial = 0; trial < 4; ++trial) {
            Tensor img = render_image(attrs[0], 0, emotion, 16, rng);
            double s = 0.0;
            for (std::int64_t p = 0; p < 16 * 16; ++p) s += img[channel * 256 + p];
            acc += s / 256.0;
        }
        return acc / 4.0;
    };
    const int anger = emotion_index("anger");
    const int awe = emotion_index("awe");
    CHECK(mean_channel(anger, 0) > mean_channel(anger, 2));  // anger is red-heavy
    CHECK(mean_channel(awe, 2) > mean_channel(awe, 0));      // awe is blue-heavy
}

TEST_CASE("same attribute renders the same shape family across emotions") {
    auto attrs = default_attributes();
    // Two images of one attribute under different emotions share geometry
    // when given the same render rng, so the foreground masks coincide.
    // Use two emotions whose motif color is brighter than the background so
    // the brightness deviation has the same sign for both renders.
    Rng r1(11), r2(11);
    Tensor a = render_image(attrs[3], 3, emotion_index("anger"), 16, r1);
    Tensor b = render_image(attrs[3], 3, emotion_index("fear"), 16, r2);
    // Compare brightness-normalized structure: correlation of per-pixel
    // deviation from the image mean should be strongly positive.
    auto devs = [](const Tensor& t) {
        std::vector<double> d(256);
        double mean = 0.0;
        for (int p = 0; p < 256; ++p) {
            d[static_cast<std::size_t>(p)] = (t[p] + t[256 + p] + t[512 + p]) / 3.0;
            mean += d[static_cast<std::size_t>(p)];
        }
        mean /= 256.0;
        for (auto& v : d) v -= mean;
        return d;
    };
    auto da = devs(a), db = devs(b);
    double num = 0.0, na = 0.0, nb = 0.0;
    for (int p = 0; p < 256; ++p) {
        num += da[static_cast<std::size_t>(p)] * db[static_cast<std::size_t>(p)];
        na += da[static_cast<std::size_t>(p)] * da[static_cast<std::size_t>(p)];
        nb += db[static_cast<std::size_t>(p)] * db[static_cast<std::size_t>(p)];
    }
    CHECK(num / std::sqrt(na * nb) > 0.5);
}
