#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "moodgen/confidence/confidence.hpp"

using namespace moodgen;
using namespace moodgen::confidence;
using corpus::Split;

namespace {

const ConfidenceMatrix& shared_matrix() {
    static const ConfidenceMatrix m =
        compute_confidence(testfix::shared_emotion_encoder(), testfix::shared_corpus(),
                           testfix::shared_split(Split::train));
    return m;
}

}  // namespace

TEST_CASE("uniform classifier yields alpha = 1/8 everywhere") {
    emotion::EmotionEncoder blank;  // untrained
    // Zeroing every parameter makes all logits zero -> uniform softmax.
    for (const auto& [name, var] : blank.params().items()) {
        (void)name;
        nn::Var v = var;  // shares the underlying node
        v.value().fill(0.0);
    }
    auto some = testfix::shared_split(Split::train);
    some.resize(40);
    auto m = compute_confidence(blank, testfix::shared_corpus(), some);
    const auto k = m.alpha.shape()[1];
    for (std::int64_t j = 0; j < k; ++j) {
        if (!m.present[static_cast<std::size_t>(j)]) continue;
        for (int i = 0; i < corpus::kNumEmotions; ++i)
            CHECK(m.lookup(i, static_cast<int>(j)) == doctest::Approx(0.125).epsilon(1e-12));
    }
}

TEST_CASE("columns are stochastic and absent attributes fall back to zero") {
    const auto& m = shared_matrix();
    const auto k = m.alpha.shape()[1];
    std::int64_t total = 0;
    for (std::int64_t j = 0; j < k; ++j) {
        REQUIRE(m.present[static_cast<std::size_t>(j)]);
        double sum = 0.0;
        for (int i = 0; i < corpus::kNumEmotions; ++i) {
            const double a = m.lookup(i, static_cast<int>(j));
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            sum += a;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        total += m.counts[static_cast<std::size_t>(j)];
    }
    CHECK(total == static_cast<std::int64_t>(testfix::shared_split(Split::train).size()));

    // Drop every image of attribute 4, recompute: that column must be absent.
    std::vector<corpus::LabeledImage> filtered;
    for (const auto& li : testfix::shared_split(Split::train))
        if (li.attribute != 4) filtered.push_back(li);
    auto m2 = compute_confidence(testfix::shared_emotion_encoder(), testfix::shared_corpus(),
                                 filtered);
    CHECK_FALSE(m2.present[4]);
    CHECK(m2.counts[4] == 0);
    for (int i = 0; i < corpus::kNumEmotions; ++i) CHECK(m2.lookup(i, 4) == 0.0);

    CHECK_THROWS_AS(m.lookup(-1, 0), ValidationError);
    CHECK_THROWS_AS(m.lookup(0, static_cast<int>(k)), ValidationError);
}

TEST_CASE("matches an unbatched brute-force oracle") {
    const auto& enc = testfix::shared_emotion_encoder();
    const auto& manifest = testfix::shared_corpus();
    auto images = testfix::shared_split(Split::train);
    images.resize(120);  // keep the per-image pass cheap
    auto m = compute_confidence(enc, manifest, images);

    const auto k = static_cast<std::int64_t>(manifest.attributes.size());
    const int c = corpus::kNumEmotions;
    for (std::int64_t j = 0; j < k; ++j) {
        std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
        int n = 0;
        for (const auto& li : images) {
            if (li.attribute != j) continue;
            Tensor lg = enc.logits({li.pixels});  // one image at a time
            double mx = lg[0];
            for (int i = 1; i < c; ++i) mx = std::max(mx, lg[i]);
            double z = 0.0;
            for (int i = 0; i < c; ++i) z += std::exp(lg[i] - mx);
            for (int i = 0; i < c; ++i) acc[static_cast<std::size_t>(i)] += std::exp(lg[i] - mx) / z;
            ++n;
        }
        if (n == 0) {
            CHECK_FALSE(m.present[static_cast<std::size_t>(j)]);
            continue;
        }
        for (int i = 0; i < c; ++i)
            CHECK(m.lookup(i, static_cast<int>(j)) ==
                  doctest::Approx(acc[static_cast<std::size_t>(i)] / n).epsilon(1e-6));
    }
}

TEST_CASE("permuting image order leaves alpha bit-identical") {
    const auto& enc = testfix::shared_emotion_encoder();
    const auto& manifest = testfix::shared_corpus();
    auto images = testfix::shared_split(Split::train);
    auto m1 = compute_confidence(enc, manifest, images);

    Rng rng(77);
    rng.shuffle(images);
    auto m2 = compute_confidence(enc, manifest, images);
    for (std::int64_t i = 0; i < m1.alpha.size(); ++i) CHECK(m1.alpha[i] == m2.alpha[i]);
}

TEST_CASE("degenerate affinity corpus concentrates alpha on the owning emotion") {
    using namespace corpus;
    CorpusConfig cc;
    cc.out_dir = std::filesystem::temp_directory_path() / "mg_conf_degenerate";
    cc.seed = 9;
    cc.images_per_cell = 6;
    cc.affinity = degenerate_affinity(default_attributes());
    std::filesystem::remove_all(cc.out_dir);
    auto manifest = generate_corpus(cc);
    auto train = load_images(manifest, Split::train);

    emotion::EmotionEncoderConfig ec;
    ec.steps = 150;
    emotion::EmotionEncoder enc(ec);
    enc.train(train);

    auto m = compute_confidence(enc, manifest, train);
    int checked = 0;
    for (std::size_t j = 0; j < manifest.attributes.size(); ++j) {
        const int owner = manifest.attributes[j].specific_emotion;
        if (owner < 0) continue;  // agnostic attributes keep uniform affinity
        CHECK(m.lookup(owner, static_cast<int>(j)) >= 0.9);
        ++checked;
    }
    CHECK(checked == 16);
}

TEST_CASE("argmax alpha recovers the corpus affinity argmax for specific attributes") {
    const auto& m = shared_matrix();
    const auto& manifest = testfix::shared_corpus();
    const auto k = static_cast<std::int64_t>(manifest.attributes.size());
    int specific = 0, agree = 0;
    for (std::int64_t j = 0; j < k; ++j) {
        if (manifest.attributes[static_cast<std::size_t>(j)].specific_emotion < 0) continue;
        ++specific;
        int bestA = 0, bestAff = 0;
        for (int i = 1; i < corpus::kNumEmotions; ++i) {
            if (m.lookup(i, static_cast<int>(j)) > m.lookup(bestA, static_cast<int>(j))) bestA = i;
            if (manifest.affinity[static_cast<std::size_t>(i * k + j)] >
                manifest.affinity[static_cast<std::size_t>(bestAff * k + j)])
                bestAff = i;
        }
        if (bestA == bestAff) ++agree;
    }
    REQUIRE(specific == 16);
    CHECK(static_cast<double>(agree) / specific >= 0.9);
}

TEST_CASE("specific attributes concentrate, agnostic attributes stay flat") {
    const auto& m = shared_matrix();
    const auto& manifest = testfix::shared_corpus();
    for (std::size_t j = 0; j < manifest.attributes.size(); ++j) {
        double mx = 0.0;
        for (int i = 0; i < corpus::kNumEmotions; ++i)
            mx = std::max(mx, m.lookup(i, static_cast<int>(j)));
        // Expected peak for a specific attribute is its 0.65 affinity share;
        // the floor leaves room for per-attribute sampling variation.
        if (manifest.attributes[j].specific_emotion < 0)
            CHECK(mx <= 0.35);
        else
            CHECK(mx >= 0.55);
    }
}

TEST_CASE("csv table round-trips exactly") {
    const auto& m = shared_matrix();
    const auto path = std::filesystem::temp_directory_path() / "mg_confidence.csv";
    m.save(path);
    auto back = ConfidenceMatrix::load(path);
    CHECK(back.classifier_fingerprint == m.classifier_fingerprint);
    CHECK(back.attribute_names == m.attribute_names);
    CHECK(back.counts == m.counts);
    for (std::int64_t i = 0; i < m.alpha.size(); ++i) CHECK(back.alpha[i] == m.alpha[i]);

    CHECK_THROWS_AS(ConfidenceMatrix::load(std::filesystem::temp_directory_path() / "mg_no.csv"),
                    IoError);
}
