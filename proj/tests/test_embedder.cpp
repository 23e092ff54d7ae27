#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "moodgen/core/check.hpp"

using namespace moodgen;
using namespace moodgen::embedder;
using corpus::LabeledImage;
using corpus::Split;

namespace {

double cosine(const Tensor& a, const Tensor& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return num / std::sqrt(na * nb);
}

Tensor mean_image_embedding(const JointEmbedder& e, const std::vector<LabeledImage>& images,
                            int attribute) {
    Tensor acc({e.config().dim});
    int n = 0;
    for (const auto& li : images) {
        if (li.attribute != attribute) continue;
        Tensor v = e.embed_image(li.pixels);
        for (std::int64_t i = 0; i < v.size(); ++i) acc[i] += v[i];
        ++n;
    }
    REQUIRE(n > 0);
    for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] /= n;
    return acc;
}

}  // namespace

TEST_CASE("training requires at least two attributes") {
    const auto& manifest = testfix::shared_corpus();
    std::vector<LabeledImage> one;
    for (const auto& li : testfix::shared_images())
        if (li.attribute == 0) {
            one.push_back(li);
            break;
        }
    EmbedderConfig cfg;
    cfg.steps = 1;
    JointEmbedder e(cfg, JointEmbedder::build_vocab(manifest.attributes));
    CHECK_THROWS_AS(e.train(one, manifest.attributes), ValidationError);
}

TEST_CASE("text embeddings are pure, unit norm, and reject oov tokens") {
    const auto& e = testfix::shared_embedder();
    Tensor a = e.embed_text("ocean");
    Tensor b = e.embed_text("ocean");
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    double norm = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) norm += a[i] * a[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cosine(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(e.embed_text("tiger"), ValidationError);
    // Transfer words outside the attribute catalog still tokenize.
    CHECK_NOTHROW(e.embed_text("house"));
}

TEST_CASE("image embeddings are unit norm and pure") {
    const auto& e = testfix::shared_embedder();
    Tensor black = Tensor::zeros({3, 32, 32});
    Tensor va = e.embed_image(black);
    Tensor vb = e.embed_image(black);
    CHECK(cosine(va, vb) == doctest::Approx(1.0).epsilon(1e-12));
    const auto& img = testfix::shared_images()[0].pixels;
    Tensor v = e.embed_image(img);
    double norm = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) norm += v[i] * v[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("trained space aligns text with matching image features") {
    const auto& e = testfix::shared_embedder();
    const auto& manifest = testfix::shared_corpus();
    auto val = testfix::shared_split(Split::val);
    const int ocean = corpus::attribute_index(manifest.attributes, "ocean");
    const int toy = corpus::attribute_index(manifest.attributes, "toy");
    Tensor ocean_mean = mean_image_embedding(e, val, ocean);
    Tensor toy_mean = mean_image_embedding(e, val, toy);
    Tensor ocean_text = e.embed_text("ocean");
    CHECK(cosine(ocean_text, ocean_mean) > cosine(ocean_text, toy_mean));
}

TEST_CASE("val retrieval accuracy meets the pinned threshold") {
    const auto& e = testfix::shared_embedder();
    const auto& manifest = testfix::shared_corpus();
    auto val = testfix::shared_split(Split::val);
    REQUIRE(val.size() > 50);
    std::vector<Tensor> texts;
    for (const auto& a : manifest.attributes) texts.push_back(e.embed_text(a.name));
    int hits = 0;
    for (const auto& li : val) {
        Tensor v = e.embed_image(li.pixels);
        int best = 0;
        double best_sim = -2.0;
        for (std::size_t j = 0; j < texts.size(); ++j) {
            const double s = cosine(v, texts[j]);
            if (s > best_sim) {
                best_sim = s;
                best = static_cast<int>(j);
            }
        }
        if (best == li.attribute) ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(val.size());
    INFO("retrieval accuracy ", acc);
    CHECK(acc >= 0.90);
}

TEST_CASE("intra-attribute image pairs are closer than inter-attribute pairs") {
    const auto& e = testfix::shared_embedder();
    auto val = testfix::shared_split(Split::val);
    std::vector<Tensor> feats;
    std::vector<int> attrs;
    for (std::size_t i = 0; i < val.size() && i < 120; ++i) {
        feats.push_back(e.embed_image(val[i].pixels));
        attrs.push_back(val[i].attribute);
    }
    double intra = 0.0, inter = 0.0;
    int n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t j = i + 1; j < feats.size(); ++j) {
            const double c = cosine(feats[i], feats[j]);
            if (attrs[i] == attrs[j]) {
                intra += c;
                ++n_intra;
            } else {
                inter += c;
                ++n_inter;
            }
        }
    REQUIRE(n_intra > 0);
    REQUIRE(n_inter > 0);
    CHECK(intra / n_intra > inter / n_inter);
}

TEST_CASE("same seed trains to identical parameters") {
    const auto& manifest = testfix::shared_corpus();
    const auto full = testfix::shared_split(Split::train);
    std::vector<corpus::LabeledImage> train;  // small multi-attribute subsample
    for (std::size_t i = 0; i < full.size(); i += 20) train.push_back(full[i]);
    EmbedderConfig cfg;
    cfg.steps = 12;
    auto vocab = JointEmbedder::build_vocab(manifest.attributes);
    JointEmbedder a(cfg, vocab);
    a.train(train, manifest.attributes);
    JointEmbedder b(cfg, vocab);
    b.train(train, manifest.attributes);
    CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("checkpoint save and load preserve behavior exactly") {
    const auto& e = testfix::shared_embedder();
    const auto path = std::filesystem::temp_directory_path() / "mg_embedder_ckpt.bin";
    e.save(path, "fixture-corpus");
    JointEmbedder back = JointEmbedder::load(path);
    CHECK(back.fingerprint() == e.fingerprint());
    Tensor t0 = e.embed_text("mountain_snowy");
    Tensor t1 = back.embed_text("mountain_snowy");
    for (std::int64_t i = 0; i < t0.size(); ++i) CHECK(t0[i] == t1[i]);
    const auto& img = testfix::shared_images()[3].pixels;
    Tensor v0 = e.embed_image(img);
    Tensor v1 = back.embed_image(img);
    for (std::int64_t i = 0; i < v0.size(); ++i) CHECK(v0[i] == v1[i]);
    std::filesystem::remove(path);
}

TEST_CASE("token outputs keep sequence length and feed the end token") {
    const auto& e = testfix::shared_embedder();
    Tensor seq = e.text_token_outputs("ocean");
    CHECK(seq.shape() == std::vector<std::int64_t>{2, e.config().dim});  // word + <end>
    Tensor longer = e.text_token_outputs("ocean toy");
    CHECK(longer.shape() == std::vector<std::int64_t>{3, e.config().dim});
}
