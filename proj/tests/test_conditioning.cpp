#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fixtures.hpp"
#include "moodgen/conditioning/conditioning.hpp"
#include "moodgen/emotion/emotion_space.hpp"
#include "moodgen/nn/adam.hpp"

using namespace moodgen;
using namespace moodgen::conditioning;
using corpus::Split;
using nn::Var;

TEST_CASE("cosine similarity identities") {
    Rng rng(4);
    Tensor p({9}), q({9});
    for (std::int64_t i = 0; i < 9; ++i) {
        p[i] = rng.normal();
        q[i] = rng.normal();
    }
    CHECK(cosine_similarity(p, p) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor a({4}), b({4});
    a[0] = 2.0;
    b[1] = -3.0;
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));

    Tensor p2 = p;
    for (std::int64_t i = 0; i < 9; ++i) p2[i] *= 2.0;
    CHECK(cosine_similarity(p2, q) == doctest::Approx(cosine_similarity(p, q)).epsilon(1e-12));

    Tensor z({4});
    CHECK_THROWS_AS(cosine_similarity(z, b), ValidationError);
    Tensor shorter({3});
    CHECK_THROWS_AS(cosine_similarity(shorter, b), ValidationError);
}

TEST_CASE("map_emotion is pure, unit-norm, and strict about dimensions") {
    const auto& emb = testfix::shared_embedder();
    MappingConfig mc;
    mc.emotion_dim = 64;
    mc.joint_dim = static_cast<int>(emb.config().dim);
    MappingNetwork mapping(mc);

    Rng rng(8);
    Tensor e({64});
    for (std::int64_t i = 0; i < 64; ++i) e[i] = rng.normal();

    ConditioningEmbedding c1 = map_emotion(mapping, emb, e);
    ConditioningEmbedding c2 = map_emotion(mapping, emb, e);
    CHECK(c1.token_sequence.shape() ==
          std::vector<std::int64_t>{mc.seed_tokens + 1, emb.config().dim});
    for (std::int64_t i = 0; i < c1.token_sequence.size(); ++i)
        CHECK(c1.token_sequence[i] == c2.token_sequence[i]);
    double norm = 0.0;
    for (std::int64_t i = 0; i < c1.v_emo.size(); ++i) {
        CHECK(c1.v_emo[i] == c2.v_emo[i]);
        norm += c1.v_emo[i] * c1.v_emo[i];
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor wrong({63});
    CHECK_THROWS_AS(map_emotion(mapping, emb, wrong), ValidationError);
}

TEST_CASE("attribute loss identities: aligned limit and uniform ln K") {
    // Orthonormal texts, v_emo on the true one, tiny temperature -> loss -> 0.
    const int k = 5, d = 8;
    Tensor texts({k, d});
    for (int j = 0; j < k; ++j) texts[j * d + j] = 1.0;
    Tensor v({d});
    v[2] = 1.0;
    double tiny = attribute_loss(Var::constant(v), texts, 2, 1e-3).value()[0];
    CHECK(tiny == doctest::Approx(0.0).epsilon(1e-9));

    // All texts identical -> all similarities equal -> ln K for any v_emo.
    Tensor same({k, d});
    Rng rng(17);
    for (int x = 0; x < d; ++x) same[x] = rng.normal();
    for (int j = 1; j < k; ++j)
        for (int x = 0; x < d; ++x) same[j * d + x] = same[x];
    Tensor anyv({d});
    for (int x = 0; x < d; ++x) anyv[x] = rng.normal();
    double flat = attribute_loss(Var::constant(anyv), same, 3, 0.07).value()[0];
    CHECK(flat == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));

    CHECK_THROWS_AS(attribute_loss(Var::constant(anyv), same, -1, 0.07), ValidationError);
    CHECK_THROWS_AS(attribute_loss(Var::constant(anyv), same, k, 0.07), ValidationError);
    CHECK_THROWS_AS(attribute_loss(Var::constant(anyv), same, 0, 0.0), ValidationError);
    Tensor one({1, d});
    one[0] = 1.0;
    CHECK_THROWS_AS(attribute_loss(Var::constant(anyv), one, 0, 0.07), ValidationError);
}

TEST_CASE("attribute loss matches a brute-force oracle, single and symmetric") {
    Rng rng(23);
    const int n = 4, k = 6, d = 10;
    Tensor texts({k, d}), vs({n, d});
    for (std::int64_t i = 0; i < texts.size(); ++i) texts[i] = rng.normal();
    for (std::int64_t i = 0; i < vs.size(); ++i) vs[i] = rng.normal();
    std::vector<std::int64_t> labels = {3, 0, 3, 5};
    const double temp = 0.3;

    // Brute-force similarity matrix.
    auto cosv = [&](const double* a, const double* b) {
        double ab = 0, aa = 0, bb = 0;
        for (int x = 0; x < d; ++x) {
            ab += a[x] * b[x];
            aa += a[x] * a[x];
            bb += b[x] * b[x];
        }
        return ab / (std::sqrt(aa) * std::sqrt(bb));
    };
    std::vector<std::vector<double>> sim(n, std::vector<double>(k));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            sim[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                cosv(vs.data() + i * d, texts.data() + j * d) / temp;
    auto xent = [](const std::vector<double>& logits, int label) {
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double z = 0;
        for (double v : logits) z += std::exp(v - mx);
        return -(logits[static_cast<std::size_t>(label)] - mx - std::log(z));
    };
    double fwd = 0;
    for (int i = 0; i < n; ++i)
        fwd += xent(sim[static_cast<std::size_t>(i)],
                    static_cast<int>(labels[static_cast<std::size_t>(i)]));
    fwd /= n;
    double got = attribute_loss_batch(Var::constant(vs), texts, labels, temp, false).value()[0];
    CHECK(got == doctest::Approx(fwd).epsilon(1e-9));

    double trans = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> col(n);
        for (int m = 0; m < n; ++m)
            col[static_cast<std::size_t>(m)] =
                sim[static_cast<std::size_t>(m)]
                   [static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        trans += xent(col, i);
    }
    trans /= n;
    double sym = attribute_loss_batch(Var::constant(vs), texts, labels, temp, true).value()[0];
    CHECK(sym == doctest::Approx(0.5 * (fwd + trans)).epsilon(1e-9));
}

TEST_CASE("attribute loss gradient matches finite differences") {
    Rng rng(31);
    const int k = 5, d = 8;
    Tensor texts({k, d}), v0({d});
    for (std::int64_t i = 0; i < texts.size(); ++i) texts[i] = rng.normal();
    for (std::int64_t i = 0; i < d; ++i) v0[i] = rng.normal();

    Var v = Var::leaf(v0);
    Var loss = attribute_loss(v, texts, 1, 0.3);
    backward(loss);
    const double h = 1e-5;
    for (std::int64_t i = 0; i < d; ++i) {
        Tensor plus = v0, minus = v0;
        plus[i] += h;
        minus[i] -= h;
        const double fp = attribute_loss(Var::constant(plus), texts, 1, 0.3).value()[0];
        const double fm = attribute_loss(Var::constant(minus), texts, 1, 0.3).value()[0];
        const double fd = (fp - fm) / (2.0 * h);
        CHECK(v.grad()[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("one gradient step moves v_emo toward the true attribute text") {
    Rng rng(57);
    const int k = 6, d = 16;
    const double temp = 0.5, lr = 1e-3;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor texts({k, d}), v0({d});
        for (std::int64_t i = 0; i < texts.size(); ++i) texts[i] = rng.normal();
        for (std::int64_t i = 0; i < d; ++i) v0[i] = rng.normal();
        const int truth = static_cast<int>(rng.uniform_int(k));

        Var v = Var::leaf(v0);
        backward(attribute_loss(v, texts, truth, temp));
        Tensor v1 = v0;
        for (std::int64_t i = 0; i < d; ++i) v1[i] -= lr * v.grad()[i];

        Tensor t({d});
        for (std::int64_t i = 0; i < d; ++i) t[i] = texts[truth * d + i];
        CHECK(cosine_similarity(v1, t) > cosine_similarity(v0, t));
    }
}

namespace {

// Minimal stage-2-style training of the mapping alone: pure attribute loss on
// frozen emotion features, the alpha = 1 corner of the combined objective.
void train_mapping(MappingNetwork& mapping, int steps) {
    const auto& emb = testfix::shared_embedder();
    const auto& enc = testfix::shared_emotion_encoder();
    const auto& manifest = testfix::shared_corpus();
    const auto train = testfix::shared_split(Split::train);
    Tensor texts = attribute_text_matrix(emb, manifest.attributes);

    std::vector<Tensor> pixels;
    for (const auto& li : train) pixels.push_back(li.pixels);
    Tensor feats = enc.features(pixels);  // [N, E]
    const auto e = feats.shape()[1];

    nn::Adam opt(mapping.params(), {.lr = 2e-3});
    Rng rng(91);
    const std::int64_t b = 32;
    for (int step = 0; step < steps; ++step) {
        Tensor batch({b, e});
        std::vector<std::int64_t> labels(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const auto pick = rng.uniform_int(train.size());
            std::copy(feats.data() + static_cast<std::int64_t>(pick) * e,
                      feats.data() + static_cast<std::int64_t>(pick + 1) * e,
                      batch.data() + i * e);
            labels[static_cast<std::size_t>(i)] = train[pick].attribute;
        }
        MappedBatch mapped = map_batch(mapping, emb, Var::constant(std::move(batch)));
        Var loss = attribute_loss_batch(mapped.v_emos, texts, labels, 0.07, false);
        REQUIRE(std::isfinite(loss.value()[0]));
        mapping.params().zero_grads();
        backward(loss);
        opt.step();
    }
}

}  // namespace

TEST_CASE("training the mapping never touches the frozen embedder") {
    const auto& emb = testfix::shared_embedder();
    const std::string before = emb.fingerprint();
    MappingNetwork mapping;
    const std::string fresh = mapping.fingerprint();
    train_mapping(mapping, 100);
    CHECK(emb.fingerprint() == before);       // text head + projection untouched
    CHECK(mapping.fingerprint() != fresh);    // the mapping itself did move
}

TEST_CASE("trained mapping disperses one emotion across several attributes") {
    const auto& emb = testfix::shared_embedder();
    const auto& enc = testfix::shared_emotion_encoder();
    const auto& manifest = testfix::shared_corpus();
    auto stats = emotion::fit_clusters(enc, testfix::shared_split(Split::train));
    Tensor texts = attribute_text_matrix(emb, manifest.attributes);
    const auto k = texts.shape()[0];
    const auto d = texts.shape()[1];

    MappingNetwork mapping;
    train_mapping(mapping, 1000);

    int emotions_dispersed = 0;
    for (int e = 0; e < corpus::kNumEmotions; ++e) {
        Rng rng(derive_seed(1234, static_cast<std::uint64_t>(e)));
        std::set<std::int64_t> nearest;
        for (int s = 0; s < 64; ++s) {
            Tensor sample = emotion::sample_emotion(stats, e, rng);
            ConditioningEmbedding ce = map_emotion(mapping, emb, sample);
            std::int64_t best = 0;
            double bs = -2.0;
            for (std::int64_t j = 0; j < k; ++j) {
                Tensor t({d});
                for (std::int64_t x = 0; x < d; ++x) t[x] = texts[j * d + x];
                const double c = cosine_similarity(ce.v_emo, t);
                if (c > bs) {
                    bs = c;
                    best = j;
                }
            }
            nearest.insert(best);
        }
        if (nearest.size() >= 2) ++emotions_dispersed;
    }
    INFO("emotions with >= 2 nearest attributes: ", emotions_dispersed);
    CHECK(emotions_dispersed >= 6);  // dispersal holds broadly, not just once
}

TEST_CASE("mapping checkpoint round-trips exactly and rejects foreign files") {
    MappingNetwork mapping;
    train_mapping(mapping, 20);
    const auto path = std::filesystem::temp_directory_path() / "mg_mapping_ckpt.bin";
    mapping.save(path, testfix::shared_embedder().fingerprint());
    MappingNetwork back = MappingNetwork::load(path);
    CHECK(back.fingerprint() == mapping.fingerprint());

    Rng rng(3);
    Tensor e({64});
    for (std::int64_t i = 0; i < 64; ++i) e[i] = rng.normal();
    ConditioningEmbedding a = map_emotion(mapping, testfix::shared_embedder(), e);
    ConditioningEmbedding b = map_emotion(back, testfix::shared_embedder(), e);
    for (std::int64_t i = 0; i < a.v_emo.size(); ++i) CHECK(a.v_emo[i] == b.v_emo[i]);

    const auto foreign = std::filesystem::temp_directory_path() / "mg_emotion_ckpt.bin";
    if (std::filesystem::exists(foreign)) CHECK_THROWS_AS(MappingNetwork::load(foreign), IoError);
    CHECK_THROWS_AS(MappingNetwork::load(std::filesystem::temp_directory_path() / "mg_nope.bin"),
                    IoError);
}
