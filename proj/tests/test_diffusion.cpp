#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "moodgen/confidence/confidence.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/diffusion/generator.hpp"

using namespace moodgen;
using nn::Var;

namespace {

diffusion::DenoiserConfig tiny_denoiser_config() {
    diffusion::DenoiserConfig d;
    d.channels = {8, 16};
    d.groups = 4;
    d.time_dim = 8;
    d.cond_dim = 12;
    d.context_dim = 6;
    d.attn_dim = 5;
    d.seed = 77;
    return d;
}

Tensor random_tensor(const std::vector<std::int64_t>& shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
    return t;
}

// Everything a micro training run needs, derived once from the shared corpus.
struct GenFixture {
    std::vector<corpus::LabeledImage> train;
    emotion::EmotionClusterStats clusters;
    confidence::ConfidenceMatrix confidence;
};

const GenFixture& gen_fixture() {
    static const GenFixture f = [] {
        GenFixture g;
        const auto full = testfix::shared_split(corpus::Split::train);
        for (std::size_t i = 0; i < full.size(); i += 6) g.train.push_back(full[i]);
        const auto& encoder = testfix::shared_emotion_encoder();
        g.clusters = emotion::fit_clusters(encoder, g.train);
        g.confidence = confidence::compute_confidence(encoder, testfix::shared_corpus(), testfix::shared_images());
        return g;
    }();
    return f;
}

diffusion::GeneratorConfig micro_config() {
    diffusion::GeneratorConfig cfg;
    cfg.timesteps = 25;
    cfg.beta_end = 0.3;
    cfg.denoiser.channels = {8, 16};
    cfg.denoiser.groups = 4;
    cfg.denoiser.time_dim = 8;
    cfg.denoiser.cond_dim = 16;
    cfg.denoiser.attn_dim = 8;
    cfg.denoiser.context_dim = 64;
    cfg.mapping.hidden_mult = 1;
    cfg.steps = 6;
    cfg.batch_size = 4;
    cfg.seed = 99;
    return cfg;
}

diffusion::TrainState micro_train(const diffusion::GeneratorConfig& cfg,
                                  const confidence::ConfidenceMatrix& conf,
                                  const std::filesystem::path& out_dir = {}) {
    const auto& f = gen_fixture();
    return diffusion::train_generator(f.train, testfix::shared_emotion_encoder(), f.clusters,
                                      testfix::shared_embedder(), conf, cfg, out_dir);
}

}  // namespace

TEST_CASE("noise schedule identities hold and bad schedules are rejected") {
    const auto s = diffusion::NoiseSchedule::linear();
    CHECK(s.steps == 200);
    CHECK(s.alpha_bar(0) == 1.0);
    double bar = 1.0;
    for (std::int64_t t = 1; t <= s.steps; ++t) {
        CHECK(s.beta(t) > 0.0);
        CHECK(s.beta(t) < 1.0);
        if (t > 1) CHECK(s.beta(t) > s.beta(t - 1));
        CHECK(s.alpha(t) == 1.0 - s.beta(t));
        bar *= s.alpha(t);
        CHECK(s.alpha_bar(t) == bar);  // same accumulation order as the oracle
        CHECK(s.alpha_bar(t) > 0.0);
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    // The default chain must end in near-pure noise.
    CHECK(s.alpha_bar(s.steps) < 0.01);

    // A shorter schedule for fast runs can still hit the same terminal bound.
    const auto fast = diffusion::NoiseSchedule::linear(100, 1e-4, 0.1);
    CHECK(fast.alpha_bar(100) < 0.01);

    CHECK_THROWS_AS(diffusion::NoiseSchedule::linear(1), ValidationError);
    CHECK_THROWS_AS(diffusion::NoiseSchedule::linear(10, 0.0, 0.1), ValidationError);
    CHECK_THROWS_AS(diffusion::NoiseSchedule::linear(10, 1e-4, 1.0), ValidationError);
    CHECK_THROWS_AS(diffusion::NoiseSchedule::linear(10, 0.2, 0.1), ValidationError);
    CHECK_THROWS_AS(s.alpha_bar(201), ValidationError);
    CHECK_THROWS_AS(s.beta(0), ValidationError);
}

TEST_CASE("forward noising matches the closed form and both limits") {
    Rng rng(5);
    const Tensor x0 = random_tensor({2, 3, 3}, rng);

    SUBCASE("closed form with the returned noise") {
        const auto s = diffusion::NoiseSchedule::linear(50, 1e-3, 0.2);
        auto ns = diffusion::forward_noise(s, x0, 23, rng);
        const double bar = s.alpha_bar(23);
        for (std::int64_t i = 0; i < x0.size(); ++i) {
            const double want =
                std::sqrt(bar) * x0.data()[i] + std::sqrt(1.0 - bar) * ns.eps.data()[i];
            CHECK(ns.z.data()[i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
    SUBCASE("near-identity schedule keeps the image") {
        const auto s = diffusion::NoiseSchedule::linear(10, 1e-9, 1e-8);
        auto ns = diffusion::forward_noise(s, x0, 10, rng);
        for (std::int64_t i = 0; i < x0.size(); ++i)
            CHECK(std::abs(ns.z.data()[i] - x0.data()[i]) < 1e-3);
    }
    SUBCASE("saturated schedule leaves pure noise") {
        const auto s = diffusion::NoiseSchedule::linear(20, 0.9, 0.998);
        auto ns = diffusion::forward_noise(s, x0, 20, rng);
        for (std::int64_t i = 0; i < x0.size(); ++i)
            CHECK(std::abs(ns.z.data()[i] - ns.eps.data()[i]) < 1e-6);
    }
    SUBCASE("step range is enforced") {
        const auto s = diffusion::NoiseSchedule::linear(10, 1e-4, 0.2);
        CHECK_THROWS_AS(diffusion::forward_noise(s, x0, 0, rng), ValidationError);
        CHECK_THROWS_AS(diffusion::forward_noise(s, x0, 11, rng), ValidationError);
    }
}

TEST_CASE("noised sample variance matches the schedule over many draws") {
    const auto s = diffusion::NoiseSchedule::linear();
    const std::int64_t t = 120;
    Tensor x0({4});
    x0.fill(0.37);
    Rng rng(17);
    const double mean = std::sqrt(s.alpha_bar(t)) * 0.37;
    double acc = 0.0;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        auto ns = diffusion::forward_noise(s, x0, t, rng);
        for (std::int64_t i = 0; i < x0.size(); ++i) {
            const double dev = ns.z.data()[i] - mean;
            acc += dev * dev;
        }
    }
    const double var = acc / static_cast<double>(draws * x0.size());
    const double want = 1.0 - s.alpha_bar(t);
    CHECK(std::abs(var - want) / want < 0.05);
}

TEST_CASE("denoiser preserves shape, starts at zero and is reproducible") {
    const auto cfg = tiny_denoiser_config();
    diffusion::Denoiser den(cfg);
    Rng rng(3);
    const Tensor z = random_tensor({2, 3, 8, 8}, rng);
    const std::vector<Var> tokens = {Var::constant(random_tensor({3, 6}, rng)),
                                     Var::constant(random_tensor({4, 6}, rng))};
    Var out = den.forward(Var::constant(z), {1, 13}, tokens);
    CHECK(out.value().shape() == z.shape());
    for (std::int64_t i = 0; i < out.value().size(); ++i)
        CHECK(out.value().data()[i] == 0.0);  // zero-initialized output head

    diffusion::Denoiser same(cfg);
    CHECK(same.fingerprint() == den.fingerprint());
    auto other_cfg = cfg;
    other_cfg.seed = 78;
    diffusion::Denoiser other(other_cfg);
    CHECK(other.fingerprint() != den.fingerprint());

    CHECK_THROWS_AS(den.forward(Var::constant(random_tensor({2, 4, 8, 8}, rng)), {1, 2}, tokens),
                    ValidationError);
    CHECK_THROWS_AS(den.forward(Var::constant(random_tensor({2, 3, 7, 7}, rng)), {1, 2}, tokens),
                    ValidationError);
    CHECK_THROWS_AS(den.forward(Var::constant(z), {1}, tokens), ValidationError);
    CHECK_THROWS_AS(den.forward(Var::constant(z), {0, 2}, tokens), ValidationError);
    const std::vector<Var> bad_tokens = {Var::constant(random_tensor({3, 5}, rng)),
                                         Var::constant(random_tensor({3, 5}, rng))};
    CHECK_THROWS_AS(den.forward(Var::constant(z), {1, 2}, bad_tokens), ValidationError);
}

TEST_CASE("noise prediction loss identities") {
    Rng rng(11);

    SUBCASE("an oracle predictor scores zero") {
        const Tensor eps = random_tensor({2, 3, 4, 4}, rng);
        Var loss = diffusion::ldm_loss_from_prediction(Var::constant(eps), eps);
        CHECK(loss.value().data()[0] == 0.0);
    }
    SUBCASE("the zero predictor scores the mean squared noise") {
        diffusion::Denoiser den(tiny_denoiser_config());
        const Tensor z = random_tensor({3, 16, 16}, rng);
        const Tensor eps = random_tensor({3, 16, 16}, rng);
        conditioning::ConditioningEmbedding ce;
        ce.token_sequence = random_tensor({4, 6}, rng);
        Var loss = diffusion::ldm_loss(den, z, 5, ce, eps);

        double want = 0.0;
        for (std::int64_t i = 0; i < eps.size(); ++i) want += eps.data()[i] * eps.data()[i];
        want /= static_cast<double>(eps.size());
        CHECK(loss.value().data()[0] == doctest::Approx(want).epsilon(1e-12));
        // and for standard-normal noise that mean sits near one
        CHECK(std::abs(loss.value().data()[0] - 1.0) < 0.25);
    }
    SUBCASE("per-sample losses average to the scalar loss") {
        const Tensor eps = random_tensor({3, 2, 5}, rng);
        const Tensor pred = random_tensor({3, 2, 5}, rng);
        Var rows = diffusion::ldm_loss_per_sample(Var::constant(pred), eps);
        Var scalar = diffusion::ldm_loss_from_prediction(Var::constant(pred), eps);
        double mean = 0.0;
        for (std::int64_t i = 0; i < 3; ++i) mean += rows.value().data()[i];
        CHECK(scalar.value().data()[0] == doctest::Approx(mean / 3.0).epsilon(1e-12));
    }
    SUBCASE("shape mismatches are rejected") {
        const Tensor eps = random_tensor({2, 3}, rng);
        const Tensor pred = random_tensor({3, 2}, rng);
        CHECK_THROWS_AS(diffusion::ldm_loss_from_prediction(Var::constant(pred), eps),
                        ValidationError);
    }
}

TEST_CASE("noise loss gradient matches finite differences on a scalar denoiser") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor z = random_tensor({1, 2, 4, 4}, rng);
        const Tensor eps = random_tensor({1, 2, 4, 4}, rng);
        const double theta0 = rng.normal();

        auto loss_at = [&](double theta, bool needs_grad) {
            Var th = needs_grad ? Var::leaf(Tensor::scalar(theta).reshaped({1, 1}))
                                : Var::constant(Tensor::scalar(theta).reshaped({1, 1}));
            Var flat = Var::constant(z.reshaped({z.size(), 1}));
            Var pred = nn::reshape(nn::matmul(flat, th), z.shape());
            return std::pair<Var, Var>(diffusion::ldm_loss_from_prediction(pred, eps), th);
        };

        auto [loss, th] = loss_at(theta0, true);
        nn::backward(loss);
        const double analytic = th.grad().data()[0];

        const double h = 1e-5;
        const double up = loss_at(theta0 + h, false).first.value().data()[0];
        const double dn = loss_at(theta0 - h, false).first.value().data()[0];
        const double fd = (up - dn) / (2.0 * h);
        CHECK(std::abs(analytic - fd) / (std::abs(analytic) + std::abs(fd) + 1e-8) < 1e-4);

        // closed form: d/dtheta mean((theta z - eps)^2) = mean(2 (theta z - eps) z)
        double closed = 0.0;
        for (std::int64_t i = 0; i < z.size(); ++i)
            closed += 2.0 * (theta0 * z.data()[i] - eps.data()[i]) * z.data()[i];
        closed /= static_cast<double>(z.size());
        CHECK(analytic == doctest::Approx(closed).epsilon(1e-9));
    }
}

TEST_CASE("full denoiser gradients match finite differences") {
    auto cfg = tiny_denoiser_config();
    diffusion::Denoiser den(cfg);
    Rng rng(31);
    // The zero-initialized heads block gradient flow upstream; perturb every
    // parameter so the check exercises the whole graph.
    for (const auto& [name, var] : den.params().items()) {
        Var v = var;
        for (std::int64_t i = 0; i < v.value().size(); ++i)
            v.value().data()[i] += 0.05 * rng.normal();
    }

    const Tensor z = random_tensor({1, 3, 8, 8}, rng);
    const Tensor eps = random_tensor({1, 3, 8, 8}, rng);
    Var tokens = Var::leaf(random_tensor({2, 6}, rng));

    auto loss_value = [&] {
        Var out = den.forward(Var::constant(z), {3}, {tokens});
        return diffusion::ldm_loss_from_prediction(out, eps);
    };

    Var loss = loss_value();
    den.params().zero_grads();
    nn::backward(loss);

    const auto& items = den.params().items();
    std::vector<std::pair<Var, std::int64_t>> probes;
    for (std::size_t p = 0; p < items.size(); p += items.size() / 5)
        probes.emplace_back(items[p].second, items[p].second.value().size() / 2);
    probes.emplace_back(tokens, 4);  // gradient into the conditioning tokens

    const double h = 1e-5;
    for (auto& [var, at] : probes) {
        const double analytic = var.grad().data()[at];
        const double keep = var.value().data()[at];
        var.value().data()[at] = keep + h;
        const double up = loss_value().value().data()[0];
        var.value().data()[at] = keep - h;
        const double dn = loss_value().value().data()[0];
        var.value().data()[at] = keep;
        const double fd = (up - dn) / (2.0 * h);
        CHECK(std::abs(analytic - fd) / (std::abs(analytic) + std::abs(fd) + 1e-8) < 1e-4);
    }
}

TEST_CASE("combined loss endpoints, affine behavior and range checks") {
    CHECK(diffusion::combined_loss(1.7, 9.9, 0.0) == 1.7);
    CHECK(diffusion::combined_loss(1.7, 9.9, 1.0) == 9.9);
    CHECK(diffusion::combined_loss(2.0, 4.0, 0.5) == doctest::Approx(3.0).epsilon(1e-15));

    Rng rng(41);
    for (int i = 0; i < 10; ++i) {
        const double ldm = rng.normal(), attr = rng.normal();
        const double a1 = rng.uniform(), a2 = rng.uniform();
        const double lhs = diffusion::combined_loss(ldm, attr, a2) -
                           diffusion::combined_loss(ldm, attr, a1);
        CHECK(lhs == doctest::Approx((a2 - a1) * (attr - ldm)).epsilon(1e-12));
    }

    CHECK_THROWS_AS(diffusion::combined_loss(1.0, 1.0, -0.01), ValidationError);
    CHECK_THROWS_AS(diffusion::combined_loss(1.0, 1.0, 1.01), ValidationError);
}

TEST_CASE("micro training run honors the recorded contracts") {
    const auto& f = gen_fixture();
    const auto& encoder = testfix::shared_emotion_encoder();
    const auto& emb = testfix::shared_embedder();
    const std::string enc_fp = encoder.fingerprint();
    const std::string emb_fp = emb.fingerprint();

    const auto out_dir = std::filesystem::temp_directory_path() / "mg_gen_micro";
    std::filesystem::remove_all(out_dir);
    auto cfg = micro_config();
    auto state = micro_train(cfg, f.confidence, out_dir);

    CHECK(state.step() == cfg.steps);
    REQUIRE(state.history().size() == static_cast<std::size_t>(cfg.steps));
    for (std::size_t i = 0; i < state.history().size(); ++i) {
        const auto& row = state.history()[i];
        CHECK(row.step == static_cast<std::int64_t>(i) + 1);
        CHECK(std::isfinite(row.total));
        CHECK(row.alpha >= 0.0);
        CHECK(row.alpha <= 1.0);
    }
    CHECK(encoder.fingerprint() == enc_fp);
    CHECK(emb.fingerprint() == emb_fp);
    CHECK(std::filesystem::exists(out_dir / "checkpoint.bin"));
    std::ifstream csv(out_dir / "loss.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,ldm,attr,alpha,total");
    int rows = 0;
    for (std::string line; std::getline(csv, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == cfg.steps);

    SUBCASE("a fixed loss weight overrides the confidence lookup") {
        auto fixed = micro_config();
        fixed.fixed_alpha = 0.5;
        fixed.steps = 2;
        auto st = micro_train(fixed, f.confidence);
        for (const auto& row : st.history()) {
            CHECK(row.alpha == 0.5);
            // with uniform weights the batch total separates exactly
            CHECK(row.total ==
                  doctest::Approx(0.5 * row.ldm + 0.5 * row.attr).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero confidence trains exactly like the pure noise objective") {
    const auto& f = gen_fixture();
    auto conf_zero = f.confidence;
    conf_zero.alpha.fill(0.0);

    auto cfg = micro_config();
    cfg.steps = 5;
    auto with_attr_graph = micro_train(cfg, conf_zero);

    auto cfg_plain = cfg;
    cfg_plain.train_attr_loss = false;
    auto pure = micro_train(cfg_plain, f.confidence);

    CHECK(with_attr_graph.denoiser().fingerprint() == pure.denoiser().fingerprint());
    CHECK(with_attr_graph.mapping().fingerprint() == pure.mapping().fingerprint());
    REQUIRE(with_attr_graph.history().size() == pure.history().size());
    for (std::size_t i = 0; i < pure.history().size(); ++i)
        CHECK(with_attr_graph.history()[i].total == pure.history()[i].total);
}

TEST_CASE("checkpointed training resumes the exact trajectory") {
    const auto& f = gen_fixture();
    const auto& encoder = testfix::shared_emotion_encoder();
    const auto& emb = testfix::shared_embedder();

    auto cfg = micro_config();
    cfg.steps = 8;
    auto one_shot = micro_train(cfg, f.confidence);

    auto cfg_half = cfg;
    cfg_half.steps = 4;
    auto first_half = micro_train(cfg_half, f.confidence);
    const auto ckpt = std::filesystem::temp_directory_path() / "mg_gen_resume.bin";
    first_half.save(ckpt);

    auto resumed = diffusion::TrainState::load(ckpt);
    CHECK(resumed.step() == 4);
    CHECK(resumed.denoiser().fingerprint() == first_half.denoiser().fingerprint());
    resumed = diffusion::resume_training(std::move(resumed), f.train, encoder, emb,
                                         f.confidence, 8);

    CHECK(resumed.step() == 8);
    CHECK(resumed.denoiser().fingerprint() == one_shot.denoiser().fingerprint());
    CHECK(resumed.mapping().fingerprint() == one_shot.mapping().fingerprint());
    CHECK(resumed.rng().state() == one_shot.rng().state());
    REQUIRE(resumed.history().size() == one_shot.history().size());
    for (std::size_t i = 0; i < one_shot.history().size(); ++i)
        CHECK(resumed.history()[i].total == one_shot.history()[i].total);

    SUBCASE("missing and mismatched artifacts are rejected") {
        CHECK_THROWS_AS(diffusion::TrainState::load(ckpt.string() + ".nope"), IoError);
        // untrained embedder with a different fingerprint
        embedder::JointEmbedder fresh({}, {"alpha", "beta", "<end>"});
        auto reloaded = diffusion::TrainState::load(ckpt);
        CHECK_THROWS_AS(diffusion::resume_training(std::move(reloaded), f.train, encoder, fresh,
                                                   f.confidence, 8),
                        ValidationError);
    }
}

TEST_CASE("generation is deterministic, clipped and shape-correct") {
    const auto& f = gen_fixture();
    const auto& emb = testfix::shared_embedder();
    auto state = micro_train(micro_config(), f.confidence);

    diffusion::GenerateOptions opts;
    opts.batch_size = 2;
    const auto imgs = diffusion::generate(state, emb, 2, 3, 123, opts);
    REQUIRE(imgs.size() == 3);
    for (const auto& img : imgs) {
        CHECK(img.shape() == std::vector<std::int64_t>{3, 32, 32});
        for (std::int64_t i = 0; i < img.size(); ++i) {
            CHECK(img.data()[i] >= 0.0);
            CHECK(img.data()[i] <= 1.0);
        }
    }

    const auto again = diffusion::generate(state, emb, 2, 3, 123, opts);
    for (std::size_t k = 0; k < imgs.size(); ++k)
        for (std::int64_t i = 0; i < imgs[k].size(); ++i)
            CHECK(imgs[k].data()[i] == again[k].data()[i]);

    const auto other = diffusion::generate(state, emb, 2, 3, 124, opts);
    bool any_diff = false;
    for (std::int64_t i = 0; i < imgs[0].size() && !any_diff; ++i)
        any_diff = imgs[0].data()[i] != other[0].data()[i];
    CHECK(any_diff);

    SUBCASE("mean-emotion conditioning is also deterministic") {
        diffusion::GenerateOptions mean_opts;
        mean_opts.use_mean_emotion = true;
        const auto a = diffusion::generate(state, emb, 4, 1, 9, mean_opts);
        const auto b = diffusion::generate(state, emb, 4, 1, 9, mean_opts);
        CHECK(a[0].data()[100] == b[0].data()[100]);
    }
    SUBCASE("bad requests are rejected") {
        CHECK_THROWS_AS(diffusion::generate(state, emb, -1, 3, 1), ValidationError);
        CHECK_THROWS_AS(diffusion::generate(state, emb, 8, 3, 1), ValidationError);
        CHECK_THROWS_AS(diffusion::generate(state, emb, 2, 0, 1), ValidationError);
        auto untrained = diffusion::TrainState::init(micro_config(), f.clusters,
                                                     testfix::shared_emotion_encoder().fingerprint(),
                                                     emb.fingerprint());
        CHECK_THROWS_AS(diffusion::generate(untrained, emb, 2, 1, 1), ValidationError);
    }
}

TEST_CASE("generated sets round-trip through png plus manifest") {
    Rng rng(59);
    diffusion::GeneratedSet set;
    for (int k = 0; k < 2; ++k) {
        Tensor img({3, 16, 16});
        for (std::int64_t i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
        set.images.push_back(img);
    }
    set.emotions = {0, 5};

    const auto dir = std::filesystem::temp_directory_path() / "mg_gen_set";
    std::filesystem::remove_all(dir);
    diffusion::write_generated_set(dir, set);
    const auto back = diffusion::load_generated_set(dir);

    REQUIRE(back.images.size() == 2);
    CHECK(back.emotions == set.emotions);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::int64_t i = 0; i < set.images[k].size(); ++i)
            CHECK(std::abs(back.images[k].data()[i] - set.images[k].data()[i]) <
                  1.0 / 255.0 + 1e-9);  // 8-bit quantization

    CHECK_THROWS_AS(diffusion::load_generated_set(dir / "missing"), IoError);
    diffusion::GeneratedSet bad;
    bad.images = set.images;
    bad.emotions = {0};
    CHECK_THROWS_AS(diffusion::write_generated_set(dir, bad), ValidationError);
}
