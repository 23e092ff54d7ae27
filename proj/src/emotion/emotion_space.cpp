#include "moodgen/emotion/emotion_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "moodgen/core/archive.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/nn/adam.hpp"

namespace moodgen::emotion {

using nn::Var;

Var emotion_ce_loss(const Var& logits, const std::vector<std::int64_t>& labels) {
    return mean_all(softmax_xent(logits, labels));
}

EmotionEncoder::EmotionEncoder(const EmotionEncoderConfig& cfg) : cfg_(cfg) {
    MG_CHECK(cfg.feature_dim > 0, "feature_dim must be positive");
    Rng rng(derive_seed(cfg.seed, 0));
    tower_ = nn::ConvTower(params_, "enc", 3, {16, 32, 64, cfg.feature_dim}, {2, 2, 2, 1}, rng);
    head_ = nn::Linear(params_, "head", cfg.feature_dim, corpus::kNumEmotions, rng);
}

namespace {

Tensor stack_images(const std::vector<Tensor>& images) {
    MG_CHECK(!images.empty(), "empty image batch");
    const auto& s = images[0].shape();
    MG_CHECK(s.size() == 3, "images must be [C,H,W]");
    Tensor batch({static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]});
    for (std::size_t i = 0; i < images.size(); ++i) {
        MG_CHECK(images[i].shape() == s, "inconsistent image shapes in batch");
        std::copy(images[i].data(), images[i].data() + images[i].size(),
                  batch.data() + static_cast<std::int64_t>(i) * images[i].size());
    }
    return batch;
}

}  // namespace

double EmotionEncoder::train(const std::vector<corpus::LabeledImage>& images) {
    MG_CHECK(!images.empty(), "no training images");
    std::vector<bool> present(corpus::kNumEmotions, false);
    for (const auto& li : images) present[static_cast<std::size_t>(li.emotion)] = true;
    MG_CHECK(std::all_of(present.begin(), present.end(), [](bool p) { return p; }),
             "training set must contain every emotion");

    nn::Adam opt(params_, {.lr = cfg_.lr});
    Rng rng(derive_seed(cfg_.seed, 1));
    const std::int64_t b =
        std::min<std::int64_t>(cfg_.batch_size, static_cast<std::int64_t>(images.size()));
    const auto& shape = images[0].pixels.shape();
    double loss_val = 0.0;
    for (int step = 0; step < cfg_.steps; ++step) {
        Tensor batch({b, shape[0], shape[1], shape[2]});
        std::vector<std::int64_t> labels(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const auto& li = images[rng.uniform_int(images.size())];
            std::copy(li.pixels.data(), li.pixels.data() + li.pixels.size(),
                      batch.data() + i * li.pixels.size());
            labels[static_cast<std::size_t>(i)] = li.emotion;
        }
        Var feats = tower_.features(Var::constant(std::move(batch)));
        Var loss = emotion_ce_loss(head_.forward(feats), labels);
        loss_val = loss.value()[0];
        MG_CHECK_TRAINING(std::isfinite(loss_val),
                          "emotion encoder loss diverged at step " + std::to_string(step));
        params_.zero_grads();
        backward(loss);
        opt.step();
    }
    final_loss_ = loss_val;
    return loss_val;
}

Tensor EmotionEncoder::features(const std::vector<Tensor>& images) const {
    return tower_.features(Var::constant(stack_images(images))).value();
}

Tensor EmotionEncoder::feature(const Tensor& image) const {
    return features({image}).reshaped({cfg_.feature_dim});
}

Var EmotionEncoder::features_var(const Var& batch) const { return tower_.features(batch); }

Tensor EmotionEncoder::logits(const std::vector<Tensor>& images) const {
    return head_.forward(tower_.features(Var::constant(stack_images(images)))).value();
}

int EmotionEncoder::classify(const Tensor& image) const {
    Tensor lg = logits({image});
    int best = 0;
    for (int c = 1; c < corpus::kNumEmotions; ++c)
        if (lg[c] > lg[best]) best = c;  // ties resolve to the lowest index
    return best;
}

void EmotionEncoder::save(const std::filesystem::path& path,
                          const std::string& corpus_fingerprint) const {
    TensorArchive arc;
    params_.save(arc);
    nlohmann::json meta;
    meta["kind"] = "emotion_encoder";
    meta["schema"] = kCheckpointSchema;
    meta["feature_dim"] = cfg_.feature_dim;
    meta["lr"] = cfg_.lr;
    meta["steps"] = cfg_.steps;
    meta["batch_size"] = cfg_.batch_size;
    meta["seed"] = cfg_.seed;
    meta["corpus_fingerprint"] = corpus_fingerprint;
    meta["final_loss"] = final_loss_;
    arc.set_meta(meta.dump());
    arc.save(path);
}

EmotionEncoder EmotionEncoder::load(const std::filesystem::path& path) {
    TensorArchive arc = TensorArchive::load(path);
    nlohmann::json meta = nlohmann::json::parse(arc.meta());
    MG_CHECK_IO(meta.value("kind", "") == "emotion_encoder",
                "checkpoint is not an emotion encoder");
    MG_CHECK_IO(meta.value("schema", -1) == kCheckpointSchema,
                "unsupported emotion encoder schema");
    EmotionEncoderConfig cfg;
    cfg.feature_dim = meta["feature_dim"].get<int>();
    cfg.lr = meta["lr"].get<double>();
    cfg.steps = meta["steps"].get<int>();
    cfg.batch_size = meta["batch_size"].get<int>();
    cfg.seed = meta["seed"].get<std::uint64_t>();
    EmotionEncoder enc(cfg);
    enc.params_.load(arc);
    enc.final_loss_ = meta.value("final_loss", 0.0);
    return enc;
}

EmotionClusterStats fit_clusters(const EmotionEncoder& encoder,
                                 const std::vector<corpus::LabeledImage>& images) {
    const int c = corpus::kNumEmotions;
    const int e = encoder.config().feature_dim;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(c), 0);
    for (const auto& li : images) {
        MG_CHECK(li.emotion >= 0 && li.emotion < c, "emotion label out of range");
        counts[static_cast<std::size_t>(li.emotion)]++;
    }
    for (int i = 0; i < c; ++i)
        MG_CHECK(counts[static_cast<std::size_t>(i)] >= 2,
                 "emotion '" + corpus::emotion_names()[static_cast<std::size_t>(i)] +
                     "' needs at least 2 samples to fit a cluster");

    // Batched feature extraction, then two-pass mean / sample std per emotion.
    std::vector<Tensor> pixels;
    pixels.reserve(images.size());
    for (const auto& li : images) pixels.push_back(li.pixels);
    Tensor feats = encoder.features(pixels);  // [N, E]

    EmotionClusterStats stats;
    stats.mean = Tensor({c, e});
    stats.std = Tensor({c, e});
    stats.counts = counts;
    for (std::size_t n = 0; n < images.size(); ++n) {
        const int i = images[n].emotion;
        for (int d = 0; d < e; ++d)
            stats.mean[i * e + d] += feats[static_cast<std::int64_t>(n) * e + d];
    }
    for (int i = 0; i < c; ++i)
        for (int d = 0; d < e; ++d)
            stats.mean[i * e + d] /= static_cast<double>(counts[static_cast<std::size_t>(i)]);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const int i = images[n].emotion;
        for (int d = 0; d < e; ++d) {
            const double diff =
                feats[static_cast<std::int64_t>(n) * e + d] - stats.mean[i * e + d];
            stats.std[i * e + d] += diff * diff;
        }
    }
    for (int i = 0; i < c; ++i)
        for (int d = 0; d < e; ++d)
            stats.std[i * e + d] = std::sqrt(
                stats.std[i * e + d] /
                static_cast<double>(counts[static_cast<std::size_t>(i)] - 1));
    return stats;
}

Tensor sample_emotion(const EmotionClusterStats& stats, int emotion, Rng& rng) {
    const auto c = stats.mean.shape()[0];
    const auto e = stats.mean.shape()[1];
    MG_CHECK(emotion >= 0 && emotion < c, "unknown emotion index");
    Tensor out({e});
    for (std::int64_t d = 0; d < e; ++d)
        out[d] = stats.mean[emotion * e + d] + stats.std[emotion * e + d] * rng.normal();
    return out;
}

Tensor mean_emotion(const EmotionClusterStats& stats, int emotion) {
    const auto c = stats.mean.shape()[0];
    const auto e = stats.mean.shape()[1];
    MG_CHECK(emotion >= 0 && emotion < c, "unknown emotion index");
    Tensor out({e});
    for (std::int64_t d = 0; d < e; ++d) out[d] = stats.mean[emotion * e + d];
    return out;
}

void EmotionClusterStats::save(const std::filesystem::path& path) const {
    const auto c = mean.shape()[0];
    const auto e = mean.shape()[1];
    nlohmann::json doc;
    doc["kind"] = "emotion_clusters";
    doc["schema"] = 1;
    doc["dim"] = e;
    auto& rows = doc["emotions"] = nlohmann::json::array();
    for (std::int64_t i = 0; i < c; ++i) {
        nlohmann::json row;
        row["name"] = corpus::emotion_names()[static_cast<std::size_t>(i)];
        row["n"] = counts[static_cast<std::size_t>(i)];
        row["mean"] = std::vector<double>(mean.data() + i * e, mean.data() + (i + 1) * e);
        row["std"] = std::vector<double>(std.data() + i * e, std.data() + (i + 1) * e);
        rows.push_back(std::move(row));
    }
    std::ofstream out(path);
    MG_CHECK_IO(out.good(), "cannot write cluster stats to " + path.string());
    out << doc.dump(2) << "\n";
    MG_CHECK_IO(out.good(), "failed writing cluster stats to " + path.string());
}

EmotionClusterStats EmotionClusterStats::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    MG_CHECK_IO(in.good(), "cannot open cluster stats " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    MG_CHECK_IO(!doc.is_discarded(), "cluster stats file is not valid json: " + path.string());
    MG_CHECK_IO(doc.value("kind", "") == "emotion_clusters", "not a cluster stats file");
    MG_CHECK_IO(doc.value("schema", -1) == 1, "unsupported cluster stats schema");
    const auto e = doc["dim"].get<std::int64_t>();
    const auto& rows = doc["emotions"];
    MG_CHECK_IO(rows.size() == static_cast<std::size_t>(corpus::kNumEmotions),
                "cluster stats must cover every emotion");
    EmotionClusterStats stats;
    const auto c = static_cast<std::int64_t>(rows.size());
    stats.mean = Tensor({c, e});
    stats.std = Tensor({c, e});
    for (std::int64_t i = 0; i < c; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        MG_CHECK_IO(row.value("name", "") ==
                        corpus::emotion_names()[static_cast<std::size_t>(i)],
                    "cluster stats emotion order mismatch");
        stats.counts.push_back(row["n"].get<std::int64_t>());
        const auto mu = row["mean"].get<std::vector<double>>();
        const auto sd = row["std"].get<std::vector<double>>();
        MG_CHECK_IO(static_cast<std::int64_t>(mu.size()) == e &&
                        static_cast<std::int64_t>(sd.size()) == e,
                    "cluster stats row has wrong dimension");
        std::copy(mu.begin(), mu.end(), stats.mean.data() + i * e);
        std::copy(sd.begin(), sd.end(), stats.std.data() + i * e);
    }
    return stats;
}

}  // namespace moodgen::emotion
