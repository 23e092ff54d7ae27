#include "moodgen/conditioning/conditioning.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "moodgen/core/archive.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/core/rng.hpp"

namespace moodgen::conditioning {

using nn::Var;

MappingNetwork::MappingNetwork(const MappingConfig& cfg) : cfg_(cfg) {
    MG_CHECK(cfg.emotion_dim > 0 && cfg.joint_dim > 0, "mapping dims must be positive");
    MG_CHECK(cfg.seed_tokens >= 1, "mapping must emit at least one token");
    MG_CHECK(cfg.hidden_mult >= 0, "mapping hidden_mult must be >= 0");
    Rng rng(derive_seed(cfg.seed, 0));
    std::vector<std::int64_t> dims;
    if (cfg.hidden_mult == 0) {
        // Ablation variant: a single linear projection instead of the MLP.
        dims = {cfg.emotion_dim, cfg.seed_tokens * cfg.joint_dim};
    } else {
        const int hidden = cfg.hidden_mult * cfg.emotion_dim;
        dims = {cfg.emotion_dim, hidden, hidden,
                static_cast<std::int64_t>(cfg.seed_tokens) * cfg.joint_dim};
    }
    mlp_ = nn::Mlp(params_, "map", dims, rng);
}

Var MappingNetwork::forward(const Var& emotion_vectors) const {
    const auto& s = emotion_vectors.value().shape();
    MG_CHECK(s.size() == 2 && s[1] == cfg_.emotion_dim,
             "mapping input must be [N, emotion_dim]");
    return mlp_.forward(emotion_vectors);
}

void MappingNetwork::save(const std::filesystem::path& path,
                          const std::string& embedder_fingerprint) const {
    TensorArchive arc;
    params_.save(arc);
    nlohmann::json meta;
    meta["kind"] = "mapping";
    meta["schema"] = kCheckpointSchema;
    meta["emotion_dim"] = cfg_.emotion_dim;
    meta["joint_dim"] = cfg_.joint_dim;
    meta["seed_tokens"] = cfg_.seed_tokens;
    meta["hidden_mult"] = cfg_.hidden_mult;
    meta["seed"] = cfg_.seed;
    meta["embedder_fingerprint"] = embedder_fingerprint;
    arc.set_meta(meta.dump());
    arc.save(path);
}

MappingNetwork MappingNetwork::load(const std::filesystem::path& path) {
    TensorArchive arc = TensorArchive::load(path);
    nlohmann::json meta = nlohmann::json::parse(arc.meta());
    MG_CHECK_IO(meta.value("kind", "") == "mapping", "checkpoint is not a mapping network");
    MG_CHECK_IO(meta.value("schema", -1) == kCheckpointSchema, "unsupported mapping schema");
    MappingConfig cfg;
    cfg.emotion_dim = meta["emotion_dim"].get<int>();
    cfg.joint_dim = meta["joint_dim"].get<int>();
    cfg.seed_tokens = meta["seed_tokens"].get<int>();
    cfg.hidden_mult = meta["hidden_mult"].get<int>();
    cfg.seed = meta["seed"].get<std::uint64_t>();
    MappingNetwork net(cfg);
    net.params_.load(arc);
    return net;
}

MappedBatch map_batch(const MappingNetwork& mapping,
                      const embedder::JointEmbedder& frozen_embedder,
                      const Var& emotion_vectors) {
    const auto d = frozen_embedder.config().dim;
    MG_CHECK(mapping.config().joint_dim == d,
             "mapping joint_dim does not match the embedder dimension");
    const auto n = emotion_vectors.value().shape()[0];
    const int t = mapping.config().seed_tokens;

    Var seeds = mapping.forward(emotion_vectors);  // [N, t*D]
    Var end = frozen_embedder.token_embedding_rows({frozen_embedder.end_token()});  // [1, D]

    MappedBatch out;
    std::vector<Var> v_rows;
    out.token_sequences.reserve(static_cast<std::size_t>(n));
    v_rows.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Var row = reshape(select_row(seeds, i), {t, d});
        Var tokens =
            frozen_embedder.head_forward_tokens(nn::concat_rows({row, end}));  // [t+1, D]
        Var v = frozen_embedder.project_and_normalize(select_row(tokens, t));
        out.token_sequences.push_back(std::move(tokens));
        v_rows.push_back(reshape(v, {1, d}));
    }
    out.v_emos = concat_rows(v_rows);
    return out;
}

ConditioningEmbedding map_emotion(const MappingNetwork& mapping,
                                  const embedder::JointEmbedder& frozen_embedder,
                                  const Tensor& emotion_vector) {
    MG_CHECK(emotion_vector.shape().size() == 1 &&
                 emotion_vector.shape()[0] == mapping.config().emotion_dim,
             "emotion vector has wrong dimension");
    for (std::int64_t i = 0; i < emotion_vector.size(); ++i)
        MG_CHECK(std::isfinite(emotion_vector[i]), "emotion vector must be finite");
    MappedBatch batch = map_batch(
        mapping, frozen_embedder,
        Var::constant(emotion_vector.reshaped({1, mapping.config().emotion_dim})));
    ConditioningEmbedding out;
    out.token_sequence = batch.token_sequences[0].value();
    out.v_emo = batch.v_emos.value().reshaped({mapping.config().joint_dim});
    return out;
}

double cosine_similarity(const Tensor& p, const Tensor& q) {
    MG_CHECK(p.size() == q.size() && p.size() > 0, "cosine needs equal-length vectors");
    double pq = 0.0, pp = 0.0, qq = 0.0;
    for (std::int64_t i = 0; i < p.size(); ++i) {
        pq += p[i] * q[i];
        pp += p[i] * p[i];
        qq += q[i] * q[i];
    }
    MG_CHECK(pp > 0.0 && qq > 0.0, "cosine undefined for zero vectors");
    return pq / (std::sqrt(pp) * std::sqrt(qq));
}

namespace {

void check_texts(const Tensor& texts, double temperature) {
    MG_CHECK(texts.shape().size() == 2, "attribute texts must be [K, D]");
    MG_CHECK(texts.shape()[0] >= 2, "attribute loss needs at least two attribute texts");
    MG_CHECK(temperature > 0.0, "temperature must be positive");
}

}  // namespace

Var attribute_loss(const Var& v_emo, const Tensor& attribute_texts, int true_attribute,
                   double temperature) {
    check_texts(attribute_texts, temperature);
    const auto k = attribute_texts.shape()[0];
    MG_CHECK(true_attribute >= 0 && true_attribute < k, "true attribute index out of range");
    const auto d = attribute_texts.shape()[1];
    MG_CHECK(v_emo.value().size() == d, "v_emo dimension mismatch");
    Var v = reshape(v_emo, {1, d});
    return attribute_loss_batch(v, attribute_texts, {true_attribute}, temperature, false);
}

namespace {

// Cosine similarities via normalized rows: identical in value and gradient
// to dot(p,q)/(|p||q|) on the raw vectors.
Var similarity_logits(const Var& v_emos, const Tensor& attribute_texts,
                      const std::vector<std::int64_t>& labels, double temperature) {
    check_texts(attribute_texts, temperature);
    const auto k = attribute_texts.shape()[0];
    const auto n = v_emos.value().shape()[0];
    MG_CHECK(static_cast<std::int64_t>(labels.size()) == n, "one label per sample required");
    for (auto l : labels) MG_CHECK(l >= 0 && l < k, "attribute label out of range");
    Var vn = l2_normalize_rows(v_emos);
    Var tn = l2_normalize_rows(Var::constant(attribute_texts));
    return mul_scalar(matmul(vn, transpose2(tn)), 1.0 / temperature);  // [N, K]
}

}  // namespace

Var attribute_loss_rows(const Var& v_emos, const Tensor& attribute_texts,
                        const std::vector<std::int64_t>& labels, double temperature) {
    return softmax_xent(similarity_logits(v_emos, attribute_texts, labels, temperature), labels);
}

Var attribute_loss_batch(const Var& v_emos, const Tensor& attribute_texts,
                         const std::vector<std::int64_t>& labels, double temperature,
                         bool symmetric) {
    Var logits = similarity_logits(v_emos, attribute_texts, labels, temperature);
    Var forward = mean_all(softmax_xent(logits, labels));
    if (!symmetric) return forward;

    const auto n = v_emos.value().shape()[0];

    // Transposed direction: each attribute text classifies the samples. A text
    // may own several samples, so each (text, positive sample) pair counts once.
    std::vector<std::int64_t> text_rows, positives;
    for (std::int64_t i = 0; i < n; ++i) {
        text_rows.push_back(labels[static_cast<std::size_t>(i)]);
        positives.push_back(i);
    }
    Var transposed_logits = gather_rows(transpose2(logits), text_rows);  // [P, N]
    Var transposed = mean_all(softmax_xent(transposed_logits, positives));
    return mul_scalar(add(forward, transposed), 0.5);
}

Tensor attribute_text_matrix(const embedder::JointEmbedder& frozen_embedder,
                             const std::vector<std::string>& names) {
    MG_CHECK(!names.empty(), "no attributes");
    const auto d = frozen_embedder.config().dim;
    Tensor out({static_cast<std::int64_t>(names.size()), d});
    for (std::size_t j = 0; j < names.size(); ++j) {
        Tensor t = frozen_embedder.embed_text(names[j]);
        std::copy(t.data(), t.data() + d, out.data() + static_cast<std::int64_t>(j) * d);
    }
    return out;
}

Tensor attribute_text_matrix(const embedder::JointEmbedder& frozen_embedder,
                             const std::vector<corpus::AttributeSpec>& attrs) {
    std::vector<std::string> names;
    names.reserve(attrs.size());
    for (const auto& a : attrs) names.push_back(a.name);
    return attribute_text_matrix(frozen_embedder, names);
}

}  // namespace moodgen::conditioning
