#include "moodgen/embedder/embedder.hpp"

#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

#include "moodgen/core/check.hpp"

namespace moodgen::embedder {

using nn::Var;

namespace {
constexpr int kCheckpointSchema = 1;
}

const std::vector<std::string>& transfer_words() {
    static const std::vector<std::string> words{"room", "tree", "house", "road",
                                                "field", "window", "boat", "lamp"};
    return words;
}

std::vector<std::string> JointEmbedder::build_vocab(
    const std::vector<corpus::AttributeSpec>& attrs) {
    std::vector<std::string> vocab;
    std::set<std::string> seen;
    for (const auto& a : attrs)
        if (seen.insert(a.name).second) vocab.push_back(a.name);
    for (const auto& w : transfer_words())
        if (seen.insert(w).second) vocab.push_back(w);
    vocab.push_back("<end>");
    return vocab;
}

JointEmbedder::JointEmbedder(EmbedderConfig cfg, std::vector<std::string> vocab)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    MG_CHECK(vocab_.size() >= 2 && vocab_.back() == "<end>",
             "embedder vocabulary must end with <end>");
    Rng rng(cfg_.seed);
    const std::int64_t d = cfg_.dim;
    tower_ = nn::ConvTower(params_, "img", 3, {16, 32, 64, d}, {1, 2, 2, 2}, rng);
    tokens_ = nn::EmbeddingLayer(params_, "txt.tokens", static_cast<std::int64_t>(vocab_.size()),
                                 d, rng);
    mix1_ = nn::Linear(params_, "txt.mix1", d, d, rng);
    mix2_ = nn::Linear(params_, "txt.mix2", d, d, rng);
    proj_ = nn::Linear(params_, "txt.proj", d, d, rng);
}

std::vector<std::int64_t> JointEmbedder::tokenize(const std::string& phrase) const {
    std::vector<std::int64_t> idx;
    std::istringstream ss(phrase);
    std::string word;
    while (ss >> word) {
        std::int64_t found = -1;
        for (std::size_t v = 0; v < vocab_.size(); ++v)
            if (vocab_[v] == word) {
                found = static_cast<std::int64_t>(v);
                break;
            }
        MG_CHECK(found >= 0, "out-of-vocabulary token: " + word);
        idx.push_back(found);
    }
    idx.push_back(end_token());
    return idx;
}

Var JointEmbedder::token_embedding_rows(const std::vector<std::int64_t>& idx) const {
    return tokens_.forward(idx);
}

Var JointEmbedder::head_forward_tokens(const Var& tokens) const {
    // Tokenwise non-linearity plus one global mixing pass; the output shape
    // matches the input so the sequence can be any length.
    Var u = tanh_op(mix1_.forward(tokens));                     // [L, D]
    Var g = mean_rows(u);                                       // [D]
    Var g2 = mix2_.forward_vec(g);                              // [D]
    return bias_rows(u, g2);                                    // broadcast add
}

Var JointEmbedder::project_and_normalize(const Var& token) const {
    return l2_normalize_vec(proj_.forward_vec(token));
}

Var JointEmbedder::text_embedding_var(const std::string& phrase) const {
    const auto idx = tokenize(phrase);
    Var out = head_forward_tokens(token_embedding_rows(idx));
    return project_and_normalize(select_row(out, static_cast<std::int64_t>(idx.size()) - 1));
}

Var JointEmbedder::image_features_var(const Var& batch) const { return tower_.features(batch); }

Tensor JointEmbedder::embed_text(const std::string& phrase) const {
    return text_embedding_var(phrase).value();
}

Tensor JointEmbedder::text_token_outputs(const std::string& phrase) const {
    return head_forward_tokens(token_embedding_rows(tokenize(phrase))).value();
}

Tensor JointEmbedder::embed_image(const Tensor& chw) const {
    MG_CHECK(chw.rank() == 3, "embed_image expects [3,H,W]");
    Var batch = Var::constant(chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)}));
    Var feats = l2_normalize_rows(tower_.features(batch));
    return feats.value().reshaped({cfg_.dim});
}

Tensor JointEmbedder::image_features_prenorm(const std::vector<Tensor>& images) const {
    MG_CHECK(!images.empty(), "image_features_prenorm: empty input");
    const std::int64_t n = static_cast<std::int64_t>(images.size());
    const auto& s0 = images[0].shape();
    Tensor batch({n, s0[0], s0[1], s0[2]});
    const std::int64_t per = images[0].size();
    for (std::int64_t i = 0; i < n; ++i) {
        MG_CHECK(images[static_cast<std::size_t>(i)].same_shape(images[0]),
                 "image_features_prenorm: inconsistent shapes");
        std::copy(images[static_cast<std::size_t>(i)].data(),
                  images[static_cast<std::size_t>(i)].data() + per, batch.data() + i * per);
    }
    return tower_.features(Var::constant(std::move(batch))).value();
}

double JointEmbedder::train(const std::vector<corpus::LabeledImage>& images,
                            const std::vector<corpus::AttributeSpec>& attrs) {
    std::set<int> distinct;
    for (const auto& li : images) distinct.insert(li.attribute);
    MG_CHECK(distinct.size() >= 2, "contrastive training needs at least two attributes");
    MG_CHECK(!images.empty(), "no training images");

    const auto k = static_cast<std::int64_t>(attrs.size());
    nn::Adam opt(params_, {.lr = cfg_.lr});
    Rng rng(derive_seed(cfg_.seed, 1));

    const std::int64_t b = std::min<std::int64_t>(cfg_.batch_size,
                                                  static_cast<std::int64_t>(images.size()));
    const auto& shape = images[0].pixels.shape();
    double loss_val = 0.0;
    for (int step = 0; step < cfg_.steps; ++step) {
        Tensor batch({b, shape[0], shape[1], shape[2]});
        std::vector<std::int64_t> labels(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const auto pick = rng.uniform_int(images.size());
            const auto& li = images[pick];
            double* dst = batch.data() + i * li.pixels.size();
            if (rng.uniform_int(2) == 1) {
                // horizontal mirror, a label-preserving augmentation
                const std::int64_t c = shape[0], h = shape[1], w = shape[2];
                const double* src = li.pixels.data();
                for (std::int64_t ch = 0; ch < c; ++ch)
                    for (std::int64_t y = 0; y < h; ++y)
                        for (std::int64_t x = 0; x < w; ++x)
                            dst[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
            } else {
                std::copy(li.pixels.data(), li.pixels.data() + li.pixels.size(), dst);
            }
            labels[static_cast<std::size_t>(i)] = li.attribute;
        }
        Var img = l2_normalize_rows(tower_.features(Var::constant(std::move(batch))));  // [B,D]
        std::vector<Var> txt_rows;
        txt_rows.reserve(static_cast<std::size_t>(k));
        for (std::int64_t j = 0; j < k; ++j)
            txt_rows.push_back(reshape(
                text_embedding_var(attrs[static_cast<std::size_t>(j)].name), {1, cfg_.dim}));
        Var txt = concat_rows(txt_rows);                                                // [K,D]
        Var logits = mul_scalar(matmul(img, transpose2(txt)), 1.0 / cfg_.temperature);  // [B,K]
        Var loss = mean_all(softmax_xent(logits, labels));
        loss_val = loss.value()[0];
        MG_CHECK_TRAINING(std::isfinite(loss_val),
                          "embedder loss diverged at step " + std::to_string(step));
        params_.zero_grads();
        backward(loss);
        opt.step();
    }
    final_loss_ = loss_val;
    return loss_val;
}

void JointEmbedder::save(const std::filesystem::path& path,
                         const std::string& corpus_fingerprint) const {
    TensorArchive arc;
    params_.save(arc);
    nlohmann::json meta;
    meta["kind"] = "embedder";
    meta["schema"] = kCheckpointSchema;
    meta["dim"] = cfg_.dim;
    meta["temperature"] = cfg_.temperature;
    meta["lr"] = cfg_.lr;
    meta["steps"] = cfg_.steps;
    meta["batch_size"] = cfg_.batch_size;
    meta["seed"] = cfg_.seed;
    meta["vocab"] = vocab_;
    meta["corpus_fingerprint"] = corpus_fingerprint;
    meta["final_loss"] = final_loss_;
    arc.set_meta(meta.dump());
    arc.save(path);
}

JointEmbedder JointEmbedder::load(const std::filesystem::path& path) {
    TensorArchive arc = TensorArchive::load(path);
    nlohmann::json meta = nlohmann::json::parse(arc.meta());
    MG_CHECK_IO(meta.value("kind", "") == "embedder", "not an embedder checkpoint: " +
                                                          path.string());
    MG_CHECK_IO(meta.value("schema", -1) == kCheckpointSchema,
                "embedder checkpoint schema mismatch");
    EmbedderConfig cfg;
    cfg.dim = meta["dim"].get<std::int64_t>();
    cfg.temperature = meta["temperature"].get<double>();
    cfg.lr = meta["lr"].get<double>();
    cfg.steps = meta["steps"].get<int>();
    cfg.batch_size = meta["batch_size"].get<int>();
    cfg.seed = meta["seed"].get<std::uint64_t>();
    JointEmbedder e(cfg, meta["vocab"].get<std::vector<std::string>>());
    e.params_.load(arc);
    e.final_loss_ = meta.value("final_loss", -1.0);
    return e;
}

}  // namespace moodgen::embedder
