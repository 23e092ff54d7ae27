#include "moodgen/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "moodgen/core/archive.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/core/hash.hpp"
#include "moodgen/nn/adam.hpp"

namespace moodgen::metrics {

using nn::Var;

namespace {

constexpr std::int64_t kFeatureChunk = 64;

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

// Runs `rows_of(slice)` over fixed-size slices and concatenates the row
// blocks, so large sets never build one huge graph.
template <typename F>
Tensor chunked_rows(const std::vector<Tensor>& images, const F& rows_of) {
    MG_CHECK(!images.empty(), "empty image batch");
    const auto n = static_cast<std::int64_t>(images.size());
    Tensor out;
    std::int64_t cols = 0;
    for (std::int64_t start = 0; start < n; start += kFeatureChunk) {
        const auto stop = std::min(n, start + kFeatureChunk);
        std::vector<Tensor> slice(images.begin() + start, images.begin() + stop);
        Tensor block = rows_of(slice);
        if (start == 0) {
            cols = block.shape()[1];
            out = Tensor({n, cols});
        }
        std::copy(block.data(), block.data() + block.size(), out.data() + start * cols);
    }
    return out;
}

int argmax_lowest(const Tensor& rows, std::int64_t row, std::int64_t k) {
    int best = 0;
    for (std::int64_t c = 1; c < k; ++c)
        if (rows[row * k + c] > rows[row * k + best]) best = static_cast<int>(c);
    return best;
}

using EMat = Eigen::MatrixXd;

EMat to_eigen(const Tensor& t) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(t.data(), t.shape()[0],
                                                            t.shape()[1]);
}

// Sample mean and covariance (n-1 divisor) of a row-per-sample matrix.
void sample_moments(const EMat& x, Eigen::VectorXd& mean, EMat& cov) {
    mean = x.colwise().mean();
    EMat centered = x.rowwise() - mean.transpose();
    cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

// Symmetric PSD square root; negative eigenvalues are rounding noise and
// get clipped at zero.
EMat psd_sqrt(const EMat& sym) {
    Eigen::SelfAdjointEigenSolver<EMat> es(sym);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

}  // namespace

AttributeClassifier::AttributeClassifier(std::vector<std::string> attribute_names,
                                         const AttributeClassifierConfig& cfg)
    : cfg_(cfg), names_(std::move(attribute_names)) {
    MG_CHECK(names_.size() >= 2, "attribute classifier needs at least two attributes");
    MG_CHECK(cfg.feature_dim > 0, "feature_dim must be positive");
    Rng rng(derive_seed(cfg.seed, 0));
    tower_ = nn::ConvTower(params_, "attr", 3, {16, 32, 64, cfg.feature_dim}, {2, 2, 2, 1}, rng);
    head_ = nn::Linear(params_, "head", cfg.feature_dim, num_attributes(), rng);
}

double AttributeClassifier::train(const std::vector<corpus::LabeledImage>& images) {
    MG_CHECK(!images.empty(), "no training images");
    const int k = num_attributes();
    std::vector<bool> present(static_cast<std::size_t>(k), false);
    for (const auto& li : images) {
        MG_CHECK(li.attribute >= 0 && li.attribute < k, "attribute label out of range");
        present[static_cast<std::size_t>(li.attribute)] = true;
    }
    MG_CHECK(std::all_of(present.begin(), present.end(), [](bool p) { return p; }),
             "training set must contain every attribute");

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
            labels[static_cast<std::size_t>(i)] = li.attribute;
        }
        Var feats = tower_.features(Var::constant(std::move(batch)));
        Var loss = mean_all(softmax_xent(head_.forward(feats), labels));
        loss_val = loss.value()[0];
        MG_CHECK_TRAINING(std::isfinite(loss_val),
                          "attribute classifier loss diverged at step " + std::to_string(step));
        params_.zero_grads();
        backward(loss);
        opt.step();
    }
    final_loss_ = loss_val;
    return loss_val;
}

Tensor AttributeClassifier::logits(const std::vector<Tensor>& images) const {
    return chunked_rows(images, [this](const std::vector<Tensor>& slice) {
        return head_.forward(tower_.features(Var::constant(stack_images(slice)))).value();
    });
}

Tensor AttributeClassifier::probabilities(const std::vector<Tensor>& images) const {
    return softmax_rows(Var::constant(logits(images))).value();
}

int AttributeClassifier::classify(const Tensor& image) const {
    Tensor lg = logits({image});
    return argmax_lowest(lg, 0, num_attributes());
}

void AttributeClassifier::save(const std::filesystem::path& path,
                               const std::string& corpus_fingerprint) const {
    TensorArchive arc;
    params_.save(arc);
    nlohmann::json meta;
    meta["kind"] = "attribute_classifier";
    meta["schema"] = kCheckpointSchema;
    meta["attributes"] = names_;
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

AttributeClassifier AttributeClassifier::load(const std::filesystem::path& path) {
    TensorArchive arc = TensorArchive::load(path);
    nlohmann::json meta = nlohmann::json::parse(arc.meta(), nullptr, false);
    MG_CHECK_IO(!meta.is_discarded(), "unreadable checkpoint metadata");
    MG_CHECK_IO(meta.value("kind", "") == "attribute_classifier",
                "checkpoint is not an attribute classifier");
    MG_CHECK_IO(meta.value("schema", -1) == kCheckpointSchema,
                "unsupported attribute classifier schema");
    AttributeClassifierConfig cfg;
    cfg.feature_dim = meta["feature_dim"].get<int>();
    cfg.lr = meta["lr"].get<double>();
    cfg.steps = meta["steps"].get<int>();
    cfg.batch_size = meta["batch_size"].get<int>();
    cfg.seed = meta["seed"].get<std::uint64_t>();
    AttributeClassifier clf(meta["attributes"].get<std::vector<std::string>>(), cfg);
    clf.params_.load(arc);
    clf.final_loss_ = meta.value("final_loss", 0.0);
    return clf;
}

double frechet_distance(const Tensor& real_features, const Tensor& gen_features,
                        double* jitter_used) {
    MG_CHECK(real_features.shape().size() == 2 && gen_features.shape().size() == 2,
             "feature sets must be [N, D] matrices");
    const auto d = real_features.shape()[1];
    MG_CHECK(gen_features.shape()[1] == d, "feature sets disagree on dimensionality");
    MG_CHECK(real_features.shape()[0] >= d + 1 && gen_features.shape()[0] >= d + 1,
             "each feature set needs at least dim+1 samples for a stable covariance");

    Eigen::VectorXd mu_r, mu_g;
    EMat cov_r, cov_g;
    sample_moments(to_eigen(real_features), mu_r, cov_r);
    sample_moments(to_eigen(gen_features), mu_g, cov_g);

    double jitter = 0.0;
    {
        Eigen::SelfAdjointEigenSolver<EMat> er(cov_r), eg(cov_g);
        const double floor = 1e-10;
        if (er.eigenvalues().minCoeff() < floor || eg.eigenvalues().minCoeff() < floor) {
            jitter = 1e-6;
            cov_r.diagonal().array() += jitter;
            cov_g.diagonal().array() += jitter;
        }
    }
    if (jitter_used != nullptr) *jitter_used = jitter;

    EMat root = psd_sqrt(cov_r);
    EMat inner = root * cov_g * root;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<EMat> em(inner);
    const double trace_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double value =
        (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() - 2.0 * trace_sqrt;
    MG_CHECK(std::isfinite(value), "distance did not evaluate to a finite number");
    return std::max(value, 0.0);
}

double feature_diversity(const std::vector<Tensor>& per_group_features) {
    MG_CHECK(!per_group_features.empty(), "diversity needs at least one group");
    double total = 0.0;
    for (const auto& group : per_group_features) {
        MG_CHECK(group.shape().size() == 2, "each group must be an [N, D] matrix");
        const auto n = group.shape()[0];
        const auto d = group.shape()[1];
        MG_CHECK(n >= 2, "diversity is undefined for a group with fewer than two samples");
        std::vector<double> inv_norm(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::int64_t c = 0; c < d; ++c) sq += group[i * d + c] * group[i * d + c];
            MG_CHECK(sq > 0.0, "zero-norm feature row has no cosine");
            inv_norm[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(sq);
        }
        double sum = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = i + 1; j < n; ++j) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < d; ++c) dot += group[i * d + c] * group[j * d + c];
                sum += 1.0 - dot * inv_norm[static_cast<std::size_t>(i)] *
                                 inv_norm[static_cast<std::size_t>(j)];
            }
        }
        total += sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
    }
    return total / static_cast<double>(per_group_features.size());
}

double emotion_accuracy(const emotion::EmotionEncoder& classifier,
                        const diffusion::GeneratedSet& set) {
    MG_CHECK(!set.images.empty(), "emotion accuracy is undefined for an empty set");
    MG_CHECK(set.images.size() == set.emotions.size(),
             "generated set images and labels disagree");
    Tensor lg = chunked_rows(set.images, [&classifier](const std::vector<Tensor>& slice) {
        return classifier.logits(slice);
    });
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < set.images.size(); ++i)
        if (argmax_lowest(lg, static_cast<std::int64_t>(i), corpus::kNumEmotions) ==
            set.emotions[i])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(set.images.size());
}

double semantic_clarity(const Tensor& probabilities) {
    MG_CHECK(probabilities.shape().size() == 2, "probabilities must be [N, K]");
    const auto n = probabilities.shape()[0];
    const auto k = probabilities.shape()[1];
    MG_CHECK(n >= 1 && k >= 2, "clarity needs a nonempty set and at least two classes");
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        double row_max = 0.0;
        for (std::int64_t c = 0; c < k; ++c) {
            const double p = probabilities[i * k + c];
            MG_CHECK(p >= 0.0, "probabilities must be nonnegative");
            row_sum += p;
            row_max = std::max(row_max, p);
        }
        MG_CHECK(std::abs(row_sum - 1.0) < 1e-6, "each probability row must sum to one");
        total += row_max;
    }
    return total / static_cast<double>(n);
}

double semantic_clarity(const AttributeClassifier& classifier,
                        const std::vector<Tensor>& images) {
    MG_CHECK(!images.empty(), "clarity is undefined for an empty set");
    return semantic_clarity(classifier.probabilities(images));
}

double semantic_diversity(const std::vector<int>& predicted_attributes,
                          const std::vector<int>& group_labels, int num_attributes) {
    MG_CHECK(!predicted_attributes.empty(), "richness is undefined for an empty set");
    MG_CHECK(predicted_attributes.size() == group_labels.size(),
             "predictions and group labels disagree");
    MG_CHECK(num_attributes >= 2, "richness needs at least two attributes");
    std::map<int, std::vector<std::int64_t>> histograms;
    for (std::size_t i = 0; i < predicted_attributes.size(); ++i) {
        const int a = predicted_attributes[i];
        MG_CHECK(a >= 0 && a < num_attributes, "predicted attribute out of range");
        auto& h = histograms[group_labels[i]];
        h.resize(static_cast<std::size_t>(num_attributes), 0);
        h[static_cast<std::size_t>(a)]++;
    }
    const double log_k = std::log(static_cast<double>(num_attributes));
    double total = 0.0;
    for (const auto& [group, h] : histograms) {
        std::int64_t count = 0;
        for (auto c : h) count += c;
        double entropy = 0.0;
        for (auto c : h) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / static_cast<double>(count);
            entropy -= p * std::log(p);
        }
        total += entropy / log_k;
    }
    return total / static_cast<double>(histograms.size());
}

double semantic_diversity(const AttributeClassifier& classifier,
                          const diffusion::GeneratedSet& set) {
    MG_CHECK(!set.images.empty(), "richness is undefined for an empty set");
    MG_CHECK(set.images.size() == set.emotions.size(),
             "generated set images and labels disagree");
    const auto k = classifier.num_attributes();
    Tensor lg = classifier.logits(set.images);
    std::vector<int> predicted(set.images.size());
    for (std::size_t i = 0; i < set.images.size(); ++i)
        predicted[i] = argmax_lowest(lg, static_cast<std::int64_t>(i), k);
    return semantic_diversity(predicted, set.emotions, k);
}

namespace {

nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["fid"] = r.fid;
    j["diversity"] = r.diversity;
    j["emo_a"] = r.emo_a;
    j["sem_c"] = r.sem_c;
    j["sem_d"] = r.sem_d;
    j["sem_c_real"] = r.sem_c_real;
    j["emo_a_defined"] = r.emo_a_defined;
    j["fid_jitter"] = r.fid_jitter;
    j["real_count"] = r.real_count;
    j["gen_count"] = r.gen_count;
    j["config_fingerprint"] = r.config_fingerprint;
    return j;
}

}  // namespace

void MetricsReport::save_json(const std::filesystem::path& path) const {
    std::ofstream out(path);
    MG_CHECK_IO(out.good(), "cannot open " + path.string() + " for writing");
    out << report_to_json(*this).dump(2) << '\n';
    MG_CHECK_IO(out.good(), "failed writing " + path.string());
}

MetricsReport MetricsReport::load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    MG_CHECK_IO(in.good(), "cannot open " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    MG_CHECK_IO(!j.is_discarded(), "unreadable report JSON in " + path.string());
    MetricsReport r;
    try {
        r.fid = j.at("fid").get<double>();
        r.diversity = j.at("diversity").get<double>();
        r.emo_a = j.at("emo_a").get<double>();
        r.sem_c = j.at("sem_c").get<double>();
        r.sem_d = j.at("sem_d").get<double>();
        r.sem_c_real = j.at("sem_c_real").get<double>();
        r.emo_a_defined = j.at("emo_a_defined").get<bool>();
        r.fid_jitter = j.at("fid_jitter").get<double>();
        r.real_count = j.at("real_count").get<std::int64_t>();
        r.gen_count = j.at("gen_count").get<std::int64_t>();
        r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        MG_CHECK_IO(false, "report " + path.string() + " is missing fields: " + e.what());
    }
    return r;
}

void MetricsReport::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    MG_CHECK_IO(out.good(), "cannot open " + path.string() + " for writing");
    out << "fid,diversity,emo_a,sem_c,sem_d,sem_c_real,emo_a_defined,fid_jitter,"
           "real_count,gen_count,config_fingerprint\n";
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,", fid,
                  diversity, emo_a, sem_c, sem_d, sem_c_real, emo_a_defined ? 1 : 0,
                  fid_jitter);
    out << buf << real_count << ',' << gen_count << ',' << config_fingerprint << '\n';
    MG_CHECK_IO(out.good(), "failed writing " + path.string());
}

MetricsReport evaluate(const embedder::JointEmbedder& emb,
                       const emotion::EmotionEncoder& emotion_classifier,
                       const AttributeClassifier& attribute_classifier,
                       const std::vector<corpus::LabeledImage>& real_images,
                       const diffusion::GeneratedSet& generated) {
    MG_CHECK(!real_images.empty(), "evaluation needs a nonempty real set");
    MG_CHECK(!generated.images.empty(), "evaluation needs a nonempty generated set");
    MG_CHECK(generated.images.size() == generated.emotions.size(),
             "generated set images and labels disagree");

    std::vector<Tensor> real_pixels;
    real_pixels.reserve(real_images.size());
    for (const auto& li : real_images) real_pixels.push_back(li.pixels);

    const auto features_of = [&emb](const std::vector<Tensor>& images) {
        return chunked_rows(images, [&emb](const std::vector<Tensor>& slice) {
            return emb.image_features_prenorm(slice);
        });
    };
    Tensor real_feats = features_of(real_pixels);
    Tensor gen_feats = features_of(generated.images);
    const auto d = gen_feats.shape()[1];

    MetricsReport report;
    report.fid = frechet_distance(real_feats, gen_feats, &report.fid_jitter);

    // Group generated features by intended emotion, ascending label order.
    std::map<int, std::vector<std::int64_t>> by_emotion;
    for (std::size_t i = 0; i < generated.emotions.size(); ++i)
        by_emotion[generated.emotions[i]].push_back(static_cast<std::int64_t>(i));
    std::vector<Tensor> groups;
    for (const auto& [emotion, rows] : by_emotion) {
        MG_CHECK(rows.size() >= 2,
                 "emotion '" + corpus::emotion_names()[static_cast<std::size_t>(emotion)] +
                     "' has fewer than two generated images");
        Tensor g({static_cast<std::int64_t>(rows.size()), d});
        for (std::size_t r = 0; r < rows.size(); ++r)
            std::copy(gen_feats.data() + rows[r] * d, gen_feats.data() + (rows[r] + 1) * d,
                      g.data() + static_cast<std::int64_t>(r) * d);
        groups.push_back(std::move(g));
    }
    report.diversity = feature_diversity(groups);

    report.emo_a = emotion_accuracy(emotion_classifier, generated);
    report.emo_a_defined = true;
    report.sem_c = semantic_clarity(attribute_classifier, generated.images);
    report.sem_c_real = semantic_clarity(attribute_classifier, real_pixels);
    report.sem_d = semantic_diversity(attribute_classifier, generated);
    report.real_count = static_cast<std::int64_t>(real_images.size());
    report.gen_count = static_cast<std::int64_t>(generated.images.size());

    Fnv64 h;
    h.update(emb.fingerprint());
    h.update(emotion_classifier.fingerprint());
    h.update(attribute_classifier.fingerprint());
    report.config_fingerprint = h.hex();
    return report;
}

}  // namespace moodgen::metrics
