#include "moodgen/diffusion/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "moodgen/core/archive.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/core/image.hpp"

namespace moodgen::diffusion {

using nn::Var;

namespace {

nlohmann::json config_to_json(const GeneratorConfig& c) {
    nlohmann::json j;
    j["image_size"] = c.image_size;
    j["timesteps"] = c.timesteps;
    j["beta_start"] = c.beta_start;
    j["beta_end"] = c.beta_end;
    j["denoiser"] = {{"in_channels", c.denoiser.in_channels},
                     {"channels", c.denoiser.channels},
                     {"groups", c.denoiser.groups},
                     {"time_dim", c.denoiser.time_dim},
                     {"cond_dim", c.denoiser.cond_dim},
                     {"context_dim", c.denoiser.context_dim},
                     {"attn_dim", c.denoiser.attn_dim},
                     {"seed", c.denoiser.seed}};
    j["mapping"] = {{"emotion_dim", c.mapping.emotion_dim},
                    {"joint_dim", c.mapping.joint_dim},
                    {"seed_tokens", c.mapping.seed_tokens},
                    {"hidden_mult", c.mapping.hidden_mult},
                    {"seed", c.mapping.seed}};
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["lr_denoiser"] = c.lr_denoiser;
    j["lr_mapping"] = c.lr_mapping;
    j["attr_temperature"] = c.attr_temperature;
    j["freeze_denoiser"] = c.freeze_denoiser;
    j["train_attr_loss"] = c.train_attr_loss;
    j["fixed_alpha"] = c.fixed_alpha;
    j["divergence_limit"] = c.divergence_limit;
    j["seed"] = c.seed;
    return j;
}

GeneratorConfig config_from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.image_size = j.at("image_size").get<std::int64_t>();
    c.timesteps = j.at("timesteps").get<std::int64_t>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    const auto& d = j.at("denoiser");
    c.denoiser.in_channels = d.at("in_channels").get<std::int64_t>();
    c.denoiser.channels = d.at("channels").get<std::vector<std::int64_t>>();
    c.denoiser.groups = d.at("groups").get<int>();
    c.denoiser.time_dim = d.at("time_dim").get<std::int64_t>();
    c.denoiser.cond_dim = d.at("cond_dim").get<std::int64_t>();
    c.denoiser.context_dim = d.at("context_dim").get<std::int64_t>();
    c.denoiser.attn_dim = d.at("attn_dim").get<std::int64_t>();
    c.denoiser.seed = d.at("seed").get<std::uint64_t>();
    const auto& m = j.at("mapping");
    c.mapping.emotion_dim = m.at("emotion_dim").get<int>();
    c.mapping.joint_dim = m.at("joint_dim").get<int>();
    c.mapping.seed_tokens = m.at("seed_tokens").get<int>();
    c.mapping.hidden_mult = m.at("hidden_mult").get<int>();
    c.mapping.seed = m.at("seed").get<std::uint64_t>();
    c.steps = j.at("steps").get<std::int64_t>();
    c.batch_size = j.at("batch_size").get<std::int64_t>();
    c.lr_denoiser = j.at("lr_denoiser").get<double>();
    c.lr_mapping = j.at("lr_mapping").get<double>();
    c.attr_temperature = j.at("attr_temperature").get<double>();
    c.freeze_denoiser = j.at("freeze_denoiser").get<bool>();
    c.train_attr_loss = j.at("train_attr_loss").get<bool>();
    c.fixed_alpha = j.at("fixed_alpha").get<double>();
    c.divergence_limit = j.at("divergence_limit").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void validate_config(const GeneratorConfig& cfg) {
    MG_CHECK(cfg.image_size >= 2, "image size too small");
    const std::int64_t stride_total = std::int64_t{1} << (cfg.denoiser.channels.size() - 1);
    MG_CHECK(cfg.image_size % stride_total == 0,
             "image size must be divisible by the denoiser downsampling factor");
    MG_CHECK(cfg.steps >= 0 && cfg.batch_size >= 1, "invalid step or batch count");
    MG_CHECK(cfg.lr_denoiser > 0.0 && cfg.lr_mapping > 0.0, "learning rates must be positive");
    MG_CHECK(cfg.attr_temperature > 0.0, "attribute temperature must be positive");
    MG_CHECK(cfg.fixed_alpha <= 1.0, "fixed_alpha above 1 is not a valid loss weight");
    MG_CHECK(cfg.denoiser.context_dim == cfg.mapping.joint_dim,
             "denoiser context width must match the mapping token width");
}

}  // namespace

TrainState TrainState::init(const GeneratorConfig& cfg,
                            const emotion::EmotionClusterStats& clusters,
                            const std::string& encoder_fingerprint,
                            const std::string& embedder_fingerprint) {
    validate_config(cfg);
    MG_CHECK(clusters.mean.shape().size() == 2 &&
                 clusters.mean.shape()[1] == cfg.mapping.emotion_dim,
             "cluster statistics do not match the mapping input width");

    TrainState s;
    s.cfg_ = cfg;
    s.schedule_ = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    s.denoiser_ = std::make_unique<Denoiser>(cfg.denoiser);
    s.mapping_ = std::make_unique<conditioning::MappingNetwork>(cfg.mapping);
    nn::Adam::Config dc;
    dc.lr = cfg.lr_denoiser;
    nn::Adam::Config mc;
    mc.lr = cfg.lr_mapping;
    s.opt_denoiser_ = std::make_unique<nn::Adam>(s.denoiser_->params(), dc);
    s.opt_mapping_ = std::make_unique<nn::Adam>(s.mapping_->params(), mc);
    s.rng_ = Rng(derive_seed(cfg.seed, 100));
    s.clusters_ = clusters;
    s.encoder_fp_ = encoder_fingerprint;
    s.embedder_fp_ = embedder_fingerprint;
    return s;
}

void TrainState::save(const std::filesystem::path& path) const {
    TensorArchive arc;
    nlohmann::json meta;
    meta["kind"] = "generator_state";
    meta["schema"] = kCheckpointSchema;
    meta["config"] = config_to_json(cfg_);
    meta["step"] = step_;
    meta["rng"] = rng_.state();
    meta["encoder_fingerprint"] = encoder_fp_;
    meta["embedder_fingerprint"] = embedder_fp_;
    meta["cluster_counts"] = clusters_.counts;
    arc.put("clusters.mean", clusters_.mean);
    arc.put("clusters.std", clusters_.std);
    denoiser_->params().save(arc, "den.");
    mapping_->params().save(arc, "map.");
    opt_denoiser_->save(arc, "optd.");
    opt_mapping_->save(arc, "optm.");

    Tensor hist({static_cast<std::int64_t>(history_.size()), 5});
    for (std::size_t i = 0; i < history_.size(); ++i) {
        double* row = hist.data() + i * 5;
        row[0] = static_cast<double>(history_[i].step);
        row[1] = history_[i].ldm;
        row[2] = history_[i].attr;
        row[3] = history_[i].alpha;
        row[4] = history_[i].total;
    }
    arc.put("history", hist);
    arc.set_meta(meta.dump());
    arc.save(path);
}

TrainState TrainState::load(const std::filesystem::path& path) {
    TensorArchive arc = TensorArchive::load(path);
    nlohmann::json meta = nlohmann::json::parse(arc.meta());
    MG_CHECK_IO(meta.value("kind", "") == "generator_state",
                "not a generator checkpoint: " + path.string());
    MG_CHECK_IO(meta.value("schema", 0) == kCheckpointSchema,
                "unsupported generator checkpoint schema");

    emotion::EmotionClusterStats clusters;
    clusters.mean = arc.get("clusters.mean");
    clusters.std = arc.get("clusters.std");
    clusters.counts = meta.at("cluster_counts").get<std::vector<std::int64_t>>();

    TrainState s = init(config_from_json(meta.at("config")), clusters,
                        meta.at("encoder_fingerprint").get<std::string>(),
                        meta.at("embedder_fingerprint").get<std::string>());
    s.denoiser_->params().load(arc, "den.");
    s.mapping_->params().load(arc, "map.");
    s.opt_denoiser_->load(arc, "optd.");
    s.opt_mapping_->load(arc, "optm.");
    s.rng_.set_state(meta.at("rng").get<std::string>());
    s.step_ = meta.at("step").get<std::int64_t>();

    const Tensor& hist = arc.get("history");
    for (std::int64_t i = 0; i < hist.shape()[0]; ++i) {
        const double* row = hist.data() + i * 5;
        s.history_.push_back({static_cast<std::int64_t>(row[0]), row[1], row[2], row[3], row[4]});
    }
    return s;
}

void TrainState::write_history_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    MG_CHECK_IO(out.good(), "cannot write loss history: " + path.string());
    out << "step,ldm,attr,alpha,total\n";
    char buf[160];
    for (const auto& r : history_) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.step), r.ldm, r.attr, r.alpha, r.total);
        out << buf;
    }
    MG_CHECK_IO(out.good(), "failed writing loss history: " + path.string());
}

namespace {

void save_artifacts(const TrainState& state, const std::filesystem::path& out_dir) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    state.save(out_dir / "checkpoint.bin");
    state.write_history_csv(out_dir / "loss.csv");
}

// Encoder features for every train image, computed once up front in fixed
// chunks (the encoder is frozen, so these are constants during training).
Tensor precompute_features(const emotion::EmotionEncoder& encoder,
                           const std::vector<corpus::LabeledImage>& images) {
    const std::int64_t n = static_cast<std::int64_t>(images.size());
    const std::int64_t dim = encoder.config().feature_dim;
    Tensor out({n, dim});
    const std::int64_t chunk = 64;
    for (std::int64_t start = 0; start < n; start += chunk) {
        const std::int64_t stop = std::min(n, start + chunk);
        std::vector<Tensor> batch;
        batch.reserve(static_cast<std::size_t>(stop - start));
        for (std::int64_t i = start; i < stop; ++i)
            batch.push_back(images[static_cast<std::size_t>(i)].pixels);
        Tensor f = encoder.features(batch);
        std::copy(f.data(), f.data() + f.size(), out.data() + start * dim);
    }
    return out;
}

}  // namespace

TrainState resume_training(TrainState state,
                           const std::vector<corpus::LabeledImage>& train_images,
                           const emotion::EmotionEncoder& encoder,
                           const embedder::JointEmbedder& frozen_embedder,
                           const confidence::ConfidenceMatrix& confidence,
                           std::int64_t total_steps,
                           const std::filesystem::path& out_dir) {
    const GeneratorConfig& cfg = state.config();
    if (total_steps < 0) total_steps = cfg.steps;
    MG_CHECK(!train_images.empty(), "no training images");
    MG_CHECK(state.encoder_fingerprint() == encoder.fingerprint(),
             "emotion encoder does not match the one recorded in this state");
    MG_CHECK(state.embedder_fingerprint() == frozen_embedder.fingerprint(),
             "embedder does not match the one recorded in this state");
    MG_CHECK(frozen_embedder.config().dim == cfg.mapping.joint_dim,
             "embedder dimension does not match the mapping token width");
    MG_CHECK(encoder.config().feature_dim == cfg.mapping.emotion_dim,
             "encoder feature width does not match the mapping input width");

    const std::int64_t k = static_cast<std::int64_t>(confidence.attribute_names.size());
    MG_CHECK(k >= 2, "confidence matrix must cover at least two attributes");
    const std::int64_t hw = cfg.image_size;
    for (const auto& li : train_images) {
        const auto& s = li.pixels.shape();
        MG_CHECK(s.size() == 3 && s[0] == cfg.denoiser.in_channels && s[1] == hw && s[2] == hw,
                 "train image shape does not match the generator config");
        MG_CHECK(li.attribute >= 0 && li.attribute < k,
                 "image attribute index outside the confidence matrix");
    }

    const Tensor texts =
        conditioning::attribute_text_matrix(frozen_embedder, confidence.attribute_names);
    const Tensor features = precompute_features(encoder, train_images);
    const std::string encoder_fp_before = encoder.fingerprint();
    const std::string embedder_fp_before = frozen_embedder.fingerprint();

    std::vector<double> alpha_per_image(train_images.size());
    for (std::size_t i = 0; i < train_images.size(); ++i) {
        alpha_per_image[i] = cfg.fixed_alpha >= 0.0
                                 ? cfg.fixed_alpha
                                 : confidence.lookup(train_images[i].emotion,
                                                     train_images[i].attribute);
    }

    const std::int64_t n = static_cast<std::int64_t>(train_images.size());
    const std::int64_t b = cfg.batch_size;
    const std::int64_t edim = cfg.mapping.emotion_dim;
    const std::int64_t t_max = state.schedule().steps;
    Rng& rng = state.rng();

    while (state.step() < total_steps) {
        const std::int64_t step = state.step() + 1;

        // Fixed draw order per step: indices, timesteps, then noise.
        std::vector<std::size_t> idx(static_cast<std::size_t>(b));
        for (auto& v : idx) v = static_cast<std::size_t>(rng.uniform_int(n));
        std::vector<std::int64_t> tsteps(static_cast<std::size_t>(b));
        for (auto& v : tsteps) v = 1 + static_cast<std::int64_t>(rng.uniform_int(t_max));

        Tensor z_batch({b, cfg.denoiser.in_channels, hw, hw});
        Tensor eps_batch(z_batch.shape());
        Tensor feat_batch({b, edim});
        Tensor w_ldm({b});
        Tensor w_attr({b});
        std::vector<std::int64_t> attr_labels(static_cast<std::size_t>(b));
        double alpha_sum = 0.0;
        const std::int64_t pix = cfg.denoiser.in_channels * hw * hw;
        for (std::int64_t i = 0; i < b; ++i) {
            const auto& li = train_images[idx[static_cast<std::size_t>(i)]];
            Tensor x0(li.pixels.shape());
            for (std::int64_t p = 0; p < pix; ++p)
                x0.data()[p] = 2.0 * li.pixels.data()[p] - 1.0;  // diffusion domain [-1, 1]
            NoisedSample ns =
                forward_noise(state.schedule(), x0, tsteps[static_cast<std::size_t>(i)], rng);
            std::copy(ns.z.data(), ns.z.data() + pix, z_batch.data() + i * pix);
            std::copy(ns.eps.data(), ns.eps.data() + pix, eps_batch.data() + i * pix);
            std::copy(features.data() + static_cast<std::int64_t>(idx[static_cast<std::size_t>(i)]) * edim,
                      features.data() + (static_cast<std::int64_t>(idx[static_cast<std::size_t>(i)]) + 1) * edim,
                      feat_batch.data() + i * edim);
            const double a = alpha_per_image[idx[static_cast<std::size_t>(i)]];
            w_ldm.data()[i] = cfg.train_attr_loss ? 1.0 - a : 1.0;
            w_attr.data()[i] = a;
            attr_labels[static_cast<std::size_t>(i)] = li.attribute;
            alpha_sum += a;
        }

        conditioning::MappedBatch mb = conditioning::map_batch(
            state.mapping(), frozen_embedder, Var::constant(feat_batch));
        Var eps_hat =
            state.denoiser().forward(Var::constant(z_batch), tsteps, mb.token_sequences);
        Var ldm_rows = ldm_loss_per_sample(eps_hat, eps_batch);

        Var total = nn::weighted_mean(ldm_rows, w_ldm);
        double attr_mean = 0.0;
        if (cfg.train_attr_loss) {
            Var attr_rows = conditioning::attribute_loss_rows(mb.v_emos, texts, attr_labels,
                                                              cfg.attr_temperature);
            total = nn::add(total, nn::weighted_mean(attr_rows, w_attr));
            for (std::int64_t i = 0; i < b; ++i) attr_mean += attr_rows.value().data()[i];
            attr_mean /= static_cast<double>(b);
        }

        double ldm_mean = 0.0;
        for (std::int64_t i = 0; i < b; ++i) ldm_mean += ldm_rows.value().data()[i];
        ldm_mean /= static_cast<double>(b);
        const double total_val = total.value().data()[0];

        if (!std::isfinite(total_val) || total_val > cfg.divergence_limit) {
            save_artifacts(state, out_dir);  // last good parameters, pre-update
            throw TrainingDiverged("generator loss diverged at step " + std::to_string(step));
        }

        state.denoiser().params().zero_grads();
        state.mapping().params().zero_grads();
        nn::backward(total);
        if (!cfg.freeze_denoiser) state.denoiser_opt().step();
        state.mapping_opt().step();

        const double alpha_mean =
            cfg.train_attr_loss ? alpha_sum / static_cast<double>(b) : 0.0;
        state.record({step, ldm_mean, attr_mean, alpha_mean, total_val});
    }

    MG_CHECK(encoder.fingerprint() == encoder_fp_before &&
                 frozen_embedder.fingerprint() == embedder_fp_before,
             "frozen stage-1 modules changed during generator training");
    save_artifacts(state, out_dir);
    return state;
}

TrainState train_generator(const std::vector<corpus::LabeledImage>& train_images,
                           const emotion::EmotionEncoder& encoder,
                           const emotion::EmotionClusterStats& clusters,
                           const embedder::JointEmbedder& frozen_embedder,
                           const confidence::ConfidenceMatrix& confidence,
                           const GeneratorConfig& cfg,
                           const std::filesystem::path& out_dir) {
    TrainState state =
        TrainState::init(cfg, clusters, encoder.fingerprint(), frozen_embedder.fingerprint());
    return resume_training(std::move(state), train_images, encoder, frozen_embedder, confidence,
                           cfg.steps, out_dir);
}

std::vector<Tensor> reverse_diffusion(
    const TrainState& state,
    const std::function<Tensor(std::size_t, Rng&)>& tokens_for, std::int64_t n,
    std::uint64_t seed, const GenerateOptions& opts) {
    MG_CHECK(state.step() > 0, "generator state is untrained");
    MG_CHECK(n >= 1, "need at least one image");
    MG_CHECK(opts.batch_size >= 1, "batch size must be positive");
    MG_CHECK(tokens_for != nullptr, "a conditioning provider is required");

    const GeneratorConfig& cfg = state.config();
    const NoiseSchedule& sch = state.schedule();
    const std::int64_t hw = cfg.image_size;
    const std::int64_t c = cfg.denoiser.in_channels;
    const std::int64_t pix = c * hw * hw;

    // One independent stream per image: conditioning draws, initial noise,
    // then the per-step ancestral noise, in that order.
    std::vector<Rng> streams;
    std::vector<Tensor> x(static_cast<std::size_t>(n));
    std::vector<Tensor> tokens(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Rng r(derive_seed(derive_seed(seed, 9000), static_cast<std::uint64_t>(i)));
        tokens[static_cast<std::size_t>(i)] = tokens_for(static_cast<std::size_t>(i), r);
        MG_CHECK(tokens[static_cast<std::size_t>(i)].shape().size() == 2,
                 "conditioning sequences must be [L, D] matrices");
        Tensor xi({c, hw, hw});
        for (std::int64_t p = 0; p < pix; ++p) xi.data()[p] = r.normal();
        x[static_cast<std::size_t>(i)] = std::move(xi);
        streams.push_back(std::move(r));
    }

    for (std::int64_t t = sch.steps; t >= 1; --t) {
        const double alpha = sch.alpha(t);
        const double bar = sch.alpha_bar(t);
        const double bar_prev = sch.alpha_bar(t - 1);
        const double eps_coef = sch.beta(t) / std::sqrt(1.0 - bar);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        const double sigma = t > 1 ? std::sqrt(sch.beta(t) * (1.0 - bar_prev) / (1.0 - bar)) : 0.0;

        for (std::int64_t start = 0; start < n; start += opts.batch_size) {
            const std::int64_t stop = std::min(n, start + opts.batch_size);
            const std::int64_t bsize = stop - start;
            Tensor z_batch({bsize, c, hw, hw});
            std::vector<std::int64_t> tvec(static_cast<std::size_t>(bsize), t);
            std::vector<Var> tok_batch;
            tok_batch.reserve(static_cast<std::size_t>(bsize));
            for (std::int64_t i = 0; i < bsize; ++i) {
                std::copy(x[static_cast<std::size_t>(start + i)].data(),
                          x[static_cast<std::size_t>(start + i)].data() + pix,
                          z_batch.data() + i * pix);
                tok_batch.push_back(Var::constant(tokens[static_cast<std::size_t>(start + i)]));
            }
            Var eps_hat = state.denoiser().forward(Var::constant(z_batch), tvec, tok_batch);
            const double* eh = eps_hat.value().data();
            for (std::int64_t i = 0; i < bsize; ++i) {
                double* xi = x[static_cast<std::size_t>(start + i)].data();
                Rng& r = streams[static_cast<std::size_t>(start + i)];
                for (std::int64_t p = 0; p < pix; ++p) {
                    double mean = inv_sqrt_alpha * (xi[p] - eps_coef * eh[i * pix + p]);
                    MG_CHECK(std::isfinite(mean), "reverse diffusion produced non-finite values");
                    xi[p] = t > 1 ? mean + sigma * r.normal() : mean;
                }
            }
        }
    }

    for (auto& img : x) {
        for (std::int64_t p = 0; p < pix; ++p) {
            const double v = (img.data()[p] + 1.0) / 2.0;  // back to pixel domain
            img.data()[p] = std::clamp(v, 0.0, 1.0);
        }
    }
    return x;
}

std::vector<Tensor> generate(const TrainState& state,
                             const embedder::JointEmbedder& frozen_embedder, int emotion,
                             std::int64_t n, std::uint64_t seed, const GenerateOptions& opts) {
    MG_CHECK(emotion >= 0 && emotion < corpus::kNumEmotions, "emotion index out of range");
    MG_CHECK(state.embedder_fingerprint() == frozen_embedder.fingerprint(),
             "embedder does not match the one recorded in this state");
    const auto tokens_for = [&](std::size_t, Rng& r) {
        Tensor evec = opts.use_mean_emotion
                          ? emotion::mean_emotion(state.clusters(), emotion)
                          : emotion::sample_emotion(state.clusters(), emotion, r);
        return conditioning::map_emotion(state.mapping(), frozen_embedder, evec)
            .token_sequence;
    };
    return reverse_diffusion(state, tokens_for, n, seed, opts);
}

void write_generated_set(const std::filesystem::path& dir, const GeneratedSet& set) {
    MG_CHECK(set.images.size() == set.emotions.size(), "one emotion label per image required");
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.jsonl");
    MG_CHECK_IO(manifest.good(), "cannot write generated manifest in " + dir.string());
    const auto& names = corpus::emotion_names();
    char fname[32];
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        const int e = set.emotions[i];
        MG_CHECK(e >= 0 && e < corpus::kNumEmotions, "emotion label out of range");
        std::snprintf(fname, sizeof(fname), "gen_%05zu.png", i);
        write_png(dir / fname, tensor_to_image(set.images[i]));
        nlohmann::json row;
        row["file"] = fname;
        row["emotion"] = names[static_cast<std::size_t>(e)];
        manifest << row.dump() << '\n';
    }
    MG_CHECK_IO(manifest.good(), "failed writing generated manifest in " + dir.string());
}

GeneratedSet load_generated_set(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.jsonl";
    std::ifstream manifest(manifest_path);
    MG_CHECK_IO(manifest.good(), "cannot open generated manifest: " + manifest_path.string());
    GeneratedSet set;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        nlohmann::json row = nlohmann::json::parse(line);
        set.images.push_back(image_to_tensor(read_png(dir / row.at("file").get<std::string>())));
        set.emotions.push_back(corpus::emotion_index(row.at("emotion").get<std::string>()));
    }
    MG_CHECK_IO(!set.images.empty(), "generated manifest is empty: " + manifest_path.string());
    return set;
}

}  // namespace moodgen::diffusion
