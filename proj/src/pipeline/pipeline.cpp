#include "moodgen/pipeline/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "moodgen/apps/apps.hpp"
#include "moodgen/confidence/confidence.hpp"
#include "moodgen/core/check.hpp"
#include "moodgen/core/hash.hpp"
#include "moodgen/core/image.hpp"
#include "moodgen/corpus/corpus.hpp"

namespace moodgen::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void key_error(const std::string& path, const std::string& what) {
    throw ConfigError("config key '" + path + "': " + what);
}

// Walks one config object, type-checking known keys and rejecting the rest.
class SectionReader {
  public:
    SectionReader(const json* j, std::string path) : j_(j), path_(std::move(path)) {
        if (j_ != nullptr && !j_->is_object())
            throw ConfigError("config section '" + path_ + "' must be an object");
    }

    std::string key_path(const char* key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    void get_double(const char* key, double& out) {
        if (const json* v = look(key)) {
            if (!v->is_number()) key_error(key_path(key), "expected a number");
            out = v->get<double>();
        }
    }
    void get_int(const char* key, int& out) {
        if (const json* v = look(key)) {
            if (!v->is_number_integer()) key_error(key_path(key), "expected an integer");
            out = v->get<int>();
        }
    }
    void get_i64(const char* key, std::int64_t& out) {
        if (const json* v = look(key)) {
            if (!v->is_number_integer()) key_error(key_path(key), "expected an integer");
            out = v->get<std::int64_t>();
        }
    }
    void get_u64(const char* key, std::uint64_t& out) {
        if (const json* v = look(key)) {
            if (!v->is_number_unsigned() && !v->is_number_integer())
                key_error(key_path(key), "expected a nonnegative integer");
            if (v->is_number_integer() && v->get<std::int64_t>() < 0)
                key_error(key_path(key), "expected a nonnegative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void get_bool(const char* key, bool& out) {
        if (const json* v = look(key)) {
            if (!v->is_boolean()) key_error(key_path(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    void get_string(const char* key, std::string& out) {
        if (const json* v = look(key)) {
            if (!v->is_string()) key_error(key_path(key), "expected a string");
            out = v->get<std::string>();
        }
    }
    void get_i64_list(const char* key, std::vector<std::int64_t>& out) {
        if (const json* v = look(key)) {
            if (!v->is_array()) key_error(key_path(key), "expected an array of integers");
            std::vector<std::int64_t> vals;
            for (const auto& e : *v) {
                if (!e.is_number_integer())
                    key_error(key_path(key), "expected an array of integers");
                vals.push_back(e.get<std::int64_t>());
            }
            out = std::move(vals);
        }
    }
    // Marks the key seen and returns the nested object (nullptr when absent).
    const json* subsection(const char* key) {
        if (const json* v = look(key)) {
            if (!v->is_object()) key_error(key_path(key), "expected an object");
            return v;
        }
        return nullptr;
    }

    void finish() const {
        if (j_ == nullptr) return;
        for (const auto& item : j_->items())
            if (seen_.find(item.key()) == seen_.end())
                throw ConfigError("unknown config key '" + key_path(item.key().c_str()) + "'");
    }

  private:
    const json* look(const char* key) {
        seen_.insert(key);
        if (j_ == nullptr) return nullptr;
        auto it = j_->find(key);
        return it == j_->end() ? nullptr : &*it;
    }

    const json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool cond, const std::string& key, const std::string& what) {
    if (!cond) key_error(key, what);
}

int emotion_key(const std::string& key, const std::string& name) {
    try {
        return corpus::emotion_index(name);
    } catch (const ValidationError&) {
        key_error(key, "'" + name + "' is not an emotion name");
    }
}

// The vocabulary the pipeline embedder will be built with (default attribute
// catalog plus the fixed transfer words), for static concept checks.
std::set<std::string> pipeline_vocab() {
    std::set<std::string> words;
    const auto vocab = embedder::JointEmbedder::build_vocab(corpus::default_attributes());
    words.insert(vocab.begin(), vocab.end());
    return words;
}

}  // namespace

PipelineConfig validate_config_json(const json& doc, const ConfigOverrides& overrides) {
    if (!doc.is_object()) throw ConfigError("config root must be an object");
    PipelineConfig cfg;

    SectionReader root(&doc, "");
    root.get_int("schema", cfg.schema);
    require(cfg.schema == PipelineConfig::kSchema, "schema",
            "unsupported value (expected " + std::to_string(PipelineConfig::kSchema) + ")");
    root.get_u64("seed", cfg.seed);
    std::string out = cfg.out.generic_string();
    root.get_string("out", out);
    require(!out.empty(), "out", "must not be empty");
    cfg.out = out;

    {
        SectionReader r(root.subsection("corpus"), "corpus");
        r.get_int("images_per_cell", cfg.corpus.images_per_cell);
        r.get_int("image_size", cfg.corpus.image_size);
        r.get_double("val_fraction", cfg.corpus.val_fraction);
        r.get_bool("degenerate_affinity", cfg.corpus.degenerate_affinity);
        r.finish();
        require(cfg.corpus.images_per_cell >= 1, "corpus.images_per_cell", "must be >= 1");
        require(cfg.corpus.image_size >= 8, "corpus.image_size", "must be >= 8");
        require(cfg.corpus.image_size % 8 == 0, "corpus.image_size",
                "must be divisible by 8 (three stride-2 stages in the classifiers)");
        require(cfg.corpus.val_fraction > 0.0 && cfg.corpus.val_fraction < 1.0,
                "corpus.val_fraction", "must be in (0, 1)");
    }
    {
        SectionReader r(root.subsection("embedder"), "embedder");
        r.get_i64("dim", cfg.embedder.dim);
        r.get_double("temperature", cfg.embedder.temperature);
        r.get_double("lr", cfg.embedder.lr);
        r.get_int("steps", cfg.embedder.steps);
        r.get_int("batch_size", cfg.embedder.batch_size);
        r.finish();
        require(cfg.embedder.dim >= 2, "embedder.dim", "must be >= 2");
        require(cfg.embedder.temperature > 0.0, "embedder.temperature", "must be positive");
        require(cfg.embedder.lr > 0.0, "embedder.lr", "must be positive");
        require(cfg.embedder.steps >= 1, "embedder.steps", "must be >= 1");
        require(cfg.embedder.batch_size >= 2, "embedder.batch_size", "must be >= 2");
    }
    {
        SectionReader r(root.subsection("emotion"), "emotion");
        r.get_int("feature_dim", cfg.emotion.feature_dim);
        r.get_double("lr", cfg.emotion.lr);
        r.get_int("steps", cfg.emotion.steps);
        r.get_int("batch_size", cfg.emotion.batch_size);
        r.finish();
        require(cfg.emotion.feature_dim >= 1, "emotion.feature_dim", "must be >= 1");
        require(cfg.emotion.lr > 0.0, "emotion.lr", "must be positive");
        require(cfg.emotion.steps >= 1, "emotion.steps", "must be >= 1");
        require(cfg.emotion.batch_size >= 1, "emotion.batch_size", "must be >= 1");
    }
    {
        SectionReader r(root.subsection("confidence"), "confidence");
        r.get_bool("separate_classifier", cfg.confidence.separate_classifier);
        r.finish();
    }
    {
        SectionReader r(root.subsection("attribute_classifier"), "attribute_classifier");
        r.get_int("feature_dim", cfg.attribute_classifier.feature_dim);
        r.get_double("lr", cfg.attribute_classifier.lr);
        r.get_int("steps", cfg.attribute_classifier.steps);
        r.get_int("batch_size", cfg.attribute_classifier.batch_size);
        r.finish();
        require(cfg.attribute_classifier.feature_dim >= 1, "attribute_classifier.feature_dim",
                "must be >= 1");
        require(cfg.attribute_classifier.lr > 0.0, "attribute_classifier.lr",
                "must be positive");
        require(cfg.attribute_classifier.steps >= 1, "attribute_classifier.steps",
                "must be >= 1");
        require(cfg.attribute_classifier.batch_size >= 1, "attribute_classifier.batch_size",
                "must be >= 1");
    }
    {
        SectionReader r(root.subsection("generator"), "generator");
        r.get_i64("timesteps", cfg.generator.timesteps);
        r.get_double("beta_start", cfg.generator.beta_start);
        r.get_double("beta_end", cfg.generator.beta_end);
        r.get_i64("steps", cfg.generator.steps);
        r.get_i64("batch_size", cfg.generator.batch_size);
        r.get_double("lr_denoiser", cfg.generator.lr_denoiser);
        r.get_double("lr_mapping", cfg.generator.lr_mapping);
        r.get_double("attr_temperature", cfg.generator.attr_temperature);
        r.get_bool("freeze_denoiser", cfg.generator.freeze_denoiser);
        r.get_bool("train_attr_loss", cfg.generator.train_attr_loss);
        r.get_double("fixed_alpha", cfg.generator.fixed_alpha);
        {
            SectionReader d(r.subsection("denoiser"), "generator.denoiser");
            d.get_i64_list("channels", cfg.generator.denoiser.channels);
            d.get_int("groups", cfg.generator.denoiser.groups);
            d.get_i64("time_dim", cfg.generator.denoiser.time_dim);
            d.get_i64("cond_dim", cfg.generator.denoiser.cond_dim);
            d.get_i64("attn_dim", cfg.generator.denoiser.attn_dim);
            d.finish();
        }
        {
            SectionReader m(r.subsection("mapping"), "generator.mapping");
            m.get_int("seed_tokens", cfg.generator.mapping.seed_tokens);
            m.get_int("hidden_mult", cfg.generator.mapping.hidden_mult);
            m.finish();
        }
        r.finish();

        require(cfg.generator.timesteps >= 2, "generator.timesteps", "must be >= 2");
        require(cfg.generator.beta_start > 0.0, "generator.beta_start", "must be positive");
        require(cfg.generator.beta_end < 1.0, "generator.beta_end", "must be below 1");
        require(cfg.generator.beta_start < cfg.generator.beta_end, "generator.beta_end",
                "must exceed beta_start");
        require(cfg.generator.steps >= 1, "generator.steps", "must be >= 1");
        require(cfg.generator.batch_size >= 1, "generator.batch_size", "must be >= 1");
        require(cfg.generator.lr_denoiser > 0.0, "generator.lr_denoiser", "must be positive");
        require(cfg.generator.lr_mapping > 0.0, "generator.lr_mapping", "must be positive");
        require(cfg.generator.attr_temperature > 0.0, "generator.attr_temperature",
                "must be positive");
        require(cfg.generator.fixed_alpha <= 1.0, "generator.fixed_alpha",
                "must be <= 1 (negative disables the override)");
        const auto& ch = cfg.generator.denoiser.channels;
        require(ch.size() >= 2, "generator.denoiser.channels", "need at least two levels");
        for (std::int64_t c : ch)
            require(c >= 1, "generator.denoiser.channels", "entries must be >= 1");
        require(cfg.generator.denoiser.groups >= 1, "generator.denoiser.groups",
                "must be >= 1");
        for (std::int64_t c : ch)
            require(c % cfg.generator.denoiser.groups == 0, "generator.denoiser.channels",
                    "every level must be divisible by groups");
        require(cfg.generator.denoiser.time_dim >= 2 &&
                    cfg.generator.denoiser.time_dim % 2 == 0,
                "generator.denoiser.time_dim", "must be even and >= 2");
        require(cfg.generator.denoiser.cond_dim >= 1, "generator.denoiser.cond_dim",
                "must be >= 1");
        require(cfg.generator.denoiser.attn_dim >= 1, "generator.denoiser.attn_dim",
                "must be >= 1");
        require(cfg.generator.mapping.seed_tokens >= 1, "generator.mapping.seed_tokens",
                "must be >= 1");
        require(cfg.generator.mapping.hidden_mult >= 0, "generator.mapping.hidden_mult",
                "must be >= 0 (0 selects the plain linear map)");
        const int down = 1 << (static_cast<int>(ch.size()) - 1);
        require(cfg.corpus.image_size % down == 0, "corpus.image_size",
                "must be divisible by 2^(generator levels - 1) = " + std::to_string(down));
    }
    {
        SectionReader r(root.subsection("evaluate"), "evaluate");
        r.get_int("images_per_emotion", cfg.evaluate.images_per_emotion);
        r.get_i64("batch_size", cfg.evaluate.batch_size);
        r.get_bool("use_mean_emotion", cfg.evaluate.use_mean_emotion);
        r.finish();
        require(cfg.evaluate.images_per_emotion >= 2, "evaluate.images_per_emotion",
                "must be >= 2 (per-emotion diversity needs pairs)");
        require(cfg.evaluate.batch_size >= 1, "evaluate.batch_size", "must be >= 1");
        require(static_cast<std::int64_t>(corpus::kNumEmotions) *
                        cfg.evaluate.images_per_emotion >=
                    cfg.embedder.dim + 1,
                "evaluate.images_per_emotion",
                "generated set must reach embedder.dim + 1 samples for the distance metric");
    }
    {
        SectionReader r(root.subsection("apps"), "apps");
        r.get_bool("enabled", cfg.apps.enabled);
        r.get_string("decompose_emotion", cfg.apps.decompose_emotion);
        r.get_int("decompose_samples", cfg.apps.decompose_samples);
        r.get_int("decompose_topk", cfg.apps.decompose_topk);
        r.get_string("transfer_emotion", cfg.apps.transfer_emotion);
        r.get_string("transfer_concept", cfg.apps.transfer_concept);
        r.get_string("fuse_a", cfg.apps.fuse_a);
        r.get_string("fuse_b", cfg.apps.fuse_b);
        r.get_double("fuse_weight", cfg.apps.fuse_weight);
        r.get_int("images", cfg.apps.images);
        r.finish();
        emotion_key("apps.decompose_emotion", cfg.apps.decompose_emotion);
        emotion_key("apps.transfer_emotion", cfg.apps.transfer_emotion);
        emotion_key("apps.fuse_a", cfg.apps.fuse_a);
        emotion_key("apps.fuse_b", cfg.apps.fuse_b);
        require(cfg.apps.decompose_samples >= 1, "apps.decompose_samples", "must be >= 1");
        const int catalog = static_cast<int>(corpus::default_attributes().size());
        require(cfg.apps.decompose_topk >= 1 && cfg.apps.decompose_topk <= catalog,
                "apps.decompose_topk",
                "must be in [1, " + std::to_string(catalog) + "]");
        require(cfg.apps.fuse_weight >= 0.0 && cfg.apps.fuse_weight <= 1.0,
                "apps.fuse_weight", "must be in [0, 1]");
        require(cfg.apps.images >= 1, "apps.images", "must be >= 1");
        require(!cfg.apps.transfer_concept.empty(), "apps.transfer_concept",
                "must not be empty");
        const auto vocab = pipeline_vocab();
        std::istringstream ss(cfg.apps.transfer_concept);
        std::string word;
        while (ss >> word)
            require(vocab.count(word) == 1, "apps.transfer_concept",
                    "'" + word + "' is not in the embedder vocabulary");
    }
    root.finish();

    if (overrides.seed) cfg.seed = *overrides.seed;
    if (overrides.out) cfg.out = *overrides.out;

    // Wire the quantities that are invariants across modules rather than
    // free knobs, and derive every stage seed from the global one.
    cfg.generator.image_size = cfg.corpus.image_size;
    cfg.generator.denoiser.in_channels = 3;
    cfg.generator.denoiser.context_dim = static_cast<int>(cfg.embedder.dim);
    cfg.generator.mapping.emotion_dim = cfg.emotion.feature_dim;
    cfg.generator.mapping.joint_dim = static_cast<int>(cfg.embedder.dim);
    cfg.embedder.seed = derive_seed(cfg.seed, 2);
    cfg.emotion.seed = derive_seed(cfg.seed, 3);
    cfg.attribute_classifier.seed = derive_seed(cfg.seed, 4);
    cfg.generator.seed = derive_seed(cfg.seed, 5);
    cfg.generator.denoiser.seed = derive_seed(cfg.seed, 51);
    cfg.generator.mapping.seed = derive_seed(cfg.seed, 52);
    return cfg;
}

PipelineConfig validate_config(const fs::path& path, const ConfigOverrides& overrides) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("config file not found: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const bool blank =
        std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
    json doc = blank ? json::object() : json::parse(text, nullptr, false);
    if (doc.is_discarded())
        throw ConfigError("config file is not valid JSON: " + path.string());
    return validate_config_json(doc, overrides);
}

json resolved_json(const PipelineConfig& cfg) {
    json j;
    j["schema"] = cfg.schema;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out.generic_string();
    j["corpus"] = {{"images_per_cell", cfg.corpus.images_per_cell},
                   {"image_size", cfg.corpus.image_size},
                   {"val_fraction", cfg.corpus.val_fraction},
                   {"degenerate_affinity", cfg.corpus.degenerate_affinity}};
    j["embedder"] = {{"dim", cfg.embedder.dim},
                     {"temperature", cfg.embedder.temperature},
                     {"lr", cfg.embedder.lr},
                     {"steps", cfg.embedder.steps},
                     {"batch_size", cfg.embedder.batch_size}};
    j["emotion"] = {{"feature_dim", cfg.emotion.feature_dim},
                    {"lr", cfg.emotion.lr},
                    {"steps", cfg.emotion.steps},
                    {"batch_size", cfg.emotion.batch_size}};
    j["confidence"] = {{"separate_classifier", cfg.confidence.separate_classifier}};
    j["attribute_classifier"] = {{"feature_dim", cfg.attribute_classifier.feature_dim},
                                 {"lr", cfg.attribute_classifier.lr},
                                 {"steps", cfg.attribute_classifier.steps},
                                 {"batch_size", cfg.attribute_classifier.batch_size}};
    j["generator"] = {{"timesteps", cfg.generator.timesteps},
                      {"beta_start", cfg.generator.beta_start},
                      {"beta_end", cfg.generator.beta_end},
                      {"steps", cfg.generator.steps},
                      {"batch_size", cfg.generator.batch_size},
                      {"lr_denoiser", cfg.generator.lr_denoiser},
                      {"lr_mapping", cfg.generator.lr_mapping},
                      {"attr_temperature", cfg.generator.attr_temperature},
                      {"freeze_denoiser", cfg.generator.freeze_denoiser},
                      {"train_attr_loss", cfg.generator.train_attr_loss},
                      {"fixed_alpha", cfg.generator.fixed_alpha},
                      {"denoiser",
                       {{"channels", cfg.generator.denoiser.channels},
                        {"groups", cfg.generator.denoiser.groups},
                        {"time_dim", cfg.generator.denoiser.time_dim},
                        {"cond_dim", cfg.generator.denoiser.cond_dim},
                        {"attn_dim", cfg.generator.denoiser.attn_dim}}},
                      {"mapping",
                       {{"seed_tokens", cfg.generator.mapping.seed_tokens},
                        {"hidden_mult", cfg.generator.mapping.hidden_mult}}}};
    j["evaluate"] = {{"images_per_emotion", cfg.evaluate.images_per_emotion},
                     {"batch_size", cfg.evaluate.batch_size},
                     {"use_mean_emotion", cfg.evaluate.use_mean_emotion}};
    j["apps"] = {{"enabled", cfg.apps.enabled},
                 {"decompose_emotion", cfg.apps.decompose_emotion},
                 {"decompose_samples", cfg.apps.decompose_samples},
                 {"decompose_topk", cfg.apps.decompose_topk},
                 {"transfer_emotion", cfg.apps.transfer_emotion},
                 {"transfer_concept", cfg.apps.transfer_concept},
                 {"fuse_a", cfg.apps.fuse_a},
                 {"fuse_b", cfg.apps.fuse_b},
                 {"fuse_weight", cfg.apps.fuse_weight},
                 {"images", cfg.apps.images}};
    return j;
}

namespace {

// In-memory handles carried between stages of one run.
struct Ctx {
    corpus::CorpusManifest manifest;
    std::string corpus_hash;
    std::vector<corpus::LabeledImage> train;
    std::vector<corpus::LabeledImage> val;
    std::optional<embedder::JointEmbedder> embedder;
    std::optional<emotion::EmotionEncoder> encoder;
    emotion::EmotionClusterStats clusters;
    confidence::ConfidenceMatrix confidence;
    std::optional<metrics::AttributeClassifier> attribute;
    std::optional<diffusion::TrainState> state;
};

struct Paths {
    fs::path root, corpus, models, stamps, generator, generated, apps;
    explicit Paths(const fs::path& out)
        : root(out),
          corpus(out / "corpus"),
          models(out / "models"),
          stamps(out / "stamps"),
          generator(out / "generator"),
          generated(out / "generated"),
          apps(out / "apps") {}
};

bool stamp_matches(const Paths& io, const std::string& stage, const std::string& sig) {
    std::ifstream in(io.stamps / (stage + ".sig"));
    if (!in.good()) return false;
    std::string stored;
    std::getline(in, stored);
    return stored == sig;
}

void write_stamp(const Paths& io, const std::string& stage, const std::string& sig) {
    std::ofstream out(io.stamps / (stage + ".sig"));
    MG_CHECK_IO(out.good(), "cannot write stage stamp for " + stage);
    out << sig << '\n';
}

template <typename F>
void stage(RunResult& res, const std::string& name, F&& body) {
    try {
        res.stages[name] = body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::string sig_of(std::initializer_list<std::string> parts) {
    Fnv64 h;
    for (const auto& p : parts) {
        h.update(p);
        h.update_pod('\x1f');
    }
    return h.hex();
}

std::vector<std::string> attribute_names_of(const corpus::CorpusManifest& m) {
    std::vector<std::string> names;
    for (const auto& a : m.attributes) names.push_back(a.name);
    return names;
}

void write_image_dir(const fs::path& dir, const std::vector<Tensor>& images,
                     const std::string& prefix) {
    fs::create_directories(dir);
    char name[64];
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof(name), "%s_%03zu.png", prefix.c_str(), i);
        write_png(dir / name, tensor_to_image(images[i]));
    }
    write_png(dir / (prefix + "_sheet.png"),
              tensor_to_image(apps::contact_sheet(images, 4)));
}

}  // namespace

RunResult run_pipeline_until(const PipelineConfig& cfg, const std::string& last_stage) {
    const auto* order_begin = std::begin(kStageOrder);
    const auto* order_end = std::end(kStageOrder);
    const auto* last_it = std::find_if(order_begin, order_end, [&](const char* s) {
        return last_stage == s;
    });
    MG_CHECK(last_it != order_end, "unknown stage name: " + last_stage);
    const auto want = [&](const char* s) {
        return std::find_if(order_begin, order_end,
                            [&](const char* t) { return std::string(s) == t; }) <= last_it;
    };

    Paths io(cfg.out);
    fs::create_directories(io.models);
    fs::create_directories(io.stamps);

    const json resolved = resolved_json(cfg);
    {
        std::ofstream out(io.root / "resolved.json");
        MG_CHECK_IO(out.good(), "cannot write resolved config");
        out << resolved.dump(2) << '\n';
    }
    const std::string seed_str = std::to_string(cfg.seed);

    RunResult res;
    res.run_dir = io.root;
    Ctx ctx;

    stage(res, "corpus", [&] {
        const std::string sig =
            sig_of({"corpus", resolved["corpus"].dump(), seed_str, "catalog:default"});
        StageStatus status = StageStatus::computed;
        if (fs::exists(io.corpus / "manifest.jsonl") && fs::exists(io.corpus / "meta.json") &&
            stamp_matches(io, "corpus", sig)) {
            status = StageStatus::skipped;
        } else {
            corpus::CorpusConfig cc;
            cc.out_dir = io.corpus;
            cc.seed = derive_seed(cfg.seed, 1);
            cc.images_per_cell = cfg.corpus.images_per_cell;
            cc.image_size = cfg.corpus.image_size;
            cc.val_fraction = cfg.corpus.val_fraction;
            if (cfg.corpus.degenerate_affinity)
                cc.affinity = corpus::degenerate_affinity(cc.attributes);
            corpus::generate_corpus(cc);
            write_stamp(io, "corpus", sig);
        }
        ctx.manifest = corpus::load_manifest(io.corpus);
        ctx.corpus_hash = hash_string(hash_file(io.corpus / "manifest.jsonl") +
                                      hash_file(io.corpus / "meta.json"));
        ctx.train = corpus::load_images(ctx.manifest, corpus::Split::train);
        ctx.val = corpus::load_images(ctx.manifest, corpus::Split::val);
        return status;
    });
    if (!want("embedder")) return res;

    stage(res, "embedder", [&] {
        const std::string sig =
            sig_of({"embedder", resolved["embedder"].dump(), ctx.corpus_hash, seed_str});
        const fs::path path = io.models / "embedder.bin";
        if (fs::exists(path) && stamp_matches(io, "embedder", sig)) {
            ctx.embedder.emplace(embedder::JointEmbedder::load(path));
            return StageStatus::skipped;
        }
        ctx.embedder.emplace(cfg.embedder,
                             embedder::JointEmbedder::build_vocab(ctx.manifest.attributes));
        ctx.embedder->train(ctx.train, ctx.manifest.attributes);
        ctx.embedder->save(path, ctx.corpus_hash);
        write_stamp(io, "embedder", sig);
        return StageStatus::computed;
    });
    if (!want("emotion")) return res;

    stage(res, "emotion", [&] {
        const std::string sig =
            sig_of({"emotion", resolved["emotion"].dump(), ctx.corpus_hash, seed_str});
        const fs::path enc_path = io.models / "emotion.bin";
        const fs::path cl_path = io.models / "clusters.bin";
        if (fs::exists(enc_path) && fs::exists(cl_path) && stamp_matches(io, "emotion", sig)) {
            ctx.encoder.emplace(emotion::EmotionEncoder::load(enc_path));
            ctx.clusters = emotion::EmotionClusterStats::load(cl_path);
            return StageStatus::skipped;
        }
        ctx.encoder.emplace(cfg.emotion);
        ctx.encoder->train(ctx.train);
        ctx.encoder->save(enc_path, ctx.corpus_hash);
        ctx.clusters = emotion::fit_clusters(*ctx.encoder, ctx.train);
        ctx.clusters.save(cl_path);
        write_stamp(io, "emotion", sig);
        return StageStatus::computed;
    });
    if (!want("confidence")) return res;

    stage(res, "confidence", [&] {
        const std::string sig = sig_of(
            {"confidence", resolved["confidence"].dump(), resolved["emotion"].dump(),
             ctx.corpus_hash, ctx.encoder->fingerprint(), seed_str});
        const fs::path path = io.models / "confidence.csv";
        const fs::path sep_path = io.models / "confidence_encoder.bin";
        const bool sep = cfg.confidence.separate_classifier;
        if (fs::exists(path) && (!sep || fs::exists(sep_path)) &&
            stamp_matches(io, "confidence", sig)) {
            ctx.confidence = confidence::ConfidenceMatrix::load(path);
            return StageStatus::skipped;
        }
        if (sep) {
            emotion::EmotionEncoderConfig held = cfg.emotion;
            held.seed = derive_seed(cfg.seed, 6);
            emotion::EmotionEncoder held_enc(held);
            held_enc.train(ctx.val);
            held_enc.save(sep_path, ctx.corpus_hash);
            ctx.confidence = confidence::compute_confidence(held_enc, ctx.manifest, ctx.train);
        } else {
            ctx.confidence =
                confidence::compute_confidence(*ctx.encoder, ctx.manifest, ctx.train);
        }
        ctx.confidence.save(path);
        write_stamp(io, "confidence", sig);
        return StageStatus::computed;
    });
    if (!want("attribute")) return res;

    stage(res, "attribute", [&] {
        const std::string sig = sig_of({"attribute", resolved["attribute_classifier"].dump(),
                                        ctx.corpus_hash, seed_str});
        const fs::path path = io.models / "attribute.bin";
        if (fs::exists(path) && stamp_matches(io, "attribute", sig)) {
            ctx.attribute.emplace(metrics::AttributeClassifier::load(path));
            return StageStatus::skipped;
        }
        ctx.attribute.emplace(attribute_names_of(ctx.manifest), cfg.attribute_classifier);
        ctx.attribute->train(ctx.train);
        ctx.attribute->save(path, ctx.corpus_hash);
        write_stamp(io, "attribute", sig);
        return StageStatus::computed;
    });
    if (!want("generator")) return res;

    stage(res, "generator", [&] {
        const std::string sig =
            sig_of({"generator", resolved["generator"].dump(), ctx.corpus_hash,
                    ctx.embedder->fingerprint(), ctx.encoder->fingerprint(),
                    hash_file(io.models / "confidence.csv"), seed_str});
        const fs::path path = io.generator / "checkpoint.bin";
        if (fs::exists(path) && stamp_matches(io, "generator", sig)) {
            ctx.state.emplace(diffusion::TrainState::load(path));
            return StageStatus::skipped;
        }
        ctx.state.emplace(diffusion::train_generator(ctx.train, *ctx.encoder, ctx.clusters,
                                                     *ctx.embedder, ctx.confidence,
                                                     cfg.generator, io.generator));
        write_stamp(io, "generator", sig);
        return StageStatus::computed;
    });
    if (!want("evaluate")) return res;

    stage(res, "evaluate", [&] {
        const std::string sig =
            sig_of({"evaluate", resolved["evaluate"].dump(),
                    hash_file(io.generator / "checkpoint.bin"), ctx.attribute->fingerprint(),
                    ctx.encoder->fingerprint(), ctx.embedder->fingerprint(), ctx.corpus_hash,
                    seed_str});
        const fs::path report_path = io.root / "report.json";
        if (fs::exists(report_path) && fs::exists(io.generated / "manifest.jsonl") &&
            stamp_matches(io, "evaluate", sig)) {
            res.report = metrics::MetricsReport::load_json(report_path);
            return StageStatus::skipped;
        }
        diffusion::GenerateOptions gopts;
        gopts.batch_size = cfg.evaluate.batch_size;
        gopts.use_mean_emotion = cfg.evaluate.use_mean_emotion;
        diffusion::GeneratedSet set;
        const std::uint64_t gen_seed = derive_seed(cfg.seed, 7);
        for (int e = 0; e < corpus::kNumEmotions; ++e) {
            auto imgs = diffusion::generate(*ctx.state, *ctx.embedder, e,
                                            cfg.evaluate.images_per_emotion,
                                            derive_seed(gen_seed, static_cast<std::uint64_t>(e)),
                                            gopts);
            for (auto& img : imgs) {
                set.images.push_back(std::move(img));
                set.emotions.push_back(e);
            }
        }
        diffusion::write_generated_set(io.generated, set);
        res.report = metrics::evaluate(*ctx.embedder, *ctx.encoder, *ctx.attribute, ctx.val, set);
        res.report.save_json(report_path);
        res.report.save_csv(io.root / "report.csv");
        write_stamp(io, "evaluate", sig);
        return StageStatus::computed;
    });
    if (!want("apps")) return res;

    stage(res, "apps", [&] {
        if (!cfg.apps.enabled) return StageStatus::disabled;
        const std::string sig =
            sig_of({"apps", resolved["apps"].dump(),
                    hash_file(io.generator / "checkpoint.bin"), ctx.embedder->fingerprint(),
                    seed_str});
        if (fs::exists(io.apps / "decompose.json") && stamp_matches(io, "apps", sig))
            return StageStatus::skipped;
        fs::create_directories(io.apps);

        const auto names = attribute_names_of(ctx.manifest);
        const auto dec = apps::decompose(*ctx.state, *ctx.embedder, names,
                                         corpus::emotion_index(cfg.apps.decompose_emotion),
                                         cfg.apps.decompose_samples, cfg.apps.decompose_topk,
                                         derive_seed(cfg.seed, 81));
        json dj;
        dj["emotion"] = cfg.apps.decompose_emotion;
        dj["ranked"] = json::array();
        for (const auto& r : dec.ranked)
            dj["ranked"].push_back({{"attribute", r.attribute}, {"score", r.score}});
        {
            std::ofstream out(io.apps / "decompose.json");
            MG_CHECK_IO(out.good(), "cannot write decompose.json");
            out << dj.dump(2) << '\n';
        }

        apps::TransferOptions topts;
        topts.generate.batch_size = cfg.evaluate.batch_size;
        write_image_dir(io.apps / "transfer",
                        apps::transfer(*ctx.state, *ctx.embedder,
                                       corpus::emotion_index(cfg.apps.transfer_emotion),
                                       cfg.apps.transfer_concept, cfg.apps.images,
                                       derive_seed(cfg.seed, 82), topts),
                        cfg.apps.transfer_emotion + "_" + cfg.apps.transfer_concept);

        apps::FuseOptions fopts;
        fopts.generate.batch_size = cfg.evaluate.batch_size;
        write_image_dir(io.apps / "fuse",
                        apps::fuse(*ctx.state, *ctx.embedder,
                                   corpus::emotion_index(cfg.apps.fuse_a),
                                   corpus::emotion_index(cfg.apps.fuse_b),
                                   cfg.apps.fuse_weight, cfg.apps.images,
                                   derive_seed(cfg.seed, 83), fopts),
                        cfg.apps.fuse_a + "_" + cfg.apps.fuse_b);
        write_stamp(io, "apps", sig);
        return StageStatus::computed;
    });

    return res;
}

RunResult run_pipeline(const PipelineConfig& cfg) { return run_pipeline_until(cfg, "apps"); }

}  // namespace moodgen::pipeline
