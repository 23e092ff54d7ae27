#include "moodgen/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "moodgen/core/check.hpp"
#include "moodgen/core/image.hpp"

namespace moodgen::corpus {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

const std::vector<std::string>& emotion_names() {
    static const std::vector<std::string> names{"amusement", "awe",     "contentment", "excitement",
                                                "anger",     "disgust", "fear",        "sadness"};
    return names;
}

int emotion_index(const std::string& name) {
    const auto& names = emotion_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ValidationError("unknown emotion: " + name);
}

const std::vector<AttributeSpec>& default_attributes() {
    using K = AttributeKind;
    static const std::vector<AttributeSpec> attrs{
        {"toy", K::object, 0},           {"amusement_park", K::scene, 0},
        {"mountain_snowy", K::scene, 1}, {"ocean", K::scene, 1},
        {"picnic", K::scene, 2},         {"sofa", K::object, 2},
        {"surfboard", K::object, 3},     {"athletic_field", K::scene, 3},
        {"flag", K::object, 4},          {"riot", K::scene, 4},
        {"garbage", K::object, 5},       {"swamp", K::scene, 5},
        {"spider", K::object, 6},        {"dark_forest", K::scene, 6},
        {"wilted_flower", K::object, 7}, {"cemetery", K::scene, 7},
        {"tree", K::object, -1},         {"room", K::scene, -1},
    };
    return attrs;
}

int attribute_index(const std::vector<AttributeSpec>& attrs, const std::string& name) {
    for (std::size_t i = 0; i < attrs.size(); ++i)
        if (attrs[i].name == name) return static_cast<int>(i);
    throw ValidationError("unknown attribute: " + name);
}

Tensor default_affinity(const std::vector<AttributeSpec>& attrs) {
    const auto k = static_cast<std::int64_t>(attrs.size());
    Tensor a({kNumEmotions, k});
    for (std::int64_t j = 0; j < k; ++j) {
        const int owner = attrs[static_cast<std::size_t>(j)].specific_emotion;
        for (std::int64_t i = 0; i < kNumEmotions; ++i) {
            if (owner < 0)
                a[i * k + j] = 1.0 / kNumEmotions;
            else
                a[i * k + j] = (i == owner) ? 0.65 : 0.05;
        }
    }
    return a;
}

Tensor degenerate_affinity(const std::vector<AttributeSpec>& attrs) {
    const auto k = static_cast<std::int64_t>(attrs.size());
    Tensor a({kNumEmotions, k});
    for (std::int64_t j = 0; j < k; ++j) {
        const int owner = attrs[static_cast<std::size_t>(j)].specific_emotion;
        for (std::int64_t i = 0; i < kNumEmotions; ++i) {
            if (owner < 0)
                a[i * k + j] = 1.0 / kNumEmotions;
            else
                a[i * k + j] = (i == owner) ? 1.0 : 0.0;
        }
    }
    return a;
}

std::string split_name(Split s) { return s == Split::train ? "train" : "val"; }

namespace {

std::string kind_name(AttributeKind k) { return k == AttributeKind::object ? "object" : "scene"; }

AttributeKind parse_kind(const std::string& s) {
    if (s == "object") return AttributeKind::object;
    if (s == "scene") return AttributeKind::scene;
    throw IoError("bad attribute kind in manifest: " + s);
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    throw IoError("bad split in manifest: " + s);
}

struct Palette {
    double pr, pg, pb;  // primary (motif)
    double sr, sg, sb;  // secondary (background)
};

// One palette per emotion; emotions differ by color statistics while
// attributes differ by geometry, so the two label axes stay separable.
const Palette& palette(int emotion) {
    static const Palette p[kNumEmotions] = {
        {1.00, 0.85, 0.20, 1.00, 0.60, 0.80},  // amusement
        {0.15, 0.30, 0.80, 0.40, 0.80, 0.95},  // awe
        {0.50, 0.80, 0.45, 0.90, 0.85, 0.70},  // contentment
        {1.00, 0.45, 0.10, 0.95, 0.15, 0.30},  // excitement
        {0.85, 0.10, 0.10, 0.25, 0.05, 0.05},  // anger
        {0.55, 0.60, 0.15, 0.40, 0.30, 0.10},  // disgust
        {0.35, 0.10, 0.50, 0.15, 0.15, 0.20},  // fear
        {0.45, 0.55, 0.65, 0.20, 0.25, 0.40},  // sadness
    };
    return p[emotion];
}

// Motif geometry depends on both the family and the size tier (freq = 1, 2, 3)
// so every attribute in the default catalog differs in coarse statistics that
// survive heavy downsampling: coverage fraction, edge density, orientation and
// repetition count. Fine contour detail alone does not survive a 32x32 render.
bool inside_motif(int family, double u, double v, double s, double freq, double phase,
                  double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double ru = u * ca + v * sa;
    const double rv = -u * sa + v * ca;
    const double r = std::sqrt(u * u + v * v);
    const int tier = (int)freq;
    switch (family) {
        case 0: {  // disk, radius grows sharply with tier
            const double rad = (tier == 1 ? 0.30 : tier == 2 ? 0.52 : 0.76) * s;
            return r < rad;
        }
        case 1: {  // annuli: one thin ring, two thin rings, or one thick band
            if (tier == 1) return r > 0.54 * s && r < 0.72 * s;
            if (tier == 2)
                return (r > 0.54 * s && r < 0.72 * s) || (r > 0.22 * s && r < 0.38 * s);
            return r > 0.40 * s && r < 0.78 * s;
        }
        case 2: {  // wedges: single triangle vs opposing pair (hourglass)
            const bool up = rv > -0.55 * s && rv < 0.5 * s && std::abs(ru) < (rv + 0.55 * s) * 0.7;
            if (tier == 1) return up;
            const bool down = rv<0.55 * s && rv> - 0.5 * s && std::abs(ru) < (0.55 * s - rv) * 0.7;
            return up || down;
        }
        case 3:  // parallel bars, stripe count doubles per tier
            return std::sin(freq * kPi * ru * 2.0 + phase) > 0.25;
        case 4:  // checker, cell count doubles per tier
            return std::sin(freq * kPi * ru * 2.0 + phase) * std::sin(freq * kPi * rv * 2.0) > 0.0;
        case 5: {  // plus sign vs thin six-armed asterisk
            if (tier == 1)
                return (std::abs(ru) < 0.17 * s || std::abs(rv) < 0.17 * s) && r < 0.72 * s;
            const double th = std::atan2(rv, ru);
            return std::abs(std::cos(3.0 * th)) > 0.78 && r < 0.75 * s;
        }
        case 6: {  // dot grid, (freq+1)^2 dots
            const double g = freq + 1.0;
            const double gu = g * (u + 1.0) - std::floor(g * (u + 1.0)) - 0.5;
            const double gv = g * (v + 1.0) - std::floor(g * (v + 1.0)) - 0.5;
            return std::sqrt(gu * gu + gv * gv) < 0.33;
        }
        default: {  // hollow square frame vs four corner blocks
            if (tier == 1) {
                const double m = std::max(std::abs(ru), std::abs(rv));
                return m > 0.52 * s && m < 0.74 * s;
            }
            const double bu = std::abs(std::abs(ru) - 0.42 * s);
            const double bv = std::abs(std::abs(rv) - 0.42 * s);
            return std::max(bu, bv) < 0.19 * s;
        }
    }
}

}  // namespace

Tensor render_image(const AttributeSpec&, int attr_index, int emotion, int image_size,
                    Rng& rng) {
    MG_CHECK(emotion >= 0 && emotion < kNumEmotions, "render_image: emotion out of range");
    const int family = attr_index % 8;
    const double freq = 1.0 + attr_index / 8;  // texture frequency tier
    const Palette& pal = palette(emotion);

    const double cx = rng.uniform(-0.22, 0.22);
    const double cy = rng.uniform(-0.22, 0.22);
    const double scale = rng.uniform(0.75, 1.1);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double phase2 = rng.uniform(0.0, 2.0 * kPi);
    const double angle = rng.uniform(-0.17, 0.17);

    const std::int64_t n = image_size;
    Tensor img({3, n, n});
    for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) {
            const double u = ((x + 0.5) / image_size) * 2.0 - 1.0 - cx;
            const double v = ((y + 0.5) / image_size) * 2.0 - 1.0 - cy;
            double r, g, b;
            if (inside_motif(family, u, v, scale, freq, phase, angle)) {
                const double m = 0.85 + 0.15 * std::sin(2.0 * kPi * freq * u + phase);
                r = pal.pr * m;
                g = pal.pg * m;
                b = pal.pb * m;
            } else {
                const double m = 0.80 + 0.20 * std::sin(kPi * freq * (u + v) + phase2);
                r = pal.sr * m;
                g = pal.sg * m;
                b = pal.sb * m;
            }
            r += rng.uniform(-0.04, 0.04);
            g += rng.uniform(-0.04, 0.04);
            b += rng.uniform(-0.04, 0.04);
            img[0 * n * n + y * n + x] = std::clamp(r, 0.0, 1.0);
            img[1 * n * n + y * n + x] = std::clamp(g, 0.0, 1.0);
            img[2 * n * n + y * n + x] = std::clamp(b, 0.0, 1.0);
        }
    return img;
}

namespace {

void validate_affinity(const Tensor& a, std::int64_t k) {
    MG_CHECK(a.rank() == 2 && a.dim(0) == kNumEmotions && a.dim(1) == k,
             "affinity must be C x K");
    for (std::int64_t j = 0; j < k; ++j) {
        double sum = 0.0;
        for (std::int64_t i = 0; i < kNumEmotions; ++i) {
            const double v = a[i * k + j];
            MG_CHECK(v >= 0.0, "affinity entries must be nonnegative");
            sum += v;
        }
        MG_CHECK(std::abs(sum - 1.0) < 1e-9,
                 "affinity distribution for attribute " + std::to_string(j) +
                     " does not sum to 1");
    }
}

}  // namespace

CorpusManifest generate_corpus(const CorpusConfig& config) {
    MG_CHECK(config.images_per_cell >= 1, "images_per_cell must be >= 1");
    MG_CHECK(!config.attributes.empty(), "attribute catalog must not be empty");
    MG_CHECK(config.image_size >= 8, "image_size too small");
    const auto k = static_cast<std::int64_t>(config.attributes.size());
    Tensor affinity = config.affinity.size() == 0 ? default_affinity(config.attributes)
                                                  : config.affinity;
    validate_affinity(affinity, k);

    CorpusManifest m;
    m.emotions = emotion_names();
    m.attributes = config.attributes;
    m.affinity = affinity;
    m.seed = config.seed;
    m.images_per_cell = config.images_per_cell;
    m.image_size = config.image_size;
    m.val_fraction = config.val_fraction;
    m.root = config.out_dir;

    std::filesystem::create_directories(config.out_dir / "images");

    const int per_attr = config.images_per_cell * kNumEmotions;
    for (std::int64_t j = 0; j < k; ++j) {
        std::vector<double> col(kNumEmotions);
        for (int i = 0; i < kNumEmotions; ++i) col[static_cast<std::size_t>(i)] = affinity[i * k + j];
        // Separate streams: one for label/split assignment per attribute, one
        // per image for rendering, so catalog edits do not ripple.
        Rng assign_rng(derive_seed(config.seed, 0x10000 + static_cast<std::uint64_t>(j)));
        for (int i = 0; i < per_attr; ++i) {
            const int emo = static_cast<int>(assign_rng.categorical(col));
            const Split split = assign_rng.uniform() < config.val_fraction ? Split::val
                                                                           : Split::train;
            Rng render_rng(derive_seed(config.seed,
                                       0x20000 + static_cast<std::uint64_t>(j) * 100000 +
                                           static_cast<std::uint64_t>(i)));
            Tensor pixels = render_image(m.attributes[static_cast<std::size_t>(j)],
                                         static_cast<int>(j), emo, config.image_size, render_rng);
            ManifestRecord rec;
            rec.path = "images/" + m.attributes[static_cast<std::size_t>(j)].name + "_" +
                       std::to_string(i) + ".png";
            rec.emotion = emo;
            rec.attribute = static_cast<int>(j);
            rec.kind = m.attributes[static_cast<std::size_t>(j)].kind;
            rec.split = split;
            write_png(config.out_dir / rec.path, tensor_to_image(pixels));
            m.records.push_back(std::move(rec));
        }
    }

    // manifest.jsonl: one record per line, exactly these fields.
    std::ofstream mf(config.out_dir / "manifest.jsonl");
    MG_CHECK_IO(mf.good(), "cannot write manifest.jsonl");
    for (const auto& rec : m.records) {
        nlohmann::json line = {{"path", rec.path},
                               {"emotion", m.emotions[static_cast<std::size_t>(rec.emotion)]},
                               {"attribute",
                                m.attributes[static_cast<std::size_t>(rec.attribute)].name},
                               {"kind", kind_name(rec.kind)},
                               {"split", split_name(rec.split)}};
        mf << line.dump() << "\n";
    }
    mf.close();

    nlohmann::json meta;
    meta["schema_version"] = m.schema_version;
    meta["seed"] = m.seed;
    meta["images_per_cell"] = m.images_per_cell;
    meta["image_size"] = m.image_size;
    meta["val_fraction"] = m.val_fraction;
    meta["emotions"] = m.emotions;
    meta["attributes"] = nlohmann::json::array();
    for (const auto& a : m.attributes)
        meta["attributes"].push_back({{"name", a.name},
                                      {"kind", kind_name(a.kind)},
                                      {"specific_emotion", a.specific_emotion}});
    meta["affinity"] = nlohmann::json::array();
    for (std::int64_t i = 0; i < kNumEmotions; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::int64_t j = 0; j < k; ++j) row.push_back(affinity[i * k + j]);
        meta["affinity"].push_back(row);
    }
    {
        Tensor counts = m.cell_counts();
        nlohmann::json cj = nlohmann::json::array();
        for (std::int64_t i = 0; i < kNumEmotions; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::int64_t j = 0; j < k; ++j) row.push_back(counts[i * k + j]);
            cj.push_back(row);
        }
        meta["cell_counts"] = cj;
    }
    std::ofstream metaf(config.out_dir / "meta.json");
    MG_CHECK_IO(metaf.good(), "cannot write meta.json");
    metaf << meta.dump(2) << "\n";
    return m;
}

Tensor CorpusManifest::cell_counts() const {
    const auto k = static_cast<std::int64_t>(attributes.size());
    Tensor counts({kNumEmotions, k});
    for (const auto& rec : records) counts[rec.emotion * k + rec.attribute] += 1.0;
    return counts;
}

CorpusManifest load_manifest(const std::filesystem::path& dir) {
    std::ifstream metaf(dir / "meta.json");
    MG_CHECK_IO(metaf.good(), "missing meta.json in " + dir.string());
    nlohmann::json meta = nlohmann::json::parse(metaf, nullptr, true);
    MG_CHECK_IO(meta.value("schema_version", -1) == kManifestSchemaVersion,
                "manifest schema version mismatch in " + dir.string());

    CorpusManifest m;
    m.root = dir;
    m.schema_version = meta["schema_version"].get<int>();
    m.seed = meta["seed"].get<std::uint64_t>();
    m.images_per_cell = meta["images_per_cell"].get<int>();
    m.image_size = meta["image_size"].get<int>();
    m.val_fraction = meta["val_fraction"].get<double>();
    m.emotions = meta["emotions"].get<std::vector<std::string>>();
    MG_CHECK_IO(m.emotions == emotion_names(), "manifest emotion catalog mismatch");
    for (const auto& a : meta["attributes"])
        m.attributes.push_back({a["name"].get<std::string>(),
                                parse_kind(a["kind"].get<std::string>()),
                                a["specific_emotion"].get<int>()});
    const auto k = static_cast<std::int64_t>(m.attributes.size());
    m.affinity = Tensor({kNumEmotions, k});
    for (std::int64_t i = 0; i < kNumEmotions; ++i)
        for (std::int64_t j = 0; j < k; ++j)
            m.affinity[i * k + j] = meta["affinity"][static_cast<std::size_t>(i)]
                                        [static_cast<std::size_t>(j)].get<double>();

    std::ifstream mf(dir / "manifest.jsonl");
    MG_CHECK_IO(mf.good(), "missing manifest.jsonl in " + dir.string());
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        ManifestRecord r;
        r.path = rec["path"].get<std::string>();
        r.emotion = emotion_index(rec["emotion"].get<std::string>());
        r.attribute = attribute_index(m.attributes, rec["attribute"].get<std::string>());
        r.kind = parse_kind(rec["kind"].get<std::string>());
        r.split = parse_split(rec["split"].get<std::string>());
        MG_CHECK_IO(std::filesystem::exists(dir / r.path),
                    "manifest references missing image: " + r.path);
        m.records.push_back(std::move(r));
    }
    return m;
}

std::vector<LabeledImage> load_images(const CorpusManifest& manifest) {
    std::vector<LabeledImage> out;
    out.reserve(manifest.records.size());
    for (const auto& rec : manifest.records) {
        LabeledImage li;
        li.pixels = image_to_tensor(read_png(manifest.root / rec.path));
        MG_CHECK_IO(li.pixels.all_finite(), "non-finite pixels in " + rec.path);
        li.emotion = rec.emotion;
        li.attribute = rec.attribute;
        li.split = rec.split;
        out.push_back(std::move(li));
    }
    return out;
}

std::vector<LabeledImage> load_images(const CorpusManifest& manifest, Split split) {
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (manifest.records[i].split != split) continue;
        const auto& rec = manifest.records[i];
        LabeledImage li;
        li.pixels = image_to_tensor(read_png(manifest.root / rec.path));
        li.emotion = rec.emotion;
        li.attribute = rec.attribute;
        li.split = rec.split;
        out.push_back(std::move(li));
    }
    return out;
}

}  // namespace moodgen::corpus
