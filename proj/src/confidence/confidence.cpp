#include "moodgen/confidence/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "moodgen/core/check.hpp"

namespace moodgen::confidence {

double ConfidenceMatrix::lookup(int emotion, int attribute) const {
    const auto c = alpha.shape()[0];
    const auto k = alpha.shape()[1];
    MG_CHECK(emotion >= 0 && emotion < c, "emotion index out of range");
    MG_CHECK(attribute >= 0 && attribute < k, "attribute index out of range");
    if (!present[static_cast<std::size_t>(attribute)]) return 0.0;
    return alpha[emotion * k + attribute];
}

ConfidenceMatrix compute_confidence(const emotion::EmotionEncoder& classifier,
                                    const corpus::CorpusManifest& manifest,
                                    const std::vector<corpus::LabeledImage>& images) {
    const int c = corpus::kNumEmotions;
    const auto k = static_cast<std::int64_t>(manifest.attributes.size());
    MG_CHECK(k > 0, "manifest has no attributes");
    for (const auto& li : images)
        MG_CHECK(li.attribute >= 0 && li.attribute < k, "image attribute index out of range");

    ConfidenceMatrix out;
    out.alpha = Tensor({c, k});
    out.counts.assign(static_cast<std::size_t>(k), 0);
    out.present.assign(static_cast<std::size_t>(k), false);
    out.classifier_fingerprint = classifier.fingerprint();
    for (const auto& a : manifest.attributes) out.attribute_names.push_back(a.name);

    for (std::int64_t j = 0; j < k; ++j) {
        std::vector<Tensor> batch;
        for (const auto& li : images)
            if (li.attribute == j) batch.push_back(li.pixels);
        out.counts[static_cast<std::size_t>(j)] = static_cast<std::int64_t>(batch.size());
        if (batch.empty()) continue;  // absent: flagged, alpha column stays 0
        out.present[static_cast<std::size_t>(j)] = true;

        Tensor logits = classifier.logits(batch);  // [N_j, C]
        // Per-image stable softmax, then an order-independent reduction:
        // contributions to each cell are sorted before summing, so the result
        // is bit-identical under any permutation of the input images.
        std::vector<std::vector<double>> contrib(static_cast<std::size_t>(c));
        for (std::size_t n = 0; n < batch.size(); ++n) {
            const double* row = logits.data() + static_cast<std::int64_t>(n) * c;
            double mx = row[0];
            for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
            double z = 0.0;
            for (int i = 0; i < c; ++i) z += std::exp(row[i] - mx);
            for (int i = 0; i < c; ++i)
                contrib[static_cast<std::size_t>(i)].push_back(std::exp(row[i] - mx) / z);
        }
        for (int i = 0; i < c; ++i) {
            auto& v = contrib[static_cast<std::size_t>(i)];
            std::sort(v.begin(), v.end());
            double s = 0.0;
            for (double p : v) s += p;
            out.alpha[i * k + j] = s / static_cast<double>(batch.size());
        }
    }
    return out;
}

void ConfidenceMatrix::save(const std::filesystem::path& path) const {
    const auto c = alpha.shape()[0];
    const auto k = alpha.shape()[1];
    std::ofstream out(path);
    MG_CHECK_IO(out.good(), "cannot write confidence table to " + path.string());
    out << "# confidence v1 classifier=" << classifier_fingerprint << "\n";
    out << "attribute,n";
    for (std::int64_t i = 0; i < c; ++i)
        out << "," << corpus::emotion_names()[static_cast<std::size_t>(i)];
    out << "\n";
    char buf[64];
    for (std::int64_t j = 0; j < k; ++j) {
        out << attribute_names[static_cast<std::size_t>(j)] << ","
            << counts[static_cast<std::size_t>(j)];
        for (std::int64_t i = 0; i < c; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", alpha[i * k + j]);
            out << "," << buf;
        }
        out << "\n";
    }
    MG_CHECK_IO(out.good(), "failed writing confidence table to " + path.string());
}

ConfidenceMatrix ConfidenceMatrix::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    MG_CHECK_IO(in.good(), "cannot open confidence table " + path.string());
    std::string line;
    MG_CHECK_IO(static_cast<bool>(std::getline(in, line)) && line.rfind("# confidence v1", 0) == 0,
                "not a confidence table: " + path.string());
    ConfidenceMatrix out;
    const auto eq = line.find("classifier=");
    MG_CHECK_IO(eq != std::string::npos, "confidence table missing classifier fingerprint");
    out.classifier_fingerprint = line.substr(eq + std::string("classifier=").size());
    MG_CHECK_IO(static_cast<bool>(std::getline(in, line)), "confidence table missing header");

    const int c = corpus::kNumEmotions;
    std::vector<std::vector<double>> cols;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        MG_CHECK_IO(static_cast<bool>(std::getline(ss, cell, ',')), "bad confidence row");
        out.attribute_names.push_back(cell);
        MG_CHECK_IO(static_cast<bool>(std::getline(ss, cell, ',')), "bad confidence row");
        out.counts.push_back(std::stoll(cell));
        std::vector<double> col;
        while (std::getline(ss, cell, ',')) col.push_back(std::stod(cell));
        MG_CHECK_IO(static_cast<int>(col.size()) == c,
                    "confidence row has wrong number of emotion columns");
        cols.push_back(std::move(col));
        out.present.push_back(out.counts.back() > 0);
    }
    const auto k = static_cast<std::int64_t>(cols.size());
    MG_CHECK_IO(k > 0, "confidence table has no rows");
    out.alpha = Tensor({c, k});
    for (std::int64_t j = 0; j < k; ++j)
        for (int i = 0; i < c; ++i)
            out.alpha[i * k + j] = cols[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    return out;
}

}  // namespace moodgen::confidence
