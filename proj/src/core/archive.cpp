#include "moodgen/core/archive.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "moodgen/core/check.hpp"
#include "moodgen/core/hash.hpp"

namespace moodgen {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string str(std::size_t n) {
        MG_CHECK_IO(pos_ + n <= s_.size(), "archive truncated");
        std::string r = s_.substr(pos_, n);
        pos_ += n;
        return r;
    }

private:
    unsigned char byte() {
        MG_CHECK_IO(pos_ < s_.size(), "archive truncated");
        return static_cast<unsigned char>(s_[pos_++]);
    }
    const std::string& s_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& TensorArchive::get(const std::string& name) const {
    auto it = tensors_.find(name);
    MG_CHECK_IO(it != tensors_.end(), "archive missing tensor: " + name);
    return it->second;
}

std::string TensorArchive::serialize() const {
    std::string out;
    put_u32(out, kMagic);
    put_u32(out, kSchemaVersion);
    put_u64(out, meta_json_.size());
    out += meta_json_;
    put_u32(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
        for (std::int64_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
    }
    return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
    Reader r(bytes);
    MG_CHECK_IO(r.u32() == kMagic, "bad archive magic");
    const std::uint32_t version = r.u32();
    MG_CHECK_IO(version == kSchemaVersion,
                "archive schema version mismatch: got " + std::to_string(version) +
                    ", expected " + std::to_string(kSchemaVersion));
    TensorArchive a;
    a.meta_json_ = r.str(r.u64());
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str(r.u32());
        const std::uint32_t rank = r.u32();
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::int64_t>(r.u64());
        Tensor t(shape);
        for (std::int64_t k = 0; k < t.size(); ++k) t[k] = r.f64();
        a.tensors_[name] = std::move(t);
    }
    return a;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    MG_CHECK_IO(out.good(), "cannot open archive for writing: " + path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    MG_CHECK_IO(out.good(), "archive write failed: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    MG_CHECK_IO(in.good(), "cannot open archive: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

std::string TensorArchive::fingerprint() const {
    const std::string bytes = serialize();
    return hash_bytes(bytes.data(), bytes.size());
}

}  // namespace moodgen
