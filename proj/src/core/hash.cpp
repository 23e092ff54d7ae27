#include "moodgen/core/hash.hpp"

#include <cstdio>
#include <fstream>

#include "moodgen/core/check.hpp"

namespace moodgen {

std::string Fnv64::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
    return std::string(buf);
}

std::string hash_bytes(const void* data, std::size_t n) {
    Fnv64 h;
    h.update(data, n);
    return h.hex();
}

std::string hash_string(const std::string& s) { return hash_bytes(s.data(), s.size()); }

std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    MG_CHECK_IO(in.good(), "cannot open file for hashing: " + path.string());
    Fnv64 h;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace moodgen
