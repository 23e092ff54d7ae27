#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace moodgen {

// FNV-1a, 64-bit. Content fingerprints only, not cryptographic.
class Fnv64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    template <typename T>
    void update_pod(const T& v) {
        update(&v, sizeof(T));
    }
    std::uint64_t digest() const { return h_; }
    std::string hex() const;

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hash_bytes(const void* data, std::size_t n);
std::string hash_string(const std::string& s);
std::string hash_file(const std::filesystem::path& path);

}  // namespace moodgen
