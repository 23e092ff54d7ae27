#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "moodgen/core/tensor.hpp"

namespace moodgen {

// Versioned binary archive: magic, schema version, JSON metadata blob, then a
// named tensor table with raw little-endian doubles. Byte output is a pure
// function of contents, so archive hashes double as parameter fingerprints.
class TensorArchive {
public:
    static constexpr std::uint32_t kMagic = 0x4e474d45;  // "EMGN"
    static constexpr std::uint32_t kSchemaVersion = 1;

    void put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, Tensor>& tensors() const { return tensors_; }

    void set_meta(std::string json) { meta_json_ = std::move(json); }
    const std::string& meta() const { return meta_json_; }

    std::string serialize() const;
    static TensorArchive deserialize(const std::string& bytes);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

    // FNV-1a of the serialized bytes.
    std::string fingerprint() const;

private:
    std::map<std::string, Tensor> tensors_;
    std::string meta_json_ = "{}";
};

}  // namespace moodgen
