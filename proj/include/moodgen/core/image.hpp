#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "moodgen/core/tensor.hpp"

namespace moodgen {

// 8-bit RGB image, row-major, interleaved channels. This is the on-disk unit;
// training tensors are derived from it so save/load round-trips exactly.
struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;  // height*width*3

    ImageU8() = default;
    ImageU8(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

    std::uint8_t& at(int y, int x, int c) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
};

// [3, H, W] tensor with values in [0, 1].
Tensor image_to_tensor(const ImageU8& img);
// Clamps to [0, 1] and quantizes to 8 bits.
ImageU8 tensor_to_image(const Tensor& chw);

void write_png(const std::filesystem::path& path, const ImageU8& img);
ImageU8 read_png(const std::filesystem::path& path);

}  // namespace moodgen
