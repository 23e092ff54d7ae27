#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moodgen/nn/layers.hpp"

namespace moodgen::nn {

// Strided conv -> group norm -> SiLU blocks followed by global average
// pooling. The pooled (pre-normalization) vector is the feature all towers
// in the project expose.
class ConvTower {
public:
    ConvTower() = default;
    ConvTower(ParamStore& ps, const std::string& name, std::int64_t in_channels,
              const std::vector<std::int64_t>& channels, const std::vector<int>& strides,
              Rng& rng);

    // [N, C_in, H, W] -> [N, channels.back()]
    Var features(const Var& x) const;

private:
    std::vector<Conv2dLayer> convs_;
    std::vector<GroupNormLayer> norms_;
};

}  // namespace moodgen::nn
