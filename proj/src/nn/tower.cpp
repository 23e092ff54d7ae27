#include "moodgen/nn/tower.hpp"

#include "moodgen/core/check.hpp"

namespace moodgen::nn {

ConvTower::ConvTower(ParamStore& ps, const std::string& name, std::int64_t in_channels,
                     const std::vector<std::int64_t>& channels, const std::vector<int>& strides,
                     Rng& rng) {
    MG_CHECK(!channels.empty() && channels.size() == strides.size(),
             "ConvTower: channels/strides mismatch");
    std::int64_t cin = in_channels;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const std::string block = name + ".b" + std::to_string(i);
        convs_.emplace_back(ps, block + ".conv", cin, channels[i], 3, strides[i], 1, rng);
        norms_.emplace_back(ps, block + ".norm", 4, channels[i]);
        cin = channels[i];
    }
}

Var ConvTower::features(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i)
        h = silu(norms_[i].forward(convs_[i].forward(h)));
    // Global average pool: [N, C, H, W] -> [N, C].
    const auto& s = h.value().shape();
    Var flat = reshape(h, {s[0] * s[1], s[2] * s[3]});
    return reshape(mean_per_sample(flat), {s[0], s[1]});
}

}  // namespace moodgen::nn
