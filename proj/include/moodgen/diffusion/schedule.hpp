#pragma once

#include <cstdint>
#include <vector>

#include "moodgen/core/rng.hpp"
#include "moodgen/core/tensor.hpp"

namespace moodgen::diffusion {

// Forward-process noise schedule. Steps are 1-based: step t uses betas[t-1].
// The default endpoint is chosen so the terminal signal fraction drops below
// 1% at T = 200, i.e. the chain really ends in near-pure noise.
struct NoiseSchedule {
    std::int64_t steps = 0;
    std::vector<double> betas;       // in (0,1), strictly increasing
    std::vector<double> alphas;      // 1 - beta
    std::vector<double> alpha_bars;  // running products, decreasing in (0,1]

    static NoiseSchedule linear(std::int64_t steps = 200, double beta_start = 1e-4,
                                double beta_end = 0.05);

    double beta(std::int64_t t) const;   // t in [1, steps]
    double alpha(std::int64_t t) const;  // t in [1, steps]

    // Signal fraction kept at step t; t in [0, steps], alpha_bar(0) == 1.
    double alpha_bar(std::int64_t t) const;
};

struct NoisedSample {
    Tensor z;    // same shape as x0
    Tensor eps;  // the standard-normal draw that produced z
};

// z = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, with eps drawn elementwise
// from the given rng. t must lie in [1, schedule.steps].
NoisedSample forward_noise(const NoiseSchedule& schedule, const Tensor& x0, std::int64_t t,
                           Rng& rng);

}  // namespace moodgen::diffusion
