#include "moodgen/diffusion/schedule.hpp"

#include <cmath>

#include "moodgen/core/check.hpp"

namespace moodgen::diffusion {

NoiseSchedule NoiseSchedule::linear(std::int64_t steps, double beta_start, double beta_end) {
    MG_CHECK(steps >= 2, "schedule needs at least two steps");
    MG_CHECK(beta_start > 0.0 && beta_end < 1.0, "betas must lie in (0,1)");
    MG_CHECK(beta_start < beta_end, "schedule must be strictly increasing");

    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alphas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double bar = 1.0;
    for (std::int64_t i = 0; i < steps; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
        const double beta = beta_start + frac * (beta_end - beta_start);
        s.betas[static_cast<std::size_t>(i)] = beta;
        s.alphas[static_cast<std::size_t>(i)] = 1.0 - beta;
        bar *= 1.0 - beta;
        s.alpha_bars[static_cast<std::size_t>(i)] = bar;
    }
    return s;
}

double NoiseSchedule::beta(std::int64_t t) const {
    MG_CHECK(t >= 1 && t <= steps, "step out of range");
    return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(std::int64_t t) const {
    MG_CHECK(t >= 1 && t <= steps, "step out of range");
    return alphas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(std::int64_t t) const {
    MG_CHECK(t >= 0 && t <= steps, "step out of range");
    if (t == 0) return 1.0;
    return alpha_bars[static_cast<std::size_t>(t - 1)];
}

NoisedSample forward_noise(const NoiseSchedule& schedule, const Tensor& x0, std::int64_t t,
                           Rng& rng) {
    MG_CHECK(t >= 1 && t <= schedule.steps, "noising step out of range");
    const double bar = schedule.alpha_bar(t);
    const double signal = std::sqrt(bar);
    const double noise = std::sqrt(1.0 - bar);

    NoisedSample out;
    out.eps = Tensor(x0.shape());
    out.z = Tensor(x0.shape());
    const double* x = x0.data();
    double* e = out.eps.data();
    double* z = out.z.data();
    for (std::int64_t i = 0; i < x0.size(); ++i) {
        e[i] = rng.normal();
        z[i] = signal * x[i] + noise * e[i];
    }
    return out;
}

}  // namespace moodgen::diffusion
