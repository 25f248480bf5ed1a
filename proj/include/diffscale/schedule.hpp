#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffscale/errors.hpp"

namespace diffscale {

/// Discrete noise schedule: the cumulative signal-retention coefficients
/// alphas_bar[t] for t = 0..steps, with x_t = sqrt(ab[t])*x_0 + sqrt(1-ab[t])*eps.
///
/// Invariants (checked at construction):
///   - alphas_bar[0] == 1 exactly (t = 0 is clean data),
///   - strictly decreasing,
///   - every value in (0, 1],
///   - alphas_bar[steps] < 0.05 (terminal latent is noise-dominated).
///
/// Immutable after construction; safe to share across threads.
struct NoiseSchedule {
    std::vector<double> alphas_bar;
    int steps = 0;
    std::string id = "custom";

    static NoiseSchedule from_alphas(std::vector<double> alphas, std::string id = "custom") {
        if (alphas.size() < 2)
            throw config_error("NoiseSchedule: need at least alphas_bar[0..1]");
        if (alphas.front() != 1.0)
            throw config_error("NoiseSchedule: alphas_bar[0] must be exactly 1");
        for (std::size_t t = 0; t < alphas.size(); ++t) {
            if (!(alphas[t] > 0.0) || alphas[t] > 1.0)
                throw config_error("NoiseSchedule: alphas_bar[" + std::to_string(t) +
                                   "] out of (0,1]");
            if (t > 0 && !(alphas[t] < alphas[t - 1]))
                throw config_error("NoiseSchedule: alphas_bar must be strictly decreasing");
        }
        if (!(alphas.back() < 0.05))
            throw config_error("NoiseSchedule: terminal alphas_bar must be below 0.05");
        NoiseSchedule s;
        s.steps = static_cast<int>(alphas.size()) - 1;
        s.alphas_bar = std::move(alphas);
        s.id = std::move(id);
        return s;
    }
};

/// Squared-cosine schedule evaluated directly on the sampling grid:
///   f(u) = cos^2(((u/steps + offset)/(1 + offset)) * pi/2),  ab[t] = f(t)/f(0).
///
/// The raw formula hits cos^2(pi/2) = 0 at u = steps, which would make the
/// terminal DDIM coefficients singular, so per-step decay is capped at a
/// ratio of 0.1 (beta_t <= 0.9). For this family the cap binds only at the
/// terminal step: the raw tail ratios follow ((steps-t)/(steps-t+1))^2 and
/// never drop below 0.25 before it.
inline NoiseSchedule build_cosine_schedule(int steps, double offset = 0.008) {
    if (steps < 2) throw config_error("build_cosine_schedule: steps must be >= 2");
    if (!(offset > 0.0) || !(offset < 0.1))
        throw config_error("build_cosine_schedule: offset must be in (0, 0.1)");

    constexpr double kMinStepRatio = 0.1;
    const double half_pi = std::acos(-1.0) / 2.0;
    auto f = [&](double u) {
        double c = std::cos((u / steps + offset) / (1.0 + offset) * half_pi);
        return c * c;
    };
    const double f0 = f(0.0);

    std::vector<double> alphas(static_cast<std::size_t>(steps) + 1);
    alphas[0] = 1.0;
    for (int t = 1; t <= steps; ++t) {
        double raw = f(static_cast<double>(t)) / f0;
        double floor = alphas[t - 1] * kMinStepRatio;
        alphas[t] = raw > floor ? raw : floor;
    }
    return NoiseSchedule::from_alphas(std::move(alphas),
                                      "cosine(steps=" + std::to_string(steps) + ")");
}

/// Pure lookup, no interpolation; out-of-range indices throw.
inline double alpha_bar(const NoiseSchedule& schedule, int t) {
    if (t < 0 || t > schedule.steps)
        throw std::out_of_range("alpha_bar: step index " + std::to_string(t) +
                                " outside [0, " + std::to_string(schedule.steps) + "]");
    return schedule.alphas_bar[static_cast<std::size_t>(t)];
}

}  // namespace diffscale
