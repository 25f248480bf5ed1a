#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "diffscale/errors.hpp"
#include "diffscale/schedule.hpp"
#include "diffscale/vec.hpp"
#include "diffscale/world.hpp"

namespace diffscale {

/// Noise oracle bound to a fixed condition: eps(x, t).
using NoisePredictor = std::function<Vec(const Vec&, int)>;

/// Binds the world's exact predictor to one condition. The restriction is
/// materialized once up front.
inline NoisePredictor make_predictor(const GaussianMixture& world, const Condition& condition,
                                     const NoiseSchedule& schedule) {
    GaussianMixture restricted = restrict(world, condition);
    return [restricted = std::move(restricted), schedule](const Vec& x, int t) {
        return analytic_noise(restricted, Condition::null(), x, t, schedule);
    };
}

/// Memory bank of inversion latents: latents[t] is the inverted point at
/// noise level t, with latents[0] the original input, exactly.
struct InversionTrajectory {
    Condition condition;
    std::string schedule_id;
    std::vector<Vec> latents;

    int steps() const { return static_cast<int>(latents.size()) - 1; }
};

namespace detail {

/// Divergence guard for the iterative pipelines: a noise prediction past
/// 1e3 * sqrt(d) means the oracle was evaluated in a near-zero density
/// region and the run should stop rather than propagate garbage.
inline void check_noise(const Vec& eps, int t) {
    if (!is_finite(eps)) throw numeric_error("non-finite noise prediction", t);
    if (norm(eps) > 1e3 * std::sqrt(static_cast<double>(eps.size())))
        throw numeric_error("noise prediction diverged", t);
}

}  // namespace detail

/// One deterministic sampling step t -> t-1: recover the clean-data estimate
/// x0_hat from (x_t, eps), then re-noise it to level t-1 with the same eps.
inline Vec ddim_step(const Vec& x_t, const Vec& eps, int t, const NoiseSchedule& schedule) {
    if (t < 1) throw std::domain_error("ddim_step: cannot step below t=1");
    check_same_dim(x_t, eps, "ddim_step");
    const double a_t = alpha_bar(schedule, t);
    const double a_prev = alpha_bar(schedule, t - 1);
    const double root_a_t = std::sqrt(a_t);
    const double root_om_t = std::sqrt(1.0 - a_t);
    const double root_a_prev = std::sqrt(a_prev);
    const double root_om_prev = std::sqrt(1.0 - a_prev);
    Vec out(x_t.size());
    for (std::size_t j = 0; j < x_t.size(); ++j) {
        const double x0_hat = (x_t[j] - root_om_t * eps[j]) / root_a_t;
        out[j] = root_a_prev * x0_hat + root_om_prev * eps[j];
    }
    return out;
}

/// Exact algebraic inverse of ddim_step under a fixed eps: t -> t+1.
inline Vec ddim_inverse_step(const Vec& x_t, const Vec& eps, int t,
                             const NoiseSchedule& schedule) {
    if (t >= schedule.steps) throw std::domain_error("ddim_inverse_step: cannot step above t=T");
    if (t < 0) throw std::domain_error("ddim_inverse_step: negative step index");
    check_same_dim(x_t, eps, "ddim_inverse_step");
    const double a_t = alpha_bar(schedule, t);
    const double a_next = alpha_bar(schedule, t + 1);
    const double root_a_t = std::sqrt(a_t);
    const double root_om_t = std::sqrt(1.0 - a_t);
    const double root_a_next = std::sqrt(a_next);
    const double root_om_next = std::sqrt(1.0 - a_next);
    Vec out(x_t.size());
    for (std::size_t j = 0; j < x_t.size(); ++j) {
        const double x0_hat = (x_t[j] - root_om_t * eps[j]) / root_a_t;
        out[j] = root_a_next * x0_hat + root_om_next * eps[j];
    }
    return out;
}

/// Full-chain deterministic inversion x_0 -> x_T with fixed-point refinement.
///
/// Each step re-noises with a prediction evaluated, after refine_iters
/// rounds, at the candidate destination rather than the departure point;
/// refine_iters = 0 is plain inversion. The t = 0 initializer is the zero
/// vector, which is the predictor's exact value in the clean-data limit
/// (the prefactor sqrt(1 - alphas_bar[0]) vanishes).
inline InversionTrajectory invert(const Vec& x_0, const Condition& condition,
                                  const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                  int refine_iters) {
    if (refine_iters < 0) throw config_error("invert: refine_iters must be >= 0");
    if (!is_finite(x_0)) throw contract_error("invert: non-finite input");

    InversionTrajectory traj;
    traj.condition = condition;
    traj.schedule_id = schedule.id;
    traj.latents.reserve(static_cast<std::size_t>(schedule.steps) + 1);
    traj.latents.push_back(x_0);

    Vec x = x_0;
    for (int t = 0; t < schedule.steps; ++t) {
        Vec eps = t == 0 ? Vec(x.size(), 0.0) : predictor(x, t);
        detail::check_noise(eps, t);
        for (int k = 0; k < refine_iters; ++k) {
            Vec candidate = ddim_inverse_step(x, eps, t, schedule);
            if (!is_finite(candidate)) throw numeric_error("inversion latent diverged", t + 1);
            eps = predictor(candidate, t + 1);
            detail::check_noise(eps, t + 1);
        }
        x = ddim_inverse_step(x, eps, t, schedule);
        if (!is_finite(x)) throw numeric_error("inversion latent diverged", t + 1);
        traj.latents.push_back(x);
    }
    return traj;
}

/// Deterministic sampling from the trajectory's startpoint back to t = 0
/// under the trajectory's own condition.
inline Vec reconstruct(const InversionTrajectory& traj, const NoisePredictor& predictor,
                       const NoiseSchedule& schedule) {
    if (traj.steps() != schedule.steps)
        throw contract_error("reconstruct: trajectory length does not match schedule");
    Vec x = traj.latents.back();
    for (int t = schedule.steps; t >= 1; --t) {
        Vec eps = predictor(x, t);
        detail::check_noise(eps, t);
        x = ddim_step(x, eps, t, schedule);
        if (!is_finite(x)) throw numeric_error("sampling latent diverged", t - 1);
    }
    return x;
}

}  // namespace diffscale
