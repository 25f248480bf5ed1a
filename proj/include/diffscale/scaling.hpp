#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffscale/errors.hpp"
#include "diffscale/inversion.hpp"
#include "diffscale/schedule.hpp"
#include "diffscale/vec.hpp"
#include "diffscale/world.hpp"

namespace diffscale {

enum class Regularization { Off, Full, EarlyExit };

inline const char* to_string(Regularization r) {
    switch (r) {
        case Regularization::Off: return "off";
        case Regularization::Full: return "full";
        case Regularization::EarlyExit: return "early_exit";
    }
    return "off";
}

/// Knobs of the concept-scaling sampler.
///
/// omega_base may be negative (suppression past the null branch); gamma
/// shapes how strongly the high-noise steps are scaled; t_exit disables the
/// memory-bank regularization for noise levels below it in EarlyExit mode.
/// average_predictions switches the regularization estimate from
/// "predict at the latent midpoint" to "average the two predictions"
/// (identical whenever the predictor is linear in x).
struct ScalingConfig {
    double omega_base = 5.0;
    double gamma = 3.0;
    int t_exit = 35;
    Regularization regularization = Regularization::EarlyExit;
    int refine_iters = 5;
    Condition removal_condition = Condition::null();
    bool average_predictions = false;
};

inline void validate(const ScalingConfig& config, const NoiseSchedule& schedule) {
    if (!(config.gamma >= 0.0)) throw config_error("ScalingConfig: gamma must be >= 0");
    if (config.t_exit < 0 || config.t_exit > schedule.steps)
        throw config_error("ScalingConfig: t_exit must lie in [0, steps]");
    if (config.refine_iters < 0) throw config_error("ScalingConfig: refine_iters must be >= 0");
}

/// Per-step noise predictions of the two branches plus the optional
/// memory-bank estimate and the final combination. regularization_noise is
/// present exactly when regularization was active at this step.
struct BranchNoises {
    Vec removal_noise;                       // null / helper branch
    Vec reconstruction_noise;                // concept branch
    std::optional<Vec> regularization_noise; // memory-bank estimate
    Vec combined_noise;                      // what the sampler actually used
};

struct ScaleStep {
    int t = 0;
    double omega = 0.0;
    double omega_reg = 0.0;
    BranchNoises noises;
};

struct ScaleResult {
    Vec output;
    std::vector<ScaleStep> trace;
    InversionTrajectory trajectory;
};

/// omega_t = omega_base * (t/T)^gamma. gamma = 0 is constant, gamma = 1
/// linear, anything else bends the ramp; (T/T)^gamma == 1 exactly, so the
/// terminal strength is always omega_base itself.
inline double omega_at(const ScalingConfig& config, int t, int total_steps) {
    if (t < 1 || t > total_steps)
        throw std::out_of_range("omega_at: step index outside [1, T]");
    return config.omega_base *
           std::pow(static_cast<double>(t) / static_cast<double>(total_steps), config.gamma);
}

/// Two-branch combination eps_null + omega * (eps_rec - eps_null).
/// The endpoints are returned verbatim so omega = 1 is bit-identical to the
/// reconstruction branch and omega = 0 to the removal branch.
inline Vec scaled_noise(const Vec& removal_noise, const Vec& reconstruction_noise, double omega) {
    check_same_dim(removal_noise, reconstruction_noise, "scaled_noise");
    if (omega == 1.0) return reconstruction_noise;
    if (omega == 0.0) return removal_noise;
    Vec out(removal_noise.size());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = removal_noise[j] + omega * (reconstruction_noise[j] - removal_noise[j]);
    return out;
}

inline double regularization_weight(double omega, int t, const ScalingConfig& config) {
    switch (config.regularization) {
        case Regularization::Off: return 0.0;
        case Regularization::Full: return omega;
        case Regularization::EarlyExit: return t < config.t_exit ? 0.0 : omega;
    }
    return 0.0;
}

/// Full combination with the memory-bank term:
///   eps_null + omega*(eps_rec - eps_null) + omega'*(eps_bar - eps_rec),
/// where omega' is omega when regularization is active at step t and 0
/// otherwise. The omega' = 0 path reuses scaled_noise verbatim, so mode
/// agreements (EarlyExit vs Off below t_exit, EarlyExit vs Full above)
/// hold exactly.
inline Vec regularized_noise(const BranchNoises& branches, double omega, int t,
                             const ScalingConfig& config) {
    const double omega_reg = regularization_weight(omega, t, config);
    Vec out = scaled_noise(branches.removal_noise, branches.reconstruction_noise, omega);
    if (omega_reg == 0.0) return out;
    if (!branches.regularization_noise)
        throw contract_error("regularized_noise: regularization active but no estimate supplied");
    const Vec& bar = *branches.regularization_noise;
    check_same_dim(out, bar, "regularized_noise");
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] += omega_reg * (bar[j] - branches.reconstruction_noise[j]);
    return out;
}

/// Memory-bank estimate: predict once at the midpoint of the current latent
/// and the stored inversion latent for the same level.
inline Vec regularization_estimate(const InversionTrajectory& traj, const Vec& x_t, int t,
                                   const NoisePredictor& predictor) {
    if (t < 1 || t > traj.steps())
        throw contract_error("regularization_estimate: step has no stored inversion latent");
    const Vec& inv = traj.latents[static_cast<std::size_t>(t)];
    check_same_dim(x_t, inv, "regularization_estimate");
    return predictor(midpoint(x_t, inv), t);
}

/// Alternative reading: average the predictions at the two latents.
inline Vec regularization_estimate_averaged(const InversionTrajectory& traj, const Vec& x_t,
                                            int t, const NoisePredictor& predictor) {
    if (t < 1 || t > traj.steps())
        throw contract_error("regularization_estimate: step has no stored inversion latent");
    const Vec& inv = traj.latents[static_cast<std::size_t>(t)];
    check_same_dim(x_t, inv, "regularization_estimate");
    return midpoint(predictor(x_t, t), predictor(inv, t));
}

/// Concept-scaling sampler starting from an existing inversion trajectory
/// (its condition is the concept being scaled).
inline ScaleResult scale_concept(InversionTrajectory traj, const ScalingConfig& config,
                                 const GaussianMixture& world, const NoiseSchedule& schedule) {
    validate(config, schedule);
    if (traj.condition == config.removal_condition)
        throw condition_error("scale_concept: concept equals the removal condition");
    if (traj.steps() != schedule.steps)
        throw contract_error("scale_concept: trajectory length does not match schedule");

    const NoisePredictor rec_predictor = make_predictor(world, traj.condition, schedule);
    const NoisePredictor removal_predictor =
        make_predictor(world, config.removal_condition, schedule);

    ScaleResult result;
    result.trace.reserve(static_cast<std::size_t>(schedule.steps));
    Vec x = traj.latents.back();
    for (int t = schedule.steps; t >= 1; --t) {
        ScaleStep step;
        step.t = t;
        step.omega = omega_at(config, t, schedule.steps);
        step.omega_reg = regularization_weight(step.omega, t, config);
        step.noises.removal_noise = removal_predictor(x, t);
        detail::check_noise(step.noises.removal_noise, t);
        step.noises.reconstruction_noise = rec_predictor(x, t);
        detail::check_noise(step.noises.reconstruction_noise, t);
        if (step.omega_reg != 0.0) {
            step.noises.regularization_noise =
                config.average_predictions
                    ? regularization_estimate_averaged(traj, x, t, rec_predictor)
                    : regularization_estimate(traj, x, t, rec_predictor);
            detail::check_noise(*step.noises.regularization_noise, t);
        }
        step.noises.combined_noise = regularized_noise(step.noises, step.omega, t, config);
        detail::check_noise(step.noises.combined_noise, t);
        x = ddim_step(x, step.noises.combined_noise, t, schedule);
        if (!is_finite(x)) throw numeric_error("scaling latent diverged", t - 1);
        result.trace.push_back(std::move(step));
    }
    result.output = std::move(x);
    result.trajectory = std::move(traj);
    return result;
}

/// End-to-end pipeline: invert the input under the target concept, then
/// sample back with the two-branch combination. Deterministic; at
/// omega_base = 1, gamma = 0, regularization Off it reproduces
/// reconstruct(invert(x_0)) bit for bit.
inline ScaleResult scale_concept(const Vec& x_0, const Condition& target,
                                 const ScalingConfig& config, const GaussianMixture& world,
                                 const NoiseSchedule& schedule) {
    validate(config, schedule);
    if (target == config.removal_condition)
        throw condition_error("scale_concept: concept equals the removal condition");
    if (!is_finite(x_0)) throw contract_error("scale_concept: non-finite input");
    InversionTrajectory traj =
        invert(x_0, target, make_predictor(world, target, schedule), schedule,
               config.refine_iters);
    return scale_concept(std::move(traj), config, world, schedule);
}

}  // namespace diffscale
