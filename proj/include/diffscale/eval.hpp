#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "diffscale/errors.hpp"
#include "diffscale/parallel.hpp"
#include "diffscale/rng.hpp"
#include "diffscale/scaling.hpp"
#include "diffscale/schedule.hpp"
#include "diffscale/vec.hpp"
#include "diffscale/world.hpp"

namespace diffscale {

/// Bayes-posterior detector: is the label's posterior at or above threshold?
/// Ties at the threshold count as present, so the boolean is deterministic.
inline bool concept_presence(const GaussianMixture& world, const Vec& x, const ConceptLabel& label,
                             double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw config_error("concept_presence: threshold must lie in (0, 1)");
    if (!world.has_label(label))
        throw condition_error("concept_presence: unknown label '" + label.name + "'");
    auto post = posterior(world, x);
    return post[label.id] >= threshold;
}

/// log posterior of the label; higher means the concept reads more strongly.
inline double concept_score(const GaussianMixture& world, const Vec& x,
                            const ConceptLabel& label) {
    if (!world.has_label(label))
        throw condition_error("concept_score: unknown label '" + label.name + "'");
    auto post = posterior(world, x);
    return std::log(std::max(post[label.id], 1e-300));
}

/// Euclidean distance between input and output; the content-preservation
/// measure of this world.
inline double fidelity_distance(const Vec& x_0, const Vec& x_out) {
    return distance(x_0, x_out);
}

/// Energy distance between two samples (V-statistic form):
///   2*mean|a-b| - mean|a-a'| - mean|b-b'|.
/// Nonnegative, zero iff the empirical distributions coincide.
inline double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.empty() || b.empty()) throw contract_error("energy_distance: empty sample");
    auto mean_cross = [](const std::vector<Vec>& u, const std::vector<Vec>& v) {
        double s = 0.0;
        for (const auto& x : u)
            for (const auto& y : v) s += distance(x, y);
        return s / (static_cast<double>(u.size()) * static_cast<double>(v.size()));
    };
    return 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
}

namespace detail {

using Matrix = std::vector<std::vector<double>>;

/// Cyclic Jacobi sweeps; returns eigenvalues of a symmetric matrix and
/// leaves the accumulated rotations in vecs (columns are eigenvectors).
inline std::vector<double> sym_eigen(Matrix m, Matrix& vecs) {
    const std::size_t n = m.size();
    vecs.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) vecs[i][i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += m[p][q] * m[p][q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(m[p][q]) < 1e-300) continue;
                const double theta = 0.5 * std::atan2(2.0 * m[p][q], m[q][q] - m[p][p]);
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m[k][p], mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m[p][k], mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vecs[k][p], vkq = vecs[k][q];
                    vecs[k][p] = c * vkp - s * vkq;
                    vecs[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = m[i][i];
    return eig;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.size();
    Matrix r(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) r[i][j] += a[i][k] * b[k][j];
    return r;
}

inline Matrix sym_sqrt(const Matrix& m) {
    Matrix vecs;
    auto eig = sym_eigen(m, vecs);
    const std::size_t n = m.size();
    Matrix r(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k)
                r[i][j] += vecs[i][k] * std::sqrt(std::max(eig[k], 0.0)) * vecs[j][k];
    return r;
}

inline void moments(const std::vector<Vec>& sample, Vec& mean, Matrix& cov) {
    const std::size_t n = sample.size(), d = sample[0].size();
    mean.assign(d, 0.0);
    for (const auto& x : sample)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
    for (double& m : mean) m /= static_cast<double>(n);
    cov.assign(d, std::vector<double>(d, 0.0));
    for (const auto& x : sample)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
    for (auto& row : cov)
        for (double& v : row) v /= static_cast<double>(n);
}

}  // namespace detail

/// Squared Fréchet distance between Gaussian fits of the two samples
/// (the usual FID formula). Emitted alongside energy_distance for
/// reference; the energy distance is the primary quality metric because
/// the output distributions here are multi-modal.
inline double frechet_gaussian_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.empty() || b.empty()) throw contract_error("frechet_gaussian_distance: empty sample");
    Vec mu_a, mu_b;
    detail::Matrix cov_a, cov_b;
    detail::moments(a, mu_a, cov_a);
    detail::moments(b, mu_b, cov_b);
    const std::size_t d = mu_a.size();
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = mu_a[j] - mu_b[j];
        dist2 += diff * diff;
    }
    detail::Matrix root_a = detail::sym_sqrt(cov_a);
    detail::Matrix inner = detail::matmul(detail::matmul(root_a, cov_b), root_a);
    detail::Matrix vecs;
    auto eig = detail::sym_eigen(std::move(inner), vecs);
    double trace_term = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        trace_term += cov_a[j][j] + cov_b[j][j];
        trace_term -= 2.0 * std::sqrt(std::max(eig[j], 0.0));
    }
    return dist2 + trace_term;
}

/// One-sided sign test: P(Binomial(trials, 1/2) >= wins). The pmf walks the
/// multiplicative recurrence from the exactly-representable 2^-trials, so
/// values stay accurate to a few ulp for the sample sizes used here.
inline double sign_test_p(int wins, int trials) {
    if (trials < 0 || wins < 0 || wins > trials)
        throw contract_error("sign_test_p: invalid counts");
    if (trials == 0) return 1.0;
    if (trials > 1000) throw contract_error("sign_test_p: trials too large");
    double pmf = std::exp2(static_cast<double>(-trials));
    double tail = wins == 0 ? pmf : 0.0;
    for (int k = 0; k < trials; ++k) {
        pmf *= static_cast<double>(trials - k) / static_cast<double>(k + 1);
        if (k + 1 >= wins) tail += pmf;
    }
    return std::min(tail, 1.0);
}

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

struct SampleRecord {
    std::uint64_t seed = 0;
    int label_id = 0;
    Vec input;
    Vec output;
    double concept_score_in = 0.0;
    double concept_score_out = 0.0;
    double fidelity = 0.0;
    bool present_before = false;
    bool removed = false;
    std::string error;  // empty on success

    bool ok() const { return error.empty(); }
};

struct Aggregates {
    double removal_rate = 0.0;
    double mean_concept_score = 0.0;
    double energy_distance = 0.0;
    double frechet_distance = 0.0;
    double mean_fidelity = 0.0;
};

struct ExperimentResult {
    std::string run_id;
    ScalingConfig config;
    std::uint64_t base_seed = 0;
    std::vector<SampleRecord> per_sample;
    std::vector<Vec> reference;  // clean concept draws, paired by sample index
    Aggregates aggregates;
};

/// Deterministic reduction of per-sample rows; errored rows drop out of
/// every aggregate together with their paired reference points.
inline Aggregates compute_aggregates(const std::vector<SampleRecord>& rows,
                                     const std::vector<Vec>& reference) {
    Aggregates agg;
    std::vector<Vec> outputs, refs;
    int valid = 0, removed = 0;
    double score_sum = 0.0, fidelity_sum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].ok()) continue;
        ++valid;
        removed += rows[i].removed ? 1 : 0;
        score_sum += rows[i].concept_score_out;
        fidelity_sum += rows[i].fidelity;
        outputs.push_back(rows[i].output);
        if (i < reference.size()) refs.push_back(reference[i]);
    }
    if (valid == 0) return agg;
    agg.removal_rate = static_cast<double>(removed) / valid;
    agg.mean_concept_score = score_sum / valid;
    agg.mean_fidelity = fidelity_sum / valid;
    if (!refs.empty()) {
        agg.energy_distance = energy_distance(outputs, refs);
        agg.frechet_distance = frechet_gaussian_distance(outputs, refs);
    }
    return agg;
}

namespace detail {

inline std::string format_double_tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

constexpr std::uint64_t kReferenceStream = 0x100000000ull;

/// Shared per-sample pipeline runner. draw(i, seed) supplies the input.
template <typename DrawFn>
ExperimentResult run_study(const std::string& run_id, const GaussianMixture& world,
                           const ScalingConfig& config, const NoiseSchedule& schedule,
                           int n_samples, std::uint64_t seed, int threads, DrawFn&& draw) {
    validate(config, schedule);
    const auto labels = world.labels();
    if (labels.size() < 2)
        throw config_error("experiment: world must carry at least two labels");

    ExperimentResult result;
    result.run_id = run_id;
    result.config = config;
    result.base_seed = seed;
    result.per_sample.assign(static_cast<std::size_t>(n_samples), SampleRecord{});
    result.reference.assign(static_cast<std::size_t>(n_samples), Vec{});

    run_indexed(n_samples, threads, [&](int i) {
        const ConceptLabel label = labels[static_cast<std::size_t>(i) % labels.size()];
        SampleRecord row;
        row.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        row.label_id = label.id;
        result.reference[static_cast<std::size_t>(i)] =
            sample_data(world, Condition::single(label),
                        derive_seed(seed, kReferenceStream + static_cast<std::uint64_t>(i)))
                .coords;
        try {
            row.input = draw(i, label, row.seed);
            row.present_before = concept_presence(world, row.input, label);
            row.concept_score_in = concept_score(world, row.input, label);
            ScaleResult scaled =
                scale_concept(row.input, Condition::single(label), config, world, schedule);
            row.output = std::move(scaled.output);
            row.concept_score_out = concept_score(world, row.output, label);
            row.fidelity = fidelity_distance(row.input, row.output);
            row.removed = row.present_before && !concept_presence(world, row.output, label);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        result.per_sample[static_cast<std::size_t>(i)] = std::move(row);
    });

    int failures = 0;
    for (const auto& row : result.per_sample) failures += row.ok() ? 0 : 1;
    if (failures * 10 > n_samples)
        throw std::runtime_error("experiment '" + run_id + "': " + std::to_string(failures) +
                                 " of " + std::to_string(n_samples) + " samples failed");

    result.aggregates = compute_aggregates(result.per_sample, result.reference);
    return result;
}

}  // namespace detail

/// Suppression study: draw clean concept samples (cycling through the
/// world's labels), run the scaling pipeline, count posterior flips.
inline ExperimentResult removal_study(const GaussianMixture& world, const ScalingConfig& config,
                                      const NoiseSchedule& schedule, int n_samples,
                                      std::uint64_t seed, int threads = 1) {
    if (n_samples < 1) throw config_error("removal_study: n_samples must be >= 1");
    const std::string run_id = "removal-study_omega" +
                               detail::format_double_tag(config.omega_base) + "_n" +
                               std::to_string(n_samples) + "_seed" + std::to_string(seed);
    return detail::run_study(run_id, world, config, schedule, n_samples, seed, threads,
                             [&](int, const ConceptLabel& label, std::uint64_t s) {
                                 return sample_data(world, Condition::single(label), s).coords;
                             });
}

struct WeakParams {
    double pull = 0.5;
    double inflate = 1.5;
};

/// Enhancement study on weak-concept inputs with a fixed configuration.
inline ExperimentResult enhancement_study(const GaussianMixture& world,
                                          const ScalingConfig& config,
                                          const NoiseSchedule& schedule, int n_samples,
                                          std::uint64_t seed, WeakParams weak = {},
                                          int threads = 1, const std::string& tag = "enhance") {
    if (n_samples < 1) throw config_error("enhancement_study: n_samples must be >= 1");
    const std::string run_id = tag + "_omega" + detail::format_double_tag(config.omega_base) +
                               "_gamma" + detail::format_double_tag(config.gamma) + "_" +
                               to_string(config.regularization) + "_n" +
                               std::to_string(n_samples) + "_seed" + std::to_string(seed);
    return detail::run_study(run_id, world, config, schedule, n_samples, seed, threads,
                             [&](int, const ConceptLabel& label, std::uint64_t s) {
                                 return weak_concept_sample(world, label, weak.pull, weak.inflate,
                                                            s)
                                     .coords;
                             });
}

struct AblationCell {
    double gamma = 0.0;
    Regularization regularization = Regularization::Off;
};

/// The default ablation grid: the gamma ramp without regularization, then
/// the two regularization modes at the steepest ramp.
inline std::vector<AblationCell> default_ablation_cells() {
    return {
        {0.0, Regularization::Off},      {0.5, Regularization::Off},
        {1.0, Regularization::Off},      {3.0, Regularization::Off},
        {3.0, Regularization::Full},     {3.0, Regularization::EarlyExit},
    };
}

/// Paired ablation over (gamma, regularization) cells: every cell sees the
/// same weak inputs and the same clean reference draws.
inline std::vector<ExperimentResult> ablation_run(const GaussianMixture& world,
                                                  const ScalingConfig& base_config,
                                                  const std::vector<AblationCell>& cells,
                                                  const NoiseSchedule& schedule, int n_samples,
                                                  std::uint64_t seed, WeakParams weak = {},
                                                  int threads = 1) {
    if (n_samples < 20) throw config_error("ablation_run: need n_samples >= 20 for trends");
    if (cells.empty()) throw config_error("ablation_run: no grid cells");
    std::vector<ExperimentResult> out;
    out.reserve(cells.size());
    for (const auto& cell : cells) {
        ScalingConfig config = base_config;
        config.gamma = cell.gamma;
        config.regularization = cell.regularization;
        out.push_back(enhancement_study(world, config, schedule, n_samples, seed, weak, threads,
                                        "ablate"));
    }
    return out;
}

}  // namespace diffscale
