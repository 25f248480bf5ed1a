#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffscale/errors.hpp"
#include "diffscale/rng.hpp"
#include "diffscale/schedule.hpp"
#include "diffscale/vec.hpp"

namespace diffscale {

struct ConceptLabel {
    int id = 0;
    std::string name;

    friend bool operator==(const ConceptLabel& a, const ConceptLabel& b) {
        return a.id == b.id && a.name == b.name;
    }
    friend bool operator!=(const ConceptLabel& a, const ConceptLabel& b) { return !(a == b); }
};

/// Conditioning for the noise predictor: everything (Null), one concept,
/// or a set of concepts.
class Condition {
public:
    enum class Kind { Null, Single, Subset };

    Condition() = default;

    static Condition null() { return Condition(); }

    static Condition single(ConceptLabel label) {
        Condition c;
        c.kind_ = Kind::Single;
        c.labels_ = {std::move(label)};
        return c;
    }

    static Condition subset(std::vector<ConceptLabel> labels) {
        if (labels.empty()) throw condition_error("Condition::subset: empty label set");
        Condition c;
        c.kind_ = Kind::Subset;
        c.labels_ = std::move(labels);
        return c;
    }

    Kind kind() const { return kind_; }
    bool is_null() const { return kind_ == Kind::Null; }
    const std::vector<ConceptLabel>& labels() const { return labels_; }

    bool matches(const ConceptLabel& label) const {
        if (kind_ == Kind::Null) return true;
        for (const auto& l : labels_)
            if (l.id == label.id) return true;
        return false;
    }

    friend bool operator==(const Condition& a, const Condition& b) {
        if (a.kind_ != b.kind_) return false;
        if (a.kind_ == Kind::Null) return true;
        auto ids = [](const Condition& c) {
            std::vector<int> v;
            for (const auto& l : c.labels_) v.push_back(l.id);
            std::sort(v.begin(), v.end());
            return v;
        };
        return ids(a) == ids(b);
    }
    friend bool operator!=(const Condition& a, const Condition& b) { return !(a == b); }

private:
    Kind kind_ = Kind::Null;
    std::vector<ConceptLabel> labels_;
};

struct MixtureComponent {
    double weight = 1.0;
    Vec mean;
    Vec variances;  // diagonal covariance
    ConceptLabel label;
};

/// Diagonal-covariance Gaussian mixture over the latent space. Plays the
/// role of both the data distribution and, through the closed-form forward
/// marginal, the exact conditional noise predictor. Immutable once built;
/// weights are normalized at construction.
class GaussianMixture {
public:
    GaussianMixture() = default;

    GaussianMixture(std::vector<MixtureComponent> components, int dimension)
        : components_(std::move(components)), dimension_(dimension) {
        if (dimension_ < 1) throw config_error("GaussianMixture: dimension must be positive");
        if (components_.empty()) throw config_error("GaussianMixture: no components");
        double total = 0.0;
        std::map<int, std::string> names;
        for (const auto& c : components_) {
            if (!(c.weight > 0.0)) throw config_error("GaussianMixture: weights must be positive");
            if (c.mean.size() != static_cast<std::size_t>(dimension_) ||
                c.variances.size() != static_cast<std::size_t>(dimension_))
                throw config_error("GaussianMixture: component dimension mismatch");
            if (!is_finite(c.mean)) throw config_error("GaussianMixture: non-finite mean");
            for (double v : c.variances)
                if (!(v > 0.0)) throw config_error("GaussianMixture: variances must be positive");
            if (c.label.name.empty()) throw config_error("GaussianMixture: empty label name");
            auto it = names.find(c.label.id);
            if (it == names.end()) {
                for (const auto& [id, name] : names)
                    if (name == c.label.name)
                        throw config_error("GaussianMixture: label name '" + name +
                                           "' reused under a different id");
                names.emplace(c.label.id, c.label.name);
            } else if (it->second != c.label.name) {
                throw config_error("GaussianMixture: label id " + std::to_string(c.label.id) +
                                   " carries two names");
            }
            total += c.weight;
        }
        for (auto& c : components_) c.weight /= total;
    }

    int dimension() const { return dimension_; }
    const std::vector<MixtureComponent>& components() const { return components_; }

    /// Distinct labels in component order of first appearance.
    std::vector<ConceptLabel> labels() const {
        std::vector<ConceptLabel> out;
        for (const auto& c : components_) {
            bool seen = false;
            for (const auto& l : out) seen = seen || l.id == c.label.id;
            if (!seen) out.push_back(c.label);
        }
        return out;
    }

    bool has_label(const ConceptLabel& label) const {
        for (const auto& c : components_)
            if (c.label.id == label.id) return true;
        return false;
    }

    std::optional<ConceptLabel> find_label(const std::string& name) const {
        for (const auto& c : components_)
            if (c.label.name == name) return c.label;
        return std::nullopt;
    }

    Vec global_mean() const {
        Vec m(static_cast<std::size_t>(dimension_), 0.0);
        for (const auto& c : components_)
            for (int j = 0; j < dimension_; ++j) m[static_cast<std::size_t>(j)] += c.weight * c.mean[static_cast<std::size_t>(j)];
        return m;
    }

private:
    std::vector<MixtureComponent> components_;
    int dimension_ = 0;
};

struct LatentPoint {
    Vec coords;
    int t = 0;
};

/// Sub-mixture selected by the condition, weights renormalized.
/// Null is the identity; selecting nothing is a condition error.
inline GaussianMixture restrict(const GaussianMixture& gmm, const Condition& condition) {
    if (condition.is_null()) return gmm;
    for (const auto& l : condition.labels())
        if (!gmm.has_label(l))
            throw condition_error("restrict: label '" + l.name + "' not present in world");
    std::vector<MixtureComponent> kept;
    for (const auto& c : gmm.components())
        if (condition.matches(c.label)) kept.push_back(c);
    if (kept.empty()) throw condition_error("restrict: condition selects no components");
    return GaussianMixture(std::move(kept), gmm.dimension());
}

namespace detail {

inline double log_gauss_diag(const Vec& x, const Vec& mean, const Vec& var) {
    constexpr double log_two_pi = 1.8378770664093453;  // log(2*pi)
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        double d = x[j] - mean[j];
        s += std::log(var[j]) + log_two_pi + d * d / var[j];
    }
    return -0.5 * s;
}

inline double logsumexp(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// Per-component parameters of the forward marginal at level t:
/// N(sqrt(ab)*mu_k, ab*var_k + (1-ab)) with the component's mixture weight.
struct NoisedComponent {
    double log_weight;
    Vec mean;
    Vec var;
};

inline std::vector<NoisedComponent> noised_components(const GaussianMixture& g, int t,
                                                      const NoiseSchedule& schedule) {
    const double ab = alpha_bar(schedule, t);
    const double root_ab = std::sqrt(ab);
    std::vector<NoisedComponent> out;
    out.reserve(g.components().size());
    for (const auto& c : g.components()) {
        NoisedComponent nc;
        nc.log_weight = std::log(c.weight);
        nc.mean.resize(c.mean.size());
        nc.var.resize(c.variances.size());
        for (std::size_t j = 0; j < c.mean.size(); ++j) {
            nc.mean[j] = root_ab * c.mean[j];
            nc.var[j] = ab * c.variances[j] + (1.0 - ab);
        }
        out.push_back(std::move(nc));
    }
    return out;
}

inline double marginal_log_density_restricted(const GaussianMixture& g, const Vec& x, int t,
                                              const NoiseSchedule& schedule) {
    auto comps = noised_components(g, t, schedule);
    std::vector<double> lw(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k)
        lw[k] = comps[k].log_weight + log_gauss_diag(x, comps[k].mean, comps[k].var);
    return logsumexp(lw);
}

/// Exact noise prediction on an already-restricted mixture:
///   eps*(x, t) = -sqrt(1 - ab_t) * grad_x log p_t(x)
/// with the score as the responsibility-weighted sum of per-component
/// Gaussian gradients. Responsibilities go through log-sum-exp, so no raw
/// exponential of a large negative ever appears.
inline Vec analytic_noise_restricted(const GaussianMixture& g, const Vec& x, int t,
                                     const NoiseSchedule& schedule) {
    const double ab = alpha_bar(schedule, t);
    auto comps = noised_components(g, t, schedule);
    std::vector<double> lw(comps.size());
    double mx = -1e308;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        lw[k] = comps[k].log_weight + log_gauss_diag(x, comps[k].mean, comps[k].var);
        mx = std::max(mx, lw[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        lw[k] = std::exp(lw[k] - mx);  // now an unnormalized responsibility in (0, 1]
        total += lw[k];
    }

    Vec eps(x.size(), 0.0);
    const double root_one_minus_ab = std::sqrt(1.0 - ab);
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const double resp = lw[k] / total;
        for (std::size_t j = 0; j < x.size(); ++j)
            eps[j] += resp * (x[j] - comps[k].mean[j]) / comps[k].var[j];
    }
    for (double& e : eps) e *= root_one_minus_ab;
    return eps;
}

}  // namespace detail

/// log p_t(x | condition): density of the restricted mixture pushed through
/// the forward corruption to noise level t.
inline double marginal_log_density(const GaussianMixture& gmm, const Condition& condition,
                                   const Vec& x, int t, const NoiseSchedule& schedule) {
    if (!is_finite(x)) throw contract_error("marginal_log_density: non-finite input");
    if (x.size() != static_cast<std::size_t>(gmm.dimension()))
        throw contract_error("marginal_log_density: input dimension mismatch");
    if (condition.is_null()) return detail::marginal_log_density_restricted(gmm, x, t, schedule);
    return detail::marginal_log_density_restricted(restrict(gmm, condition), x, t, schedule);
}

/// Exact conditional noise prediction eps*(x, condition, t). This is the
/// closed-form stand-in for a trained denoiser: the minimizer of the usual
/// noise-matching objective under the known mixture.
inline Vec analytic_noise(const GaussianMixture& gmm, const Condition& condition, const Vec& x,
                          int t, const NoiseSchedule& schedule) {
    if (t < 1)
        throw std::domain_error("analytic_noise: no noise to predict at t=0");
    if (!is_finite(x)) throw contract_error("analytic_noise: non-finite input");
    if (x.size() != static_cast<std::size_t>(gmm.dimension()))
        throw contract_error("analytic_noise: input dimension mismatch");
    if (condition.is_null()) return detail::analytic_noise_restricted(gmm, x, t, schedule);
    return detail::analytic_noise_restricted(restrict(gmm, condition), x, t, schedule);
}

/// Clean-data draw from the restricted mixture. Deterministic given seed.
inline LatentPoint sample_data(const GaussianMixture& gmm, const Condition& condition,
                               std::uint64_t seed) {
    const GaussianMixture r = restrict(gmm, condition);
    Rng rng(seed);
    std::vector<double> weights;
    weights.reserve(r.components().size());
    for (const auto& c : r.components()) weights.push_back(c.weight);
    const auto& comp = r.components()[rng.categorical(weights)];
    Vec coords(comp.mean.size());
    for (std::size_t j = 0; j < coords.size(); ++j)
        coords[j] = comp.mean[j] + std::sqrt(comp.variances[j]) * rng.normal();
    return LatentPoint{std::move(coords), 0};
}

/// Bayes posterior over labels at t = 0.
inline std::map<int, double> posterior(const GaussianMixture& gmm, const Vec& x) {
    if (!is_finite(x)) throw contract_error("posterior: non-finite input");
    if (x.size() != static_cast<std::size_t>(gmm.dimension()))
        throw contract_error("posterior: input dimension mismatch");
    const auto& comps = gmm.components();
    std::vector<double> lw(comps.size());
    double mx = -1e308;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        lw[k] = std::log(comps[k].weight) +
                detail::log_gauss_diag(x, comps[k].mean, comps[k].variances);
        mx = std::max(mx, lw[k]);
    }
    // Normalize by the plain exponential sum so exact ties split exactly.
    std::vector<double> resp(comps.size());
    double total = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        resp[k] = std::exp(lw[k] - mx);
        total += resp[k];
    }
    std::map<int, double> out;
    for (std::size_t k = 0; k < comps.size(); ++k)
        out[comps[k].label.id] += resp[k] / total;
    return out;
}

/// Draw from a deliberately degraded version of one concept: component means
/// pulled toward the global mixture mean by `pull` and variances inflated by
/// inflate^2. pull=0, inflate=1 reproduces the clean concept distribution.
inline LatentPoint weak_concept_sample(const GaussianMixture& gmm, const ConceptLabel& label,
                                       double pull, double inflate, std::uint64_t seed) {
    if (!gmm.has_label(label))
        throw condition_error("weak_concept_sample: unknown label '" + label.name + "'");
    if (!(pull >= 0.0 && pull <= 1.0))
        throw config_error("weak_concept_sample: pull must be in [0, 1]");
    if (!(inflate >= 1.0)) throw config_error("weak_concept_sample: inflate must be >= 1");

    const Vec m = gmm.global_mean();
    std::vector<MixtureComponent> weakened;
    for (const auto& c : gmm.components()) {
        if (c.label.id != label.id) continue;
        MixtureComponent w = c;
        for (std::size_t j = 0; j < w.mean.size(); ++j) {
            w.mean[j] = (1.0 - pull) * c.mean[j] + pull * m[j];
            w.variances[j] = inflate * inflate * c.variances[j];
        }
        weakened.push_back(std::move(w));
    }
    return sample_data(GaussianMixture(std::move(weakened), gmm.dimension()), Condition::null(),
                       seed);
}

/// Default world used by the command-line studies: ten unit-variance
/// concepts, equal weights, means on a circle of radius 13 (about eight
/// standard deviations between neighbors).
inline GaussianMixture reference_world() {
    constexpr int kLabels = 10;
    constexpr double kRadius = 13.0;
    const double two_pi = 2.0 * std::acos(-1.0);
    std::vector<MixtureComponent> comps;
    for (int k = 0; k < kLabels; ++k) {
        MixtureComponent c;
        c.weight = 1.0;
        const double angle = two_pi * k / kLabels;
        c.mean = {kRadius * std::cos(angle), kRadius * std::sin(angle)};
        c.variances = {1.0, 1.0};
        c.label = ConceptLabel{k, "c" + std::to_string(k)};
        comps.push_back(std::move(c));
    }
    return GaussianMixture(std::move(comps), 2);
}

}  // namespace diffscale
