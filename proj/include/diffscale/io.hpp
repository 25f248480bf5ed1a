#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "diffscale/errors.hpp"
#include "diffscale/eval.hpp"
#include "diffscale/inversion.hpp"
#include "diffscale/scaling.hpp"
#include "diffscale/schedule.hpp"
#include "diffscale/world.hpp"

namespace diffscale {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open file: " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write file: " + path);
    out << content;
    if (!out) throw config_error("write failed: " + path);
}

inline json load_json_file(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw config_error("invalid JSON in " + path + ": " + e.what());
    }
}

inline void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// labels, conditions, worlds
// ---------------------------------------------------------------------------

inline json label_to_json(const ConceptLabel& label) {
    return json{{"id", label.id}, {"name", label.name}};
}

inline ConceptLabel label_from_json(const json& j) {
    try {
        return ConceptLabel{j.at("id").get<int>(), j.at("name").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad label: ") + e.what());
    }
}

inline json condition_to_json(const Condition& condition) {
    switch (condition.kind()) {
        case Condition::Kind::Null:
            return json{{"variant", "null"}};
        case Condition::Kind::Single:
            return json{{"variant", "single"}, {"label", label_to_json(condition.labels()[0])}};
        case Condition::Kind::Subset: {
            json labels = json::array();
            for (const auto& l : condition.labels()) labels.push_back(label_to_json(l));
            return json{{"variant", "subset"}, {"labels", labels}};
        }
    }
    return json{{"variant", "null"}};
}

inline Condition condition_from_json(const json& j) {
    const std::string variant = j.value("variant", "null");
    if (variant == "null") return Condition::null();
    if (variant == "single") return Condition::single(label_from_json(j.at("label")));
    if (variant == "subset") {
        std::vector<ConceptLabel> labels;
        for (const auto& lj : j.at("labels")) labels.push_back(label_from_json(lj));
        return Condition::subset(std::move(labels));
    }
    throw config_error("bad condition variant: " + variant);
}

inline json world_to_json(const GaussianMixture& world) {
    json comps = json::array();
    for (const auto& c : world.components()) {
        comps.push_back(json{{"weight", c.weight},
                             {"mean", c.mean},
                             {"variances", c.variances},
                             {"label", label_to_json(c.label)}});
    }
    return json{{"dimension", world.dimension()}, {"components", comps}};
}

inline GaussianMixture world_from_json(const json& j) {
    try {
        const int dim = j.at("dimension").get<int>();
        std::vector<MixtureComponent> comps;
        for (const auto& cj : j.at("components")) {
            MixtureComponent c;
            c.weight = cj.at("weight").get<double>();
            c.mean = cj.at("mean").get<Vec>();
            c.variances = cj.at("variances").get<Vec>();
            c.label = label_from_json(cj.at("label"));
            comps.push_back(std::move(c));
        }
        return GaussianMixture(std::move(comps), dim);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad world file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// schedules
// ---------------------------------------------------------------------------

/// Buildable description of a schedule; only the cosine family is
/// serializable, which is all the CLI ever constructs.
struct ScheduleSpec {
    int steps = 50;
    double offset = 0.008;

    NoiseSchedule build() const { return build_cosine_schedule(steps, offset); }
};

inline json schedule_spec_to_json(const ScheduleSpec& s) {
    return json{{"type", "cosine"}, {"steps", s.steps}, {"offset", s.offset}};
}

inline ScheduleSpec schedule_spec_from_json(const json& j) {
    const std::string type = j.value("type", "cosine");
    if (type != "cosine") throw config_error("unsupported schedule type: " + type);
    ScheduleSpec s;
    s.steps = j.value("steps", 50);
    s.offset = j.value("offset", 0.008);
    return s;
}

// ---------------------------------------------------------------------------
// scaling config
// ---------------------------------------------------------------------------

inline Regularization regularization_from_string(const std::string& s) {
    if (s == "off") return Regularization::Off;
    if (s == "full") return Regularization::Full;
    if (s == "early_exit") return Regularization::EarlyExit;
    throw config_error("unknown regularization mode: " + s +
                       " (expected off|full|early_exit)");
}

inline json scaling_config_to_json(const ScalingConfig& c) {
    json j{{"omega_base", c.omega_base},
           {"gamma", c.gamma},
           {"t_exit", c.t_exit},
           {"regularization", to_string(c.regularization)},
           {"refine_iters", c.refine_iters},
           {"average_predictions", c.average_predictions}};
    // The removal branch is unconditional (null), one helper concept, or,
    // through the library API, a set of helper concepts.
    if (c.removal_condition.is_null()) {
        j["removal_label"] = json();
    } else if (c.removal_condition.kind() == Condition::Kind::Single) {
        j["removal_label"] = c.removal_condition.labels()[0].name;
    } else {
        json names = json::array();
        for (const auto& l : c.removal_condition.labels()) names.push_back(l.name);
        j["removal_label"] = names;
    }
    return j;
}

/// Overlays the section onto `base`. A non-null removal_label is resolved
/// against `world`, which must then be provided.
inline ScalingConfig scaling_config_from_json(const json& j, const GaussianMixture* world = nullptr,
                                              ScalingConfig base = {}) {
    ScalingConfig c = std::move(base);
    c.omega_base = j.value("omega_base", c.omega_base);
    c.gamma = j.value("gamma", c.gamma);
    c.t_exit = j.value("t_exit", c.t_exit);
    if (j.contains("regularization"))
        c.regularization = regularization_from_string(j.at("regularization").get<std::string>());
    c.refine_iters = j.value("refine_iters", c.refine_iters);
    c.average_predictions = j.value("average_predictions", c.average_predictions);
    if (j.contains("removal_label")) {
        const auto& rl = j.at("removal_label");
        auto resolve = [&](const std::string& name) {
            if (!world) throw config_error("removal_label requires a world to resolve against");
            auto label = world->find_label(name);
            if (!label) throw config_error("removal_label '" + name + "' not in world");
            return *label;
        };
        if (rl.is_null()) {
            c.removal_condition = Condition::null();
        } else if (rl.is_array()) {
            std::vector<ConceptLabel> labels;
            for (const auto& nj : rl) labels.push_back(resolve(nj.get<std::string>()));
            c.removal_condition = Condition::subset(std::move(labels));
        } else {
            c.removal_condition = Condition::single(resolve(rl.get<std::string>()));
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// trajectories
// ---------------------------------------------------------------------------

inline json trajectory_to_json(const InversionTrajectory& traj, const ScheduleSpec& spec) {
    json latents = json::array();
    for (const auto& x : traj.latents) latents.push_back(x);
    return json{{"condition", condition_to_json(traj.condition)},
                {"T", traj.steps()},
                {"schedule", schedule_spec_to_json(spec)},
                {"latents", latents}};
}

inline std::pair<InversionTrajectory, ScheduleSpec> trajectory_from_json(const json& j) {
    try {
        InversionTrajectory traj;
        traj.condition = condition_from_json(j.at("condition"));
        ScheduleSpec spec = schedule_spec_from_json(j.at("schedule"));
        for (const auto& xj : j.at("latents")) traj.latents.push_back(xj.get<Vec>());
        traj.schedule_id = spec.build().id;
        if (traj.steps() != j.at("T").get<int>())
            throw config_error("trajectory file: latent count does not match T");
        for (const auto& x : traj.latents)
            if (!is_finite(x)) throw config_error("trajectory file: non-finite latent");
        return {std::move(traj), spec};
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad trajectory file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// experiment results
// ---------------------------------------------------------------------------

inline json aggregates_to_json(const Aggregates& a) {
    return json{{"removal_rate", a.removal_rate},
                {"mean_concept_score", a.mean_concept_score},
                {"energy_distance", a.energy_distance},
                {"frechet_distance", a.frechet_distance},
                {"mean_fidelity", a.mean_fidelity}};
}

inline json sample_record_to_json(const SampleRecord& r) {
    json j{{"seed", r.seed},
           {"label_id", r.label_id},
           {"input", r.input},
           {"present_before", r.present_before}};
    if (r.ok()) {
        j["output"] = r.output;
        j["concept_score_in"] = r.concept_score_in;
        j["concept_score_out"] = r.concept_score_out;
        j["fidelity"] = r.fidelity;
        j["removed"] = r.removed;
    } else {
        j["error"] = r.error;
    }
    return j;
}

inline json experiment_result_to_json(const ExperimentResult& result) {
    json rows = json::array();
    for (const auto& r : result.per_sample) rows.push_back(sample_record_to_json(r));
    json refs = json::array();
    for (const auto& x : result.reference) refs.push_back(x);
    return json{{"run_id", result.run_id},
                {"config", scaling_config_to_json(result.config)},
                {"base_seed", result.base_seed},
                {"aggregates", aggregates_to_json(result.aggregates)},
                {"per_sample", rows},
                {"reference", refs}};
}

inline std::string per_sample_csv(const ExperimentResult& result) {
    std::ostringstream out;
    out << "index,seed,label_id,present_before,removed,concept_score_in,concept_score_out,"
           "fidelity,error\n";
    for (std::size_t i = 0; i < result.per_sample.size(); ++i) {
        const auto& r = result.per_sample[i];
        out << i << ',' << r.seed << ',' << r.label_id << ',' << (r.present_before ? 1 : 0)
            << ',' << (r.removed ? 1 : 0) << ',';
        if (r.ok()) {
            out << csv_double(r.concept_score_in) << ',' << csv_double(r.concept_score_out)
                << ',' << csv_double(r.fidelity) << ",\n";
        } else {
            out << ",,," << '"' << r.error << '"' << "\n";
        }
    }
    return out.str();
}

inline std::string trace_csv(const std::vector<ScaleStep>& trace) {
    std::ostringstream out;
    out << "t,omega,omega_reg,norm_removal,norm_reconstruction,norm_regularization,"
           "norm_combined\n";
    for (const auto& step : trace) {
        out << step.t << ',' << csv_double(step.omega) << ',' << csv_double(step.omega_reg)
            << ',' << csv_double(norm(step.noises.removal_noise)) << ','
            << csv_double(norm(step.noises.reconstruction_noise)) << ',';
        if (step.noises.regularization_noise)
            out << csv_double(norm(*step.noises.regularization_noise));
        out << ',' << csv_double(norm(step.noises.combined_noise)) << "\n";
    }
    return out.str();
}

inline std::string ablation_summary_csv(const std::vector<ExperimentResult>& results) {
    std::ostringstream out;
    out << "gamma,regularization,energy_distance,mean_concept_score,mean_fidelity,"
           "frechet_distance,removal_rate\n";
    for (const auto& r : results) {
        out << csv_double(r.config.gamma) << ',' << to_string(r.config.regularization) << ','
            << csv_double(r.aggregates.energy_distance) << ','
            << csv_double(r.aggregates.mean_concept_score) << ','
            << csv_double(r.aggregates.mean_fidelity) << ','
            << csv_double(r.aggregates.frechet_distance) << ','
            << csv_double(r.aggregates.removal_rate) << "\n";
    }
    return out.str();
}

}  // namespace diffscale
