// Command-line front end: world generation, inversion, concept scaling,
// and the study drivers. Every command is reproducible: fixed arguments and
// seed give byte-identical output files, independent of --threads.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffscale/eval.hpp"
#include "diffscale/inversion.hpp"
#include "diffscale/io.hpp"
#include "diffscale/scaling.hpp"
#include "diffscale/svg.hpp"
#include "diffscale/world.hpp"

namespace fs = std::filesystem;
using namespace diffscale;

namespace {

Vec parse_point(const std::string& text) {
    Vec out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(part, &used));
            while (used < part.size() && std::isspace(static_cast<unsigned char>(part[used])))
                ++used;
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw config_error("cannot parse coordinate '" + part + "' in --input");
        }
    }
    if (out.empty()) throw config_error("--input is empty");
    return out;
}

ConceptLabel resolve_label(const GaussianMixture& world, const std::string& name) {
    if (auto l = world.find_label(name)) return *l;
    std::string known;
    for (const auto& l : world.labels()) known += (known.empty() ? "" : ", ") + l.name;
    throw condition_error("unknown concept '" + name + "' (world has: " + known + ")");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw config_error("cannot create output directory: " + dir);
}

std::string join(const std::string& dir, const std::string& file) {
    return (fs::path(dir) / file).string();
}

// Options shared by the pipeline commands, merged as: built-in default,
// then --config file, then explicit flags.
struct PipelineOptions {
    std::string config_path;
    std::string world_path;
    ScheduleSpec schedule;
    ScalingConfig scaling;
    json scaling_section;  // raw config-file section, resolved once the world is known
    std::string removal_label;
    int n_samples = 100;
    std::uint64_t seed = 42;
    std::string output_dir = ".";
    int threads = 1;
    WeakParams weak;

    // raw flag storage; applied only when the option was actually given
    double flag_omega = 5.0, flag_gamma = 3.0, flag_offset = 0.008;
    int flag_t_exit = 35, flag_refine = 5, flag_steps = 50;
    std::string flag_reg = "early_exit";
    bool flag_avg = false;

    CLI::Option* opt_omega = nullptr;
    CLI::Option* opt_gamma = nullptr;
    CLI::Option* opt_t_exit = nullptr;
    CLI::Option* opt_reg = nullptr;
    CLI::Option* opt_refine = nullptr;
    CLI::Option* opt_steps = nullptr;
    CLI::Option* opt_offset = nullptr;
    CLI::Option* opt_removal = nullptr;
    CLI::Option* opt_avg = nullptr;

    void add_common(CLI::App* cmd, bool with_experiment) {
        cmd->add_option("--config", config_path,
                        "JSON run-config file; precedence is flag > config file > default");
        cmd->add_option("--world", world_path, "world file written by gen-world");
        opt_omega = cmd->add_option("--omega-base", flag_omega, "scaling strength");
        opt_gamma = cmd->add_option("--gamma", flag_gamma, "schedule sharpness (>= 0)");
        opt_t_exit = cmd->add_option("--t-exit", flag_t_exit, "regularization early-exit level");
        opt_reg = cmd->add_option("--regularization", flag_reg, "off|full|early_exit");
        opt_refine = cmd->add_option("--refine", flag_refine, "inversion fixed-point iterations");
        opt_steps = cmd->add_option("--steps", flag_steps, "sampling steps T");
        opt_offset = cmd->add_option("--offset", flag_offset, "cosine schedule offset");
        opt_removal =
            cmd->add_option("--removal-label", removal_label,
                            "concept name for the removal branch (default: unconditional)");
        opt_avg = cmd->add_flag("--average-predictions", flag_avg,
                                "average the two regularization predictions instead of "
                                "predicting at the latent midpoint");
        if (with_experiment) {
            cmd->add_option("--n", n_samples, "number of samples");
            cmd->add_option("--seed", seed, "base seed");
            cmd->add_option("--out-dir", output_dir, "directory for result files");
            cmd->add_option("--threads", threads, "worker threads (results are identical)");
        }
    }

    void load_config_file() {
        if (config_path.empty()) return;
        const json j = load_json_file(config_path);
        if (j.contains("world") && world_path.empty())
            world_path = j.at("world").get<std::string>();
        if (j.contains("schedule")) schedule = schedule_spec_from_json(j.at("schedule"));
        if (j.contains("scaling")) scaling_section = j.at("scaling");
        if (j.contains("experiment")) {
            const auto& e = j.at("experiment");
            n_samples = e.value("n_samples", n_samples);
            seed = e.value("seed", seed);
            output_dir = e.value("output_dir", output_dir);
            threads = e.value("threads", threads);
        }
        if (j.contains("weak")) {
            weak.pull = j.at("weak").value("pull", weak.pull);
            weak.inflate = j.at("weak").value("inflate", weak.inflate);
        }
    }

    // Flags beat the config file; the config file beats defaults.
    // load_config_file() must already have run.
    void apply_flags(const GaussianMixture* world) {
        if (!scaling_section.is_null())
            scaling = scaling_config_from_json(scaling_section, world, scaling);
        if (opt_omega->count()) scaling.omega_base = flag_omega;
        if (opt_gamma->count()) scaling.gamma = flag_gamma;
        if (opt_t_exit->count()) scaling.t_exit = flag_t_exit;
        if (opt_reg->count()) scaling.regularization = regularization_from_string(flag_reg);
        if (opt_refine->count()) scaling.refine_iters = flag_refine;
        if (opt_steps->count()) schedule.steps = flag_steps;
        if (opt_offset->count()) schedule.offset = flag_offset;
        if (opt_avg->count()) scaling.average_predictions = flag_avg;
        if (opt_removal->count()) {
            if (!world) throw config_error("--removal-label requires a world");
            scaling.removal_condition = Condition::single(resolve_label(*world, removal_label));
        }
    }
};

GaussianMixture load_world(const std::string& path) {
    if (path.empty()) throw config_error("no world file given (use --world or a config file)");
    return world_from_json(load_json_file(path));
}

json scores_json(const GaussianMixture& world, const ConceptLabel& label, const Vec& input,
                 const Vec& output) {
    return json{{"concept_score_in", concept_score(world, input, label)},
                {"concept_score_out", concept_score(world, output, label)},
                {"posterior_in", posterior(world, input)[label.id]},
                {"posterior_out", posterior(world, output)[label.id]},
                {"fidelity", fidelity_distance(input, output)}};
}

int cmd_gen_world(const std::string& out_path, int labels, int dimension, double radius,
                  std::optional<std::uint64_t> seed) {
    if (dimension < 1) throw config_error("gen-world: dimension must be positive");
    if (labels < 2) throw config_error("gen-world: need at least two labels");
    if (!(radius > 0.0)) throw config_error("gen-world: radius must be positive");

    std::vector<MixtureComponent> comps;
    if (seed) {
        Rng rng(*seed);
        for (int k = 0; k < labels; ++k) {
            MixtureComponent c;
            c.weight = 1.0;
            for (int j = 0; j < dimension; ++j) {
                c.mean.push_back((2.0 * rng.uniform() - 1.0) * radius);
                c.variances.push_back(0.5 + 1.5 * rng.uniform());
            }
            c.label = ConceptLabel{k, "c" + std::to_string(k)};
            comps.push_back(std::move(c));
        }
    } else {
        const double two_pi = 2.0 * std::acos(-1.0);
        for (int k = 0; k < labels; ++k) {
            MixtureComponent c;
            c.weight = 1.0;
            c.mean.assign(static_cast<std::size_t>(dimension), 0.0);
            if (dimension == 1) {
                c.mean[0] = -radius + 2.0 * radius * k / (labels - 1);
            } else {
                const double angle = two_pi * k / labels;
                c.mean[0] = radius * std::cos(angle);
                c.mean[1] = radius * std::sin(angle);
            }
            c.variances.assign(static_cast<std::size_t>(dimension), 1.0);
            c.label = ConceptLabel{k, "c" + std::to_string(k)};
            comps.push_back(std::move(c));
        }
    }
    const GaussianMixture world(std::move(comps), dimension);
    write_json_file(out_path, world_to_json(world));
    std::cout << "wrote world with " << labels << " labels to " << out_path << "\n";
    return 0;
}

int cmd_invert(PipelineOptions& opts, const std::string& concept_name,
               const std::string& input_text, std::optional<std::uint64_t> draw_seed,
               const std::string& out_path) {
    opts.load_config_file();
    const GaussianMixture world = load_world(opts.world_path);
    opts.apply_flags(&world);
    const ConceptLabel label = resolve_label(world, concept_name);
    const Condition condition = Condition::single(label);

    Vec x0;
    if (!input_text.empty()) {
        x0 = parse_point(input_text);
        if (x0.size() != static_cast<std::size_t>(world.dimension()))
            throw config_error("--input dimension does not match the world");
    } else if (draw_seed) {
        x0 = sample_data(world, condition, *draw_seed).coords;
    } else {
        throw config_error("invert: give either --input or --draw-seed");
    }

    const NoiseSchedule schedule = opts.schedule.build();
    const NoisePredictor predictor = make_predictor(world, condition, schedule);
    const InversionTrajectory traj =
        invert(x0, condition, predictor, schedule, opts.scaling.refine_iters);
    const Vec back = reconstruct(traj, predictor, schedule);

    json doc = trajectory_to_json(traj, opts.schedule);
    doc["metadata"] = json{{"input", x0},
                           {"reconstruction", back},
                           {"roundtrip_error", distance(back, x0) / std::max(norm(x0), 1e-300)},
                           {"refine_iters", opts.scaling.refine_iters}};
    write_json_file(out_path, doc);
    std::cout << "inversion of '" << concept_name
              << "' written to " << out_path
              << " (roundtrip error " << csv_double(doc["metadata"]["roundtrip_error"].get<double>())
              << ")\n";
    return 0;
}

int cmd_scale(PipelineOptions& opts, const std::string& concept_name,
              const std::string& input_text, std::optional<std::uint64_t> draw_seed,
              const std::string& trajectory_path, const std::string& out_path,
              const std::string& svg_path, const std::string& trace_csv_path) {
    opts.load_config_file();
    const GaussianMixture world = load_world(opts.world_path);
    opts.apply_flags(&world);
    if (!svg_path.empty() && world.dimension() != 2)
        throw config_error("--svg needs a two-dimensional world");

    ScaleResult result;
    ConceptLabel label;
    Vec x0;
    std::optional<std::uint64_t> used_seed = draw_seed;

    if (!trajectory_path.empty()) {
        auto [traj, spec] = trajectory_from_json(load_json_file(trajectory_path));
        if (traj.condition.kind() != Condition::Kind::Single)
            throw config_error("trajectory file must carry a single-concept condition");
        label = traj.condition.labels()[0];
        if (!concept_name.empty() && resolve_label(world, concept_name) != label)
            throw config_error("--concept disagrees with the trajectory's condition");
        if (traj.latents.empty() ||
            traj.latents[0].size() != static_cast<std::size_t>(world.dimension()))
            throw config_error("trajectory dimension does not match the world");
        opts.schedule = spec;
        x0 = traj.latents[0];
        result = scale_concept(std::move(traj), opts.scaling, world, spec.build());
    } else {
        if (concept_name.empty()) throw config_error("scale: --concept is required");
        label = resolve_label(world, concept_name);
        if (!input_text.empty()) {
            x0 = parse_point(input_text);
            if (x0.size() != static_cast<std::size_t>(world.dimension()))
                throw config_error("--input dimension does not match the world");
        } else if (draw_seed) {
            x0 = sample_data(world, Condition::single(label), *draw_seed).coords;
        } else {
            throw config_error("scale: give --input, --draw-seed, or --trajectory");
        }
        result = scale_concept(x0, Condition::single(label), opts.scaling, world,
                               opts.schedule.build());
    }

    const bool reconstruction_mode = opts.scaling.omega_base == 1.0 &&
                                     opts.scaling.gamma == 0.0 &&
                                     opts.scaling.regularization == Regularization::Off;

    json trace = json::array();
    for (const auto& step : result.trace) {
        json sj{{"t", step.t},
                {"omega", step.omega},
                {"omega_reg", step.omega_reg},
                {"removal_noise", step.noises.removal_noise},
                {"reconstruction_noise", step.noises.reconstruction_noise},
                {"combined_noise", step.noises.combined_noise}};
        sj["regularization_noise"] =
            step.noises.regularization_noise ? json(*step.noises.regularization_noise) : json();
        trace.push_back(std::move(sj));
    }

    json doc{{"run",
              json{{"concept", label.name},
                   {"reconstruction_mode", reconstruction_mode},
                   {"config", scaling_config_to_json(opts.scaling)},
                   {"schedule", schedule_spec_to_json(opts.schedule)},
                   {"draw_seed", used_seed ? json(*used_seed) : json()}}},
             {"input", x0},
             {"output", result.output},
             {"scores", scores_json(world, label, x0, result.output)},
             {"trace", trace}};
    write_json_file(out_path, doc);

    if (!svg_path.empty()) {
        write_text_file(svg_path,
                        render_scatter_svg(world, &result.trajectory, &x0, &result.output));
    }
    if (!trace_csv_path.empty()) write_text_file(trace_csv_path, trace_csv(result.trace));

    std::cout << "scaled '" << label.name << "' omega_base=" << opts.scaling.omega_base
              << (reconstruction_mode ? " [reconstruction mode]" : "") << ", fidelity "
              << csv_double(doc["scores"]["fidelity"].get<double>()) << ", written to "
              << out_path << "\n";
    return 0;
}

void write_experiment_files(const std::string& out_dir, const ExperimentResult& result,
                            const PipelineOptions& opts) {
    json doc = experiment_result_to_json(result);
    doc["schedule"] = schedule_spec_to_json(opts.schedule);
    write_json_file(join(out_dir, result.run_id + ".json"), doc);
    write_text_file(join(out_dir, result.run_id + ".csv"), per_sample_csv(result));
}

int cmd_removal_study(PipelineOptions& opts) {
    // Suppression defaults: constant schedule so omega_base=1 is the exact
    // reconstruction control.
    opts.scaling.omega_base = 0.0;
    opts.scaling.gamma = 0.0;
    opts.scaling.regularization = Regularization::Off;
    opts.load_config_file();
    const GaussianMixture world = load_world(opts.world_path);
    opts.apply_flags(&world);

    ensure_dir(opts.output_dir);
    const ExperimentResult result = removal_study(world, opts.scaling, opts.schedule.build(),
                                                  opts.n_samples, opts.seed, opts.threads);
    write_experiment_files(opts.output_dir, result, opts);
    std::cout << result.run_id << ": removal_rate=" << csv_double(result.aggregates.removal_rate)
              << " mean_fidelity=" << csv_double(result.aggregates.mean_fidelity) << "\n";
    return 0;
}

int cmd_ablate(PipelineOptions& opts) {
    opts.load_config_file();
    const GaussianMixture world = load_world(opts.world_path);
    opts.apply_flags(&world);

    ensure_dir(opts.output_dir);
    const auto results =
        ablation_run(world, opts.scaling, default_ablation_cells(), opts.schedule.build(),
                     opts.n_samples, opts.seed, opts.weak, opts.threads);
    for (const auto& r : results) write_experiment_files(opts.output_dir, r, opts);
    write_text_file(join(opts.output_dir, "ablation_summary.csv"), ablation_summary_csv(results));
    for (const auto& r : results) {
        std::cout << "gamma=" << r.config.gamma << " reg=" << to_string(r.config.regularization)
                  << ": energy=" << csv_double(r.aggregates.energy_distance)
                  << " score=" << csv_double(r.aggregates.mean_concept_score)
                  << " fidelity=" << csv_double(r.aggregates.mean_fidelity) << "\n";
    }
    std::cout << "summary written to " << join(opts.output_dir, "ablation_summary.csv") << "\n";
    return 0;
}

int cmd_weak_gen(PipelineOptions& opts, double pull, double inflate, bool pull_given,
                 bool inflate_given) {
    opts.load_config_file();
    const GaussianMixture world = load_world(opts.world_path);
    opts.apply_flags(&world);
    if (pull_given) opts.weak.pull = pull;
    if (inflate_given) opts.weak.inflate = inflate;
    if (opts.n_samples < 1) throw config_error("weak-gen: --n must be >= 1");

    ensure_dir(opts.output_dir);
    const auto labels = world.labels();
    if (labels.size() < 2) throw config_error("weak-gen: world must carry at least two labels");

    json rows = json::array();
    std::string csv = "index,seed,label,weak_score,clean_score\n";
    double weak_total = 0.0, clean_total = 0.0;
    for (int i = 0; i < opts.n_samples; ++i) {
        const ConceptLabel label = labels[static_cast<std::size_t>(i) % labels.size()];
        const std::uint64_t s = derive_seed(opts.seed, static_cast<std::uint64_t>(i));
        const Vec weak_point =
            weak_concept_sample(world, label, opts.weak.pull, opts.weak.inflate, s).coords;
        const Vec clean_point =
            sample_data(world, Condition::single(label),
                        derive_seed(opts.seed, 0x100000000ull + static_cast<std::uint64_t>(i)))
                .coords;
        const double ws = concept_score(world, weak_point, label);
        const double cs = concept_score(world, clean_point, label);
        weak_total += ws;
        clean_total += cs;
        rows.push_back(json{{"seed", s},
                            {"label", label.name},
                            {"weak", weak_point},
                            {"weak_score", ws},
                            {"clean", clean_point},
                            {"clean_score", cs}});
        csv += std::to_string(i) + "," + std::to_string(s) + "," + label.name + "," +
               csv_double(ws) + "," + csv_double(cs) + "\n";
    }
    const std::string run_id = "weak-gen_pull" + detail::format_double_tag(opts.weak.pull) +
                               "_inflate" + detail::format_double_tag(opts.weak.inflate) + "_n" +
                               std::to_string(opts.n_samples) + "_seed" +
                               std::to_string(opts.seed);
    json doc{{"run_id", run_id},
             {"params", json{{"pull", opts.weak.pull},
                             {"inflate", opts.weak.inflate},
                             {"n_samples", opts.n_samples},
                             {"seed", opts.seed}}},
             {"aggregates", json{{"mean_weak_score", weak_total / opts.n_samples},
                                 {"mean_clean_score", clean_total / opts.n_samples}}},
             {"per_sample", rows}};
    write_json_file(join(opts.output_dir, run_id + ".json"), doc);
    write_text_file(join(opts.output_dir, run_id + ".csv"), csv);
    std::cout << run_id << ": mean_weak_score=" << csv_double(weak_total / opts.n_samples)
              << " mean_clean_score=" << csv_double(clean_total / opts.n_samples) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"concept scaling over an analytic Gaussian-mixture diffusion world"};
    app.require_subcommand(1);

    int exit_code = 0;
    std::function<int()> action;

    // gen-world
    auto* gen = app.add_subcommand("gen-world", "write a world file");
    std::string gen_out = "world.json";
    int gen_labels = 10, gen_dim = 2;
    double gen_radius = 13.0;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output path");
    gen->add_option("--labels", gen_labels, "number of concepts");
    gen->add_option("--dimension", gen_dim, "latent dimension");
    gen->add_option("--radius", gen_radius, "mean placement radius");
    auto* gen_seed_opt =
        gen->add_option("--seed", gen_seed, "randomize component placement under this seed");
    gen->callback([&] {
        action = [&, has_seed = gen_seed_opt->count() > 0] {
            return cmd_gen_world(gen_out, gen_labels, gen_dim, gen_radius,
                                 has_seed ? std::optional<std::uint64_t>(gen_seed)
                                          : std::nullopt);
        };
    });

    // invert
    auto* inv = app.add_subcommand("invert", "invert an input to the noise startpoint");
    PipelineOptions inv_opts;
    std::string inv_concept, inv_input, inv_out = "trajectory.json";
    std::uint64_t inv_draw_seed = 0;
    inv_opts.add_common(inv, false);
    inv->add_option("--concept", inv_concept, "concept name used during inversion")->required();
    inv->add_option("--input", inv_input, "comma-separated input point");
    auto* inv_seed_opt =
        inv->add_option("--draw-seed", inv_draw_seed, "draw the input from the concept");
    inv->add_option("--out", inv_out, "trajectory output path");
    inv->callback([&] {
        action = [&, has_seed = inv_seed_opt->count() > 0] {
            return cmd_invert(inv_opts, inv_concept, inv_input,
                              has_seed ? std::optional<std::uint64_t>(inv_draw_seed)
                                       : std::nullopt,
                              inv_out);
        };
    });

    // scale
    auto* sc = app.add_subcommand("scale", "run the concept-scaling pipeline on one input");
    PipelineOptions sc_opts;
    std::string sc_concept, sc_input, sc_traj, sc_out = "result.json", sc_svg, sc_trace;
    std::uint64_t sc_draw_seed = 0;
    sc_opts.add_common(sc, false);
    sc->add_option("--concept", sc_concept, "concept to scale");
    sc->add_option("--input", sc_input, "comma-separated input point");
    auto* sc_seed_opt =
        sc->add_option("--draw-seed", sc_draw_seed, "draw the input from the concept");
    sc->add_option("--trajectory", sc_traj, "reuse a trajectory file instead of re-inverting");
    sc->add_option("--out", sc_out, "result output path");
    sc->add_option("--svg", sc_svg, "also write a scatter plot (2-d worlds)");
    sc->add_option("--trace-csv", sc_trace, "also write the per-step trace as CSV");
    sc->callback([&] {
        action = [&, has_seed = sc_seed_opt->count() > 0] {
            return cmd_scale(sc_opts, sc_concept, sc_input,
                             has_seed ? std::optional<std::uint64_t>(sc_draw_seed) : std::nullopt,
                             sc_traj, sc_out, sc_svg, sc_trace);
        };
    });

    // removal-study
    auto* rem = app.add_subcommand("removal-study", "suppression study over clean inputs");
    PipelineOptions rem_opts;
    rem_opts.add_common(rem, true);
    rem->callback([&] {
        action = [&] { return cmd_removal_study(rem_opts); };
    });

    // ablate
    auto* abl = app.add_subcommand("ablate", "gamma/regularization grid on weak inputs");
    PipelineOptions abl_opts;
    abl_opts.add_common(abl, true);
    abl->callback([&] {
        action = [&] { return cmd_ablate(abl_opts); };
    });

    // weak-gen
    auto* wk = app.add_subcommand("weak-gen", "generate weak-concept samples with scores");
    PipelineOptions wk_opts;
    double wk_pull = 0.5, wk_inflate = 1.5;
    wk_opts.add_common(wk, true);
    auto* wk_pull_opt = wk->add_option("--pull", wk_pull, "mean pull toward the global mean");
    auto* wk_inflate_opt = wk->add_option("--inflate", wk_inflate, "standard deviation inflation");
    wk->callback([&] {
        action = [&, pg = wk_pull_opt->count() > 0, ig = wk_inflate_opt->count() > 0] {
            return cmd_weak_gen(wk_opts, wk_pull, wk_inflate, pg, ig);
        };
    });

    try {
        app.parse(argc, argv);
        if (action) exit_code = action();
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const condition_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 3;
    }
    return exit_code;
}
