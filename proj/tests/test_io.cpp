#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "diffscale/io.hpp"
#include "diffscale/svg.hpp"

using namespace diffscale;

namespace {

GaussianMixture small_world() {
    MixtureComponent a, b;
    a.weight = 0.25;
    b.weight = 0.75;
    a.mean = {1.0 / 3.0, -2.718281828459045};
    b.mean = {-4.0, 0.1};
    a.variances = {0.7, 1.3};
    b.variances = {2.0, 0.5};
    a.label = ConceptLabel{0, "A"};
    b.label = ConceptLabel{1, "B"};
    return GaussianMixture({a, b}, 2);
}

}  // namespace

TEST_CASE("world serialization round-trips bit-exactly") {
    const auto world = small_world();
    const json j = world_to_json(world);
    const auto parsed = world_from_json(json::parse(j.dump()));
    REQUIRE(parsed.dimension() == world.dimension());
    REQUIRE(parsed.components().size() == world.components().size());
    for (std::size_t k = 0; k < world.components().size(); ++k) {
        const auto& orig = world.components()[k];
        const auto& back = parsed.components()[k];
        CHECK(back.weight == orig.weight);
        CHECK(back.mean == orig.mean);
        CHECK(back.variances == orig.variances);
        CHECK(back.label == orig.label);
    }
}

TEST_CASE("condition serialization covers all variants") {
    const ConceptLabel a{0, "A"}, b{1, "B"};
    for (const auto& cond : {Condition::null(), Condition::single(a),
                             Condition::subset({a, b})}) {
        const auto back = condition_from_json(json::parse(condition_to_json(cond).dump()));
        CHECK(back == cond);
    }
    CHECK_THROWS_AS(condition_from_json(json{{"variant", "banana"}}), config_error);
}

TEST_CASE("schedule spec round-trips and rebuilds the same schedule") {
    ScheduleSpec spec;
    spec.steps = 40;
    spec.offset = 0.0123;
    const auto back = schedule_spec_from_json(json::parse(schedule_spec_to_json(spec).dump()));
    CHECK(back.steps == spec.steps);
    CHECK(back.offset == spec.offset);
    CHECK(back.build().alphas_bar == spec.build().alphas_bar);
    CHECK_THROWS_AS(schedule_spec_from_json(json{{"type", "linear"}}), config_error);
}

TEST_CASE("scaling config round-trips") {
    const auto world = small_world();  // labels A and B
    ScalingConfig cfg;
    cfg.omega_base = -2.5;
    cfg.gamma = 0.75;
    cfg.t_exit = 12;
    cfg.regularization = Regularization::Full;
    cfg.refine_iters = 3;
    cfg.removal_condition = Condition::single(ConceptLabel{1, "B"});
    cfg.average_predictions = true;

    const json j = json::parse(scaling_config_to_json(cfg).dump());
    CHECK(j.at("removal_label").get<std::string>() == "B");
    const auto back = scaling_config_from_json(j, &world);
    CHECK(back.omega_base == cfg.omega_base);
    CHECK(back.gamma == cfg.gamma);
    CHECK(back.t_exit == cfg.t_exit);
    CHECK(back.regularization == cfg.regularization);
    CHECK(back.refine_iters == cfg.refine_iters);
    CHECK(back.removal_condition == cfg.removal_condition);
    CHECK(back.average_predictions == cfg.average_predictions);

    SECTION("null removal label and partial sections fall back to the base") {
        ScalingConfig base;
        base.omega_base = 0.25;
        const auto merged =
            scaling_config_from_json(json{{"gamma", 2.0}, {"removal_label", json()}}, nullptr,
                                     base);
        CHECK(merged.omega_base == 0.25);
        CHECK(merged.gamma == 2.0);
        CHECK(merged.removal_condition == Condition::null());
    }

    SECTION("unknown names and modes are config errors") {
        CHECK_THROWS_AS(scaling_config_from_json(json{{"regularization", "sometimes"}}),
                        config_error);
        CHECK_THROWS_AS(scaling_config_from_json(json{{"removal_label", "ghost"}}, &world),
                        config_error);
        CHECK_THROWS_AS(scaling_config_from_json(json{{"removal_label", "B"}}, nullptr),
                        config_error);
    }
}

TEST_CASE("trajectory export preserves every latent bit") {
    const auto schedule = build_cosine_schedule(12, 0.008);
    const auto world = small_world();
    const auto cond = Condition::single(ConceptLabel{0, "A"});
    auto pred = make_predictor(world, cond, schedule);
    const auto traj = invert({0.4, -1.9}, cond, pred, schedule, 3);

    ScheduleSpec spec;
    spec.steps = 12;
    const json j = trajectory_to_json(traj, spec);
    auto [back, back_spec] = trajectory_from_json(json::parse(j.dump()));
    REQUIRE(back.latents.size() == traj.latents.size());
    for (std::size_t t = 0; t < traj.latents.size(); ++t)
        CHECK(back.latents[t] == traj.latents[t]);
    CHECK(back.condition == traj.condition);
    CHECK(back_spec.steps == 12);

    json broken = j;
    broken["T"] = 99;
    CHECK_THROWS_AS(trajectory_from_json(broken), config_error);
}

TEST_CASE("experiment result document carries rows, reference and aggregates") {
    const auto schedule = build_cosine_schedule(50, 0.008);
    const auto world = reference_world();
    ScalingConfig cfg;
    cfg.omega_base = 0.0;
    cfg.gamma = 0.0;
    cfg.regularization = Regularization::Off;
    const auto result = removal_study(world, cfg, schedule, 12, 3);

    const json j = experiment_result_to_json(result);
    CHECK(j.at("run_id").get<std::string>() == result.run_id);
    CHECK(j.at("per_sample").size() == 12);
    CHECK(j.at("reference").size() == 12);
    CHECK(j.at("aggregates").at("removal_rate").get<double>() ==
          result.aggregates.removal_rate);

    const std::string csv = per_sample_csv(result);
    CHECK(csv.find("index,seed,label_id") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);  // header + 12 rows
}

TEST_CASE("trace csv lists one row per sampling step") {
    const auto schedule = build_cosine_schedule(10, 0.008);
    const auto world = small_world();
    ScalingConfig cfg;
    cfg.t_exit = 7;
    const auto result = scale_concept(sample_data(world, Condition::single(ConceptLabel{0, "A"}), 5).coords,
                                      Condition::single(ConceptLabel{0, "A"}), cfg, world,
                                      schedule);
    const std::string csv = trace_csv(result.trace);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);  // header + 10 steps
    CHECK(csv.find("t,omega,omega_reg") == 0);
}

TEST_CASE("json files round-trip through disk and bad files are config errors") {
    const auto dir = std::filesystem::temp_directory_path() / "diffscale_io_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "world.json").string();
    write_json_file(path, world_to_json(small_world()));
    const auto world = world_from_json(load_json_file(path));
    CHECK(world.components().size() == 2);

    const std::string garbled = (dir / "garbled.json").string();
    write_text_file(garbled, "{not json");
    CHECK_THROWS_AS(load_json_file(garbled), config_error);
    CHECK_THROWS_AS(load_json_file((dir / "missing.json").string()), config_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv doubles survive a parse round-trip") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 9.711930298712558e-04, 13.0}) {
        CHECK(std::stod(csv_double(v)) == v);
    }
}

TEST_CASE("svg scatter output is well-formed enough to embed") {
    const auto world = reference_world();
    const auto schedule = build_cosine_schedule(20, 0.008);
    const auto cond = Condition::single(world.labels()[0]);
    auto pred = make_predictor(world, cond, schedule);
    const Vec x0 = sample_data(world, cond, 9).coords;
    const auto traj = invert(x0, cond, pred, schedule, 2);
    const Vec out = reconstruct(traj, pred, schedule);

    const std::string svg = render_scatter_svg(world, &traj, &x0, &out);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("<line") != std::string::npos);          // density contours
    CHECK(svg.find(">c0</text>") != std::string::npos);     // label annotations

    MixtureComponent one;
    one.weight = 1.0;
    one.mean = {0.0};
    one.variances = {1.0};
    one.label = ConceptLabel{0, "A"};
    CHECK_THROWS_AS(render_scatter_svg(GaussianMixture({one}, 1), nullptr, nullptr, nullptr),
                    contract_error);
}
