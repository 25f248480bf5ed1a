#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "diffscale/io.hpp"

using namespace diffscale;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("DIFFSCALE_CLI");
    if (env && *env) return env;
    return "./tools/diffscale";  // build-tree default
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("diffscale_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("gen-world writes the default ring world deterministically") {
    TempDir dir;
    REQUIRE(run("gen-world --out " + dir.file("w1.json")) == 0);
    REQUIRE(run("gen-world --out " + dir.file("w2.json")) == 0);
    CHECK(slurp(dir.file("w1.json")) == slurp(dir.file("w2.json")));

    const auto world = world_from_json(load_json_file(dir.file("w1.json")));
    CHECK(world.dimension() == 2);
    CHECK(world.labels().size() == 10);
}

TEST_CASE("gen-world randomized placement is reproducible per seed") {
    TempDir dir;
    REQUIRE(run("gen-world --seed 9 --labels 4 --out " + dir.file("a.json")) == 0);
    REQUIRE(run("gen-world --seed 9 --labels 4 --out " + dir.file("b.json")) == 0);
    REQUIRE(run("gen-world --seed 10 --labels 4 --out " + dir.file("c.json")) == 0);
    CHECK(slurp(dir.file("a.json")) == slurp(dir.file("b.json")));
    CHECK(slurp(dir.file("a.json")) != slurp(dir.file("c.json")));
}

TEST_CASE("gen-world validation failures exit with code 2") {
    TempDir dir;
    CHECK(run("gen-world --dimension 0 --out " + dir.file("w.json")) == 2);
    CHECK(run("gen-world --labels 1 --out " + dir.file("w.json")) == 2);
    CHECK(run("gen-world --out /nonexistent_dir_zzz/w.json") == 2);
}

TEST_CASE("scale runs end to end and is byte-reproducible") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);

    const std::string common = "scale --world " + world +
                               " --concept c2 --draw-seed 5 --omega-base 2 --gamma 3 "
                               "--regularization early_exit --svg " + dir.file("plot.svg") +
                               " --trace-csv " + dir.file("trace.csv");
    REQUIRE(run(common + " --out " + dir.file("r1.json")) == 0);
    REQUIRE(run(common + " --out " + dir.file("r2.json")) == 0);
    CHECK(slurp(dir.file("r1.json")) == slurp(dir.file("r2.json")));

    const json r = json::parse(slurp(dir.file("r1.json")));
    CHECK(r.at("run").at("concept") == "c2");
    CHECK(r.at("trace").size() == 50);
    CHECK(slurp(dir.file("plot.svg")).rfind("<svg", 0) == 0);
    CHECK(slurp(dir.file("trace.csv")).rfind("t,omega", 0) == 0);
}

TEST_CASE("scale at unit strength flags reconstruction mode and stays near the input") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    REQUIRE(run("scale --world " + world +
                " --concept c0 --draw-seed 11 --omega-base 1 --gamma 0 "
                "--regularization off --out " + dir.file("r.json")) == 0);
    const json r = json::parse(slurp(dir.file("r.json")));
    CHECK(r.at("run").at("reconstruction_mode").get<bool>());
    const double fidelity = r.at("scores").at("fidelity").get<double>();
    double input_norm = 0.0;
    for (double v : r.at("input").get<Vec>()) input_norm += v * v;
    CHECK(fidelity / std::sqrt(input_norm) < 5e-2);
}

TEST_CASE("scale resumes from an exported trajectory with identical output") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    REQUIRE(run("invert --world " + world + " --concept c4 --draw-seed 21 --out " +
                dir.file("traj.json")) == 0);
    REQUIRE(run("scale --world " + world + " --trajectory " + dir.file("traj.json") +
                " --omega-base 3 --out " + dir.file("from_traj.json")) == 0);
    REQUIRE(run("scale --world " + world + " --concept c4 --draw-seed 21 --omega-base 3 --out " +
                dir.file("direct.json")) == 0);
    const json a = json::parse(slurp(dir.file("from_traj.json")));
    const json b = json::parse(slurp(dir.file("direct.json")));
    CHECK(a.at("output").get<Vec>() == b.at("output").get<Vec>());

    // mismatched concept vs trajectory condition
    CHECK(run("scale --world " + world + " --trajectory " + dir.file("traj.json") +
              " --concept c1 --out " + dir.file("x.json")) == 2);
}

TEST_CASE("missing or malformed inputs exit with code 2") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    CHECK(run("scale --world " + dir.file("missing.json") + " --concept c0 --draw-seed 1 --out " +
              dir.file("r.json")) == 2);
    CHECK(run("scale --world " + world + " --concept nosuch --draw-seed 1 --out " +
              dir.file("r.json")) == 2);
    CHECK(run("scale --world " + world + " --concept c0 --input 1.0 --out " + dir.file("r.json")) ==
          2);  // wrong dimension
    CHECK(run("scale --world " + world + " --concept c0 --input a,b --out " + dir.file("r.json")) ==
          2);
    CHECK(run("scale --world " + world + " --concept c0 --draw-seed 1 --regularization maybe "
              "--out " + dir.file("r.json")) == 2);
    CHECK(run("removal-study --world " + world + " --n 0 --out-dir " + dir.file("out")) == 2);
}

TEST_CASE("removal-study files are identical across thread counts") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    REQUIRE(run("removal-study --world " + world + " --n 20 --seed 7 --threads 1 --out-dir " +
                dir.file("t1")) == 0);
    REQUIRE(run("removal-study --world " + world + " --n 20 --seed 7 --threads 4 --out-dir " +
                dir.file("t4")) == 0);
    const std::string name = "removal-study_omega0_n20_seed7.json";
    CHECK(slurp(dir.file("t1/" + name)) == slurp(dir.file("t4/" + name)));
}

TEST_CASE("ablate emits the six-cell summary") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    REQUIRE(run("ablate --world " + world + " --n 20 --seed 3 --threads 4 --out-dir " +
                dir.file("out")) == 0);
    const std::string csv = slurp(dir.file("out/ablation_summary.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 6 cells
    CHECK(csv.find("gamma,regularization,energy_distance,mean_concept_score,mean_fidelity") == 0);
    // one result document per cell plus the summary
    int json_files = 0;
    for (const auto& entry : fs::directory_iterator(dir.file("out")))
        json_files += entry.path().extension() == ".json" ? 1 : 0;
    CHECK(json_files == 6);
}

TEST_CASE("weak-gen with identity parameters matches clean concept scores") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    REQUIRE(run("weak-gen --world " + world + " --pull 0 --inflate 1 --n 200 --seed 13 "
                "--out-dir " + dir.file("out")) == 0);
    const json doc =
        json::parse(slurp(dir.file("out/weak-gen_pull0_inflate1_n200_seed13.json")));
    const double weak = doc.at("aggregates").at("mean_weak_score").get<double>();
    const double clean = doc.at("aggregates").at("mean_clean_score").get<double>();
    CHECK(std::abs(weak - clean) < 0.2);
    CHECK(doc.at("per_sample").size() == 200);
}

TEST_CASE("config file furnishes defaults and flags override it") {
    TempDir dir;
    const std::string world = dir.file("w.json");
    REQUIRE(run("gen-world --out " + world) == 0);
    write_json_file(dir.file("config.json"),
                    json{{"world", world},
                         {"scaling", json{{"omega_base", 4.0}, {"gamma", 1.0},
                                          {"regularization", "off"}}},
                         {"experiment", json{{"n_samples", 20}, {"seed", 99}}}});

    REQUIRE(run("scale --config " + dir.file("config.json") +
                " --concept c1 --draw-seed 2 --out " + dir.file("a.json")) == 0);
    const json a = json::parse(slurp(dir.file("a.json")));
    CHECK(a.at("run").at("config").at("omega_base").get<double>() == 4.0);
    CHECK(a.at("run").at("config").at("gamma").get<double>() == 1.0);

    REQUIRE(run("scale --config " + dir.file("config.json") +
                " --concept c1 --draw-seed 2 --omega-base 7 --out " + dir.file("b.json")) == 0);
    const json b = json::parse(slurp(dir.file("b.json")));
    CHECK(b.at("run").at("config").at("omega_base").get<double>() == 7.0);
    CHECK(b.at("run").at("config").at("gamma").get<double>() == 1.0);
}
