#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace gridlevels;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

/// Small multilevel config that runs the whole pipeline in well under a second.
MultilevelConfig small_config(std::uint64_t seed) {
    MultilevelConfig cfg;
    cfg.count_l5 = 1;
    cfg.count_l4 = 2;
    cfg.count_l3 = 6;
    cfg.seed = seed;
    return cfg;
}

Scenario small_scenario(std::uint64_t seed) {
    Scenario sc;
    sc.network_config = small_config(seed);
    sc.perturbation.radius = 0.02;
    sc.perturbation.seed = 3;
    sc.sim.dt = 1e-3;
    sc.sim.T = 1.0;
    sc.sim.controller = "distributed";
    return sc;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("gridlevels_" + tag + "_" +
                                            std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("scenario serialization round-trips", "[scenario]") {
    Scenario sc = small_scenario(4);
    sc.weights.c_theta = 2.0;
    sc.perturbation.mode = "per_node";
    sc.perturbation.per_node = {{1, 0.01, -0.02, 0.005}};
    const json j = scenario_to_json(sc);
    const Scenario back = scenario_from_json(json::parse(j.dump()));
    CHECK(scenario_to_json(back).dump() == j.dump());
}

TEST_CASE("run_scenario happy path produces a full report and artifacts", "[scenario]") {
    TempDir dir("run");
    const Report rep = run_scenario(small_scenario(11), dir.str());
    CHECK(rep.ok());
    for (const char* st : {"build", "validate", "steady_state", "certify", "gains", "simulate",
                           "costs"})
        CHECK(rep.stage_status.at(st) == "pass");
    CHECK(rep.validation.has_value());
    CHECK(rep.steady.has_value());
    CHECK(rep.certificate.has_value());
    CHECK(rep.gains.has_value());
    CHECK(rep.costs.has_value());
    REQUIRE(rep.sims.size() == 1);
    CHECK(rep.sims[0].controller == "distributed");
    for (const char* f : {"graph.json", "validation.json", "steady.json", "certificate.json",
                          "gains.json", "trace_distributed.csv", "report.json"})
        CHECK(fs::exists(dir.path / f));

    SECTION("certificate tier and the cost bound are sane on this network") {
        CHECK(rep.certificate->direct);
        CHECK(rep.costs->holds);
        CHECK(rep.costs->j_c <= rep.costs->j_d_coupled + 1e-9);
        CHECK(rep.gains->beta_d > 0.0);
    }
    SECTION("report JSON round-trips losslessly") {
        const json j = report_to_json(rep);
        const Report back = report_from_json(json::parse(j.dump()));
        CHECK(report_to_json(back).dump() == j.dump());
    }
    SECTION("trace CSV parses back bit-identically") {
        const Trace tr = read_trace_csv((dir.path / "trace_distributed.csv").string());
        const std::string second = (dir.path / "rewrite.csv").string();
        write_trace_csv(second, tr, 9);
        std::ifstream a((dir.path / "trace_distributed.csv"));
        std::ifstream b(second);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }
}

TEST_CASE("run_scenario surfaces solver failures with the stage name", "[scenario]") {
    TempDir dir("fail");
    // two-node graph demanding twice the line's transfer capacity, with
    // voltage damping stiff enough that the voltages cannot rise to carry it
    const NetworkGraph g = gltest::two_node_toy(1.0, 50.0, 2.0, {49.0, 49.0});
    const std::string gpath = (dir.path / "bad_graph.json").string();
    save_json(gpath, graph_to_json(g));
    Scenario sc;
    sc.graph_file = gpath;
    sc.sim.controller = "open";
    sc.sim.T = 0.5;
    bool threw = false;
    try {
        run_scenario(sc, dir.str());
    } catch (const ConvergenceError& e) {
        threw = true;
        CHECK(e.stage() == "steady_state");
    }
    CHECK(threw);
    const Report rep = report_from_json(load_json((dir.path / "report.json").string()));
    CHECK(rep.error_stage == "steady_state");
    CHECK(rep.stage_status.at("steady_state") == "fail");
    CHECK(rep.stage_status.at("build") == "pass");
    CHECK(rep.stage_status.at("gains") == "skipped");
}

TEST_CASE("open-loop scenarios skip the gain and cost stages", "[scenario]") {
    TempDir dir("open");
    Scenario sc = small_scenario(13);
    sc.sim.controller = "open";
    const Report rep = run_scenario(sc, dir.str());
    CHECK(rep.ok());
    CHECK(rep.stage_status.at("gains") == "skipped");
    CHECK(rep.stage_status.at("costs") == "skipped");
    CHECK_FALSE(rep.gains.has_value());
    CHECK_FALSE(rep.costs.has_value());
    REQUIRE(rep.sims.size() == 1);
    CHECK(rep.sims[0].lyapunov_nonincreasing);
    CHECK_FALSE(fs::exists(dir.path / "gains.json"));
}

TEST_CASE("batch runs are deterministic and aggregate by the mean", "[scenario]") {
    Scenario sc = small_scenario(17);
    sc.sim.T = 0.5;
    const BatchResult a = run_batch(sc, 4, 2);
    const BatchResult b = run_batch(sc, 4, 1);  // different worker count
    REQUIRE(a.rows.size() == 4);
    CHECK(a.n_failed == 0);
    CHECK(batch_to_json(a).dump() == batch_to_json(b).dump());

    double mf = 0.0, mv = 0.0, mx = 0.0;
    for (const auto& r : a.rows) {
        mf += r.freq_variance;
        mv += r.volt_variance;
        mx += r.xT_norm;
        REQUIRE(r.j_d.has_value());
        CHECK(*r.j_c <= *r.j_d + 1e-9);
    }
    CHECK(a.mean_freq_variance == Approx(mf / 4).epsilon(1e-12));
    CHECK(a.mean_volt_variance == Approx(mv / 4).epsilon(1e-12));
    CHECK(a.mean_xT_norm == Approx(mx / 4).epsilon(1e-12));

    SECTION("a single-seed batch matches the one-shot scenario run") {
        TempDir dir("single");
        const BatchResult one = run_batch(sc, 1, 1);
        Scenario direct = sc;
        direct.perturbation.seed = one.rows[0].seed;
        const Report rep = run_scenario(direct, dir.str());
        CHECK(one.rows[0].freq_variance == Approx(rep.sims[0].freq_variance).epsilon(1e-12));
        CHECK(one.rows[0].volt_variance == Approx(rep.sims[0].volt_variance).epsilon(1e-12));
        CHECK(one.rows[0].xT_norm == Approx(rep.sims[0].xT_norm).epsilon(1e-12));
    }
}

TEST_CASE("distributed control lowers both variance metrics on paired seeds", "[scenario]") {
    Scenario sc = small_scenario(19);
    sc.perturbation.radius = 0.05;
    sc.sim.T = 5.0;
    const BatchResult open = [&] {
        Scenario s = sc;
        s.sim.controller = "open";
        return run_batch(s, 5, 0);
    }();
    const BatchResult dist = run_batch(sc, 5, 0);
    REQUIRE(open.n_failed == 0);
    REQUIRE(dist.n_failed == 0);
    CHECK(dist.mean_freq_variance < open.mean_freq_variance);
    CHECK(dist.mean_volt_variance < open.mean_volt_variance);
    // paired per-seed comparison (same derived perturbation seeds)
    for (std::size_t i = 0; i < open.rows.size(); ++i) {
        CHECK(open.rows[i].seed == dist.rows[i].seed);
        CHECK(dist.rows[i].freq_variance < open.rows[i].freq_variance);
    }
}

TEST_CASE("per-node perturbations land in the right slots", "[scenario]") {
    const NetworkGraph g = build_multilevel(small_config(23));
    const StateLayout lay(g.size(), g.reference);
    PerturbationSpec pert;
    pert.mode = "per_node";
    pert.per_node = {{0, 0.1, -0.2, 0.3}};
    const Eigen::VectorXd dev = initial_deviation(pert, lay);
    CHECK(dev[lay.theta(0)] == 0.1);
    CHECK(dev[lay.omega(0)] == -0.2);
    CHECK(dev[lay.v(0)] == 0.3);
    CHECK(dev.cwiseAbs().sum() == Approx(0.6).margin(1e-15));

    PerturbationSpec bad = pert;
    bad.per_node = {{g.reference, 0.1, 0.0, 0.0}};
    CHECK_THROWS_AS(initial_deviation(bad, lay), ConfigError);
    bad.per_node = {{999, 0.0, 0.0, 0.0}};
    CHECK_THROWS_AS(initial_deviation(bad, lay), ConfigError);
}

// ---------------------------------------------------------------------------
// CLI integration (needs the built binary; enabled when GRIDLEVELS_CLI is set)
// ---------------------------------------------------------------------------

namespace {

int run_cli(const std::string& args) {
    const char* bin = std::getenv("GRIDLEVELS_CLI");
    REQUIRE(bin != nullptr);
    const std::string cmd = std::string(bin) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("cli pipeline: staged subcommands consume each other's outputs", "[cli]") {
    TempDir dir("cli");
    const std::string out = dir.str();
    const std::string cfg = (dir.path / "scenario.json").string();
    Scenario sc = small_scenario(29);
    sc.sim.T = 0.5;
    save_json(cfg, scenario_to_json(sc));

    CHECK(run_cli("build --config " + cfg + " --out " + out) == 0);
    CHECK(fs::exists(dir.path / "graph.json"));
    CHECK(run_cli("steady --graph " + out + "/graph.json --out " + out) == 0);
    CHECK(fs::exists(dir.path / "steady.json"));
    CHECK(run_cli("certify --graph " + out + "/graph.json --steady " + out +
                  "/steady.json --out " + out) == 0);
    CHECK(fs::exists(dir.path / "certificate.json"));
    CHECK(run_cli("gains --graph " + out + "/graph.json --steady " + out + "/steady.json --out " +
                  out) == 0);
    CHECK(fs::exists(dir.path / "gains.json"));
    CHECK(run_cli("simulate --config " + cfg + " --graph " + out + "/graph.json --steady " + out +
                  "/steady.json --gains " + out + "/gains.json --out " + out) == 0);
    CHECK(fs::exists(dir.path / "trace_distributed.csv"));
    CHECK(fs::exists(dir.path / "sim.json"));
    CHECK(run_cli("compare --config " + cfg + " --graph " + out + "/graph.json --steady " + out +
                  "/steady.json --out " + out) == 0);
    CHECK(fs::exists(dir.path / "costs.json"));
    CHECK(run_cli("batch --config " + cfg + " --seeds 2 --workers 2 --out " + out) == 0);
    CHECK(fs::exists(dir.path / "batch.json"));
    CHECK(run_cli("run --config " + cfg + " --controller central --out " + out) == 0);
    CHECK(fs::exists(dir.path / "trace_central.csv"));
    const Report rep = report_from_json(load_json(out + "/report.json"));
    CHECK(rep.ok());
}

TEST_CASE("cli exit codes distinguish failure classes", "[cli]") {
    TempDir dir("clierr");
    const std::string out = dir.str();

    SECTION("malformed config exits with 2") {
        const std::string cfg = (dir.path / "broken.json").string();
        std::ofstream(cfg) << "{ not json";
        CHECK(run_cli("run --config " + cfg + " --out " + out) == 2);
    }
    SECTION("infeasible steady state exits with 3") {
        const NetworkGraph g = gltest::two_node_toy(1.0, 50.0, 2.0, {49.0, 49.0});
        save_json((dir.path / "g.json").string(), graph_to_json(g));
        Scenario sc;
        sc.graph_file = (dir.path / "g.json").string();
        sc.sim.controller = "open";
        const std::string cfg = (dir.path / "scenario.json").string();
        save_json(cfg, scenario_to_json(sc));
        CHECK(run_cli("run --config " + cfg + " --out " + out) == 3);
    }
}
