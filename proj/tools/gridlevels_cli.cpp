// gridlevels command-line runner.
//
// Subcommands mirror the pipeline stages so each step can run standalone on
// the previous step's serialized output: build, steady, certify, gains,
// simulate, compare, batch, and `run` for the whole pipeline.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include "gridlevels/gridlevels.hpp"

namespace gl = gridlevels;
namespace fs = std::filesystem;

namespace {

int exit_code_for(const gl::Error& e) {
    if (dynamic_cast<const gl::ConfigError*>(&e) || dynamic_cast<const gl::KeyError*>(&e) ||
        dynamic_cast<const gl::DimensionError*>(&e) || dynamic_cast<const gl::DomainError*>(&e) ||
        dynamic_cast<const gl::RangeError*>(&e))
        return 2;
    if (dynamic_cast<const gl::ConvergenceError*>(&e) ||
        dynamic_cast<const gl::AssumptionViolation*>(&e) ||
        dynamic_cast<const gl::NumericalError*>(&e) ||
        dynamic_cast<const gl::IterationError*>(&e))
        return 3;
    if (dynamic_cast<const gl::StabilityError*>(&e) || dynamic_cast<const gl::StructureError*>(&e))
        return 4;
    return 1;
}

gl::Scenario load_scenario(const std::string& config_path) {
    return gl::scenario_from_json(gl::load_json(config_path));
}

gl::NetworkGraph load_graph_arg(const std::string& path) {
    return gl::graph_from_json(gl::load_json(path));
}

void print_validation(const gl::ValidationReport& rep) {
    for (const auto& c : rep.clauses)
        std::printf("  %-24s %s%s%s\n", c.name.c_str(), c.pass ? "pass" : "FAIL",
                    c.detail.empty() ? "" : "  ", c.detail.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multilevel grid control toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", graph_path, steady_path, gains_path;
    std::string controller;
    int seeds = 1, workers = 0;

    auto* cmd_build = app.add_subcommand("build", "build the network and validate it");
    cmd_build->add_option("--config", config_path, "scenario config (json)")->required();
    cmd_build->add_option("--out", out_dir, "output directory");

    auto* cmd_steady = app.add_subcommand("steady", "solve the synchronous state");
    cmd_steady->add_option("--graph", graph_path, "graph document")->required();
    cmd_steady->add_option("--out", out_dir, "output directory");

    auto* cmd_certify = app.add_subcommand("certify", "evaluate the stability certificate");
    cmd_certify->add_option("--graph", graph_path)->required();
    cmd_certify->add_option("--steady", steady_path)->required();
    cmd_certify->add_option("--out", out_dir);

    auto* cmd_gains = app.add_subcommand("gains", "synthesize distributed and centralized gains");
    cmd_gains->add_option("--graph", graph_path)->required();
    cmd_gains->add_option("--steady", steady_path)->required();
    cmd_gains->add_option("--config", config_path, "scenario config for the weights");
    cmd_gains->add_option("--out", out_dir);

    auto* cmd_sim = app.add_subcommand("simulate", "integrate the closed or open loop");
    cmd_sim->add_option("--config", config_path, "scenario config")->required();
    cmd_sim->add_option("--graph", graph_path, "graph document (else built from config)");
    cmd_sim->add_option("--steady", steady_path, "synchronous state (else solved)");
    cmd_sim->add_option("--gains", gains_path, "gains document (else synthesized)");
    cmd_sim->add_option("--controller", controller, "open|distributed|central");
    cmd_sim->add_option("--out", out_dir);

    auto* cmd_compare = app.add_subcommand("compare",
                                           "distributed vs centralized cost and the gap bound");
    cmd_compare->add_option("--config", config_path)->required();
    cmd_compare->add_option("--graph", graph_path, "graph document (else built from config)");
    cmd_compare->add_option("--steady", steady_path, "synchronous state (else solved)");
    cmd_compare->add_option("--out", out_dir);

    auto* cmd_batch = app.add_subcommand("batch", "run a seed batch of the scenario");
    cmd_batch->add_option("--config", config_path)->required();
    cmd_batch->add_option("--seeds", seeds, "number of perturbation seeds")->required();
    cmd_batch->add_option("--workers", workers, "parallel workers (default: hardware)");
    cmd_batch->add_option("--controller", controller, "override the scenario controller");
    cmd_batch->add_option("--out", out_dir);

    auto* cmd_run = app.add_subcommand("run", "full pipeline: build..costs plus report");
    cmd_run->add_option("--config", config_path)->required();
    cmd_run->add_option("--controller", controller, "override the scenario controller");
    cmd_run->add_option("--out", out_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(out_dir);
        if (cmd_build->parsed()) {
            const gl::Scenario sc = load_scenario(config_path);
            const gl::NetworkGraph graph =
                sc.network_config ? gl::build_multilevel(*sc.network_config)
                                  : load_graph_arg(sc.graph_file);
            gl::save_json(out_dir + "/graph.json", gl::graph_to_json(graph));
            const gl::ValidationReport rep = gl::validate_static(graph);
            gl::save_json(out_dir + "/validation.json", gl::validation_to_json(rep));
            std::printf("built %d nodes, %zu lines -> %s/graph.json\n", graph.size(),
                        graph.lines.size(), out_dir.c_str());
            print_validation(rep);
            return rep.all_pass ? 0 : 2;
        }
        if (cmd_steady->parsed()) {
            const gl::NetworkGraph graph = load_graph_arg(graph_path);
            const gl::SynchronousState st = gl::solve_synchronous_state(graph);
            gl::save_json(out_dir + "/steady.json", gl::steady_to_json(st));
            std::printf("synchronous state: residual %.3e after %d iterations -> %s/steady.json\n",
                        st.residual_inf, st.iterations, out_dir.c_str());
            return 0;
        }
        if (cmd_certify->parsed()) {
            const gl::NetworkGraph graph = load_graph_arg(graph_path);
            const gl::SynchronousState st = gl::steady_from_json(gl::load_json(steady_path));
            const gl::StabilityCertificate cert = gl::certify(graph, st);
            gl::save_json(out_dir + "/certificate.json", gl::certificate_to_json(cert));
            std::printf("certificate: sufficient=%s direct=%s C=%.6g C1=%.6g\n",
                        cert.sufficient ? "pass" : "fail", cert.direct ? "pass" : "fail",
                        cert.C, cert.C1);
            if (cert.region)
                std::printf("  region: r=%.6g c1=%.6g c2=%.6g delta(r)=%.6g\n", cert.region->r,
                            cert.region->c1, cert.region->c2, cert.region->delta(cert.region->r));
            return 0;
        }
        if (cmd_gains->parsed()) {
            const gl::NetworkGraph graph = load_graph_arg(graph_path);
            const gl::SynchronousState st = gl::steady_from_json(gl::load_json(steady_path));
            gl::WeightParams w;
            if (!config_path.empty()) w = load_scenario(config_path).weights;
            const gl::GainStage gs = gl::stage_gains(graph, st, w);
            gl::save_json(out_dir + "/gains.json", gl::gains_to_json(gs));
            std::printf("gains: beta_d=%.4f beta_c=%.4f central CARE residual %.2e\n", gs.beta_d,
                        gs.beta_c, gs.centralized.solution.residual_norm);
            return 0;
        }
        if (cmd_run->parsed()) {
            gl::Scenario sc = load_scenario(config_path);
            if (!controller.empty()) sc.sim.controller = controller;
            const gl::Report rep = gl::run_scenario(sc, out_dir);
            std::printf("scenario complete; report -> %s/report.json\n", out_dir.c_str());
            for (const auto& [stage, status] : rep.stage_status)
                std::printf("  %-12s %s\n", stage.c_str(), status.c_str());
            return 0;
        }
        if (cmd_sim->parsed()) {
            gl::Scenario sc = load_scenario(config_path);
            if (!controller.empty()) sc.sim.controller = controller;
            const gl::NetworkGraph graph =
                !graph_path.empty() ? load_graph_arg(graph_path)
                : sc.network_config ? gl::build_multilevel(*sc.network_config)
                                    : load_graph_arg(sc.graph_file);
            const gl::SynchronousState st =
                !steady_path.empty() ? gl::steady_from_json(gl::load_json(steady_path))
                                     : gl::solve_synchronous_state(graph);
            const gl::StateLayout lay(graph.size(), graph.reference);
            // feedback matrix: reuse a gains document when given, else synthesize
            Eigen::MatrixXd F;
            const Eigen::MatrixXd* Fp = nullptr;
            if (sc.sim.controller != "open") {
                if (!gains_path.empty()) {
                    const gl::LoadedGains lg = gl::gains_from_json(gl::load_json(gains_path), lay);
                    F = sc.sim.controller == "central" ? lg.F_c : lg.F_d;
                } else {
                    const gl::GainStage gs = gl::stage_gains(graph, st, sc.weights);
                    F = sc.sim.controller == "central" ? gs.centralized.F : gs.distributed.F;
                }
                Fp = &F;
            }
            const Eigen::VectorXd dev0 = gl::initial_deviation(sc.perturbation, lay);
            const gl::SimResult res = gl::simulate_scenario(graph, st, dev0, sc.sim, Fp);
            const std::string trace_file = out_dir + "/trace_" + sc.sim.controller + ".csv";
            gl::write_trace_csv(trace_file, res.trace, graph.size());
            gl::save_json(out_dir + "/sim.json",
                          {{"controller", sc.sim.controller},
                           {"x0_norm", res.x0_norm},
                           {"xT_norm", res.xT_norm},
                           {"freq_variance", res.variances.freq_variance},
                           {"volt_variance", res.variances.volt_variance},
                           {"lyapunov_nonincreasing", res.lyapunov_nonincreasing},
                           {"trace_file", trace_file}});
            std::printf("simulated %s: ||x(0)||=%.4g ||x(T)||=%.4g -> %s\n",
                        sc.sim.controller.c_str(), res.x0_norm, res.xT_norm, trace_file.c_str());
            return 0;
        }
        if (cmd_compare->parsed()) {
            gl::Scenario sc = load_scenario(config_path);
            const gl::NetworkGraph graph =
                !graph_path.empty() ? load_graph_arg(graph_path)
                : sc.network_config ? gl::build_multilevel(*sc.network_config)
                                    : load_graph_arg(sc.graph_file);
            const gl::SynchronousState st =
                !steady_path.empty() ? gl::steady_from_json(gl::load_json(steady_path))
                                     : gl::solve_synchronous_state(graph);
            const gl::GainStage gs = gl::stage_gains(graph, st, sc.weights);
            const gl::StateLayout lay(graph.size(), graph.reference);
            const Eigen::VectorXd dev0 = gl::initial_deviation(sc.perturbation, lay);
            const gl::CostSummary cs = gl::evaluate_scenario_costs(gs, lay, dev0);
            gl::json j = {{"x0_norm", cs.x0_norm},
                          {"j_d_coupled", cs.j_d_coupled},
                          {"j_d_isolated_sum", cs.j_d_isolated_sum},
                          {"j_c", cs.j_c},
                          {"gap", cs.gap},
                          {"gap_bound", cs.gap_bound},
                          {"holds", cs.holds},
                          {"beta_d", gs.beta_d}};
            gl::save_json(out_dir + "/costs.json", j);
            std::printf("J_d=%.8g  J_c=%.8g  gap=%.3e  bound=%.3e  holds=%s\n", cs.j_d_coupled,
                        cs.j_c, cs.gap, cs.gap_bound, cs.holds ? "yes" : "no");
            return 0;
        }
        if (cmd_batch->parsed()) {
            gl::Scenario sc = load_scenario(config_path);
            if (!controller.empty()) sc.sim.controller = controller;
            const gl::BatchResult br = gl::run_batch(sc, seeds, workers);
            gl::save_json(out_dir + "/batch.json", gl::batch_to_json(br));
            std::printf("batch of %d seeds (%d failed): mean freq var %.6e, mean volt var %.6e\n",
                        seeds, br.n_failed, br.mean_freq_variance, br.mean_volt_variance);
            if (br.mean_j_d) std::printf("  mean J_d %.8g  mean J_c %.8g\n", *br.mean_j_d, *br.mean_j_c);
            return br.n_failed == 0 ? 0 : 3;
        }
    } catch (const gl::Error& e) {
        std::fprintf(stderr, "error%s%s: %s\n", e.stage().empty() ? "" : " at stage ",
                     e.stage().c_str(), e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
