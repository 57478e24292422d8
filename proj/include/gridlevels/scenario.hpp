#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unsupported/Eigen/MatrixFunctions>
#include <vector>

#include "gridlevels/control.hpp"
#include "gridlevels/csv.hpp"
#include "gridlevels/dynamics.hpp"
#include "gridlevels/serialization.hpp"
#include "gridlevels/stability.hpp"
#include "gridlevels/steady_state.hpp"

namespace gridlevels {

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

struct PerNodePerturbation {
    int id = 0;
    double dtheta = 0.0;
    double domega = 0.0;
    double dv = 0.0;
};

struct PerturbationSpec {
    std::string mode = "ball";  // "ball" | "per_node"
    double radius = 1e-3;       // deviation norm for ball mode
    std::uint64_t seed = 1;
    std::vector<PerNodePerturbation> per_node;

    void validate() const {
        if (mode != "ball" && mode != "per_node")
            throw ConfigError("perturbation mode must be 'ball' or 'per_node'");
        if (!(radius >= 0.0)) throw ConfigError("perturbation radius must be >= 0");
    }
};

struct SimSpec {
    double dt = 1e-3;
    double T = 20.0;
    std::string controller = "distributed";  // "open" | "distributed" | "central"
    bool controller_in_stages = true;        // false selects zero-order hold

    void validate() const {
        if (!(dt > 0.0) || !(T > 0.0)) throw ConfigError("sim dt and T must be positive");
        if (controller != "open" && controller != "distributed" && controller != "central")
            throw ConfigError("controller must be 'open', 'distributed' or 'central'");
    }
};

struct Scenario {
    std::optional<MultilevelConfig> network_config;  // build a random multilevel network
    std::string graph_file;                          // ... or load this graph document
    WeightParams weights;
    PerturbationSpec perturbation;
    SimSpec sim;
    std::string outputs = "out";

    void validate() const {
        weights.validate();
        perturbation.validate();
        sim.validate();
        if (!network_config && graph_file.empty())
            throw ConfigError("scenario needs either a network config or a graph file");
    }
};

inline json scenario_to_json(const Scenario& sc) {
    json j;
    json net;
    if (sc.network_config) net["config"] = config_to_json(*sc.network_config);
    if (!sc.graph_file.empty()) net["graph_file"] = sc.graph_file;
    j["network"] = net;
    j["weights"] = {{"c_theta", sc.weights.c_theta},
                    {"c_v", sc.weights.c_v},
                    {"c_omega_ref", sc.weights.c_omega_ref},
                    {"q_u_omega", sc.weights.q_u_omega},
                    {"q_u_v", sc.weights.q_u_v}};
    json pert = {{"mode", sc.perturbation.mode},
                 {"radius", sc.perturbation.radius},
                 {"seed", sc.perturbation.seed}};
    if (!sc.perturbation.per_node.empty()) {
        json arr = json::array();
        for (const auto& p : sc.perturbation.per_node)
            arr.push_back({{"id", p.id}, {"dtheta", p.dtheta}, {"domega", p.domega}, {"dv", p.dv}});
        pert["per_node"] = arr;
    }
    j["perturbation"] = pert;
    j["sim"] = {{"dt", sc.sim.dt},
                {"T", sc.sim.T},
                {"controller", sc.sim.controller},
                {"controller_in_stages", sc.sim.controller_in_stages}};
    j["outputs"] = sc.outputs;
    return j;
}

inline Scenario scenario_from_json(const json& j) {
    Scenario sc;
    try {
        if (j.contains("network")) {
            const auto& net = j["network"];
            if (net.contains("config")) sc.network_config = config_from_json(net["config"]);
            if (net.contains("graph_file")) sc.graph_file = net["graph_file"].get<std::string>();
        }
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            if (w.contains("c_theta")) sc.weights.c_theta = w["c_theta"].get<double>();
            if (w.contains("c_v")) sc.weights.c_v = w["c_v"].get<double>();
            if (w.contains("c_omega_ref")) sc.weights.c_omega_ref = w["c_omega_ref"].get<double>();
            if (w.contains("q_u_omega")) sc.weights.q_u_omega = w["q_u_omega"].get<double>();
            if (w.contains("q_u_v")) sc.weights.q_u_v = w["q_u_v"].get<double>();
        }
        if (j.contains("perturbation")) {
            const auto& p = j["perturbation"];
            if (p.contains("mode")) sc.perturbation.mode = p["mode"].get<std::string>();
            if (p.contains("radius")) sc.perturbation.radius = p["radius"].get<double>();
            if (p.contains("seed")) sc.perturbation.seed = p["seed"].get<std::uint64_t>();
            if (p.contains("per_node"))
                for (const auto& e : p["per_node"])
                    sc.perturbation.per_node.push_back({e.at("id").get<int>(),
                                                        e.value("dtheta", 0.0),
                                                        e.value("domega", 0.0),
                                                        e.value("dv", 0.0)});
        }
        if (j.contains("sim")) {
            const auto& s = j["sim"];
            if (s.contains("dt")) sc.sim.dt = s["dt"].get<double>();
            if (s.contains("T")) sc.sim.T = s["T"].get<double>();
            if (s.contains("controller")) sc.sim.controller = s["controller"].get<std::string>();
            if (s.contains("controller_in_stages"))
                sc.sim.controller_in_stages = s["controller_in_stages"].get<bool>();
        }
        if (j.contains("outputs")) sc.outputs = j["outputs"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed scenario: ") + e.what());
    }
    sc.validate();
    return sc;
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

struct LQRWeights {
    Eigen::MatrixXd Q_xx;  // C_out^T C_out
    Eigen::MatrixXd Q_uu;  // block-diagonal diag(q_u_omega, q_u_v)
};

inline LQRWeights build_lqr_weights(const NetworkGraph& graph, const WeightParams& w) {
    const SystemMatrices sm = build_isolated_matrices(graph, w);
    LQRWeights out;
    out.Q_xx = sm.C_out.transpose() * sm.C_out;
    out.Q_uu = Eigen::MatrixXd::Zero(2 * graph.size(), 2 * graph.size());
    for (int i = 0; i < graph.size(); ++i) {
        out.Q_uu(2 * i, 2 * i) = w.q_u_omega;
        out.Q_uu(2 * i + 1, 2 * i + 1) = w.q_u_v;
    }
    return out;
}

/// Everything the gains stage produces for one network.
struct GainStage {
    SystemMatrices matrices;
    LQRWeights weights;
    DistributedGains distributed;
    CentralizedGain centralized;
    Eigen::MatrixXd P_d;  // Lyapunov solution of the coupled distributed loop
    double beta_d = 0.0;
    double beta_c = 0.0;
    Eigen::VectorXcd spectrum_d;
    Eigen::VectorXcd spectrum_c;
    double exp_bound_kappa = 1.0;
};

/// Empirical conditioning factor of the exponential decay bound: the largest
/// sampled value of ||exp(A_cl t)||_2^2 e^{beta t}. Equals one only for normal
/// closed-loop matrices; reported alongside the bound.
inline double empirical_exp_bound_factor(const Eigen::MatrixXd& A_cl, double beta) {
    if (!(beta > 0.0)) return std::numeric_limits<double>::infinity();
    double kappa = 1.0;
    for (double t : {0.5 / beta, 1.0 / beta, 2.0 / beta, 4.0 / beta}) {
        const Eigen::MatrixXd E = (A_cl * t).exp();
        const double g = spectral_norm(E);
        kappa = std::max(kappa, g * g * std::exp(beta * t));
    }
    return kappa;
}

inline GainStage stage_gains(const NetworkGraph& graph, const SynchronousState& steady,
                             const WeightParams& w) {
    GainStage gs;
    gs.matrices = build_linearized(graph, steady, w);
    gs.weights = build_lqr_weights(graph, w);
    gs.distributed = distributed_gains(graph, w);
    const Eigen::MatrixXd A_cl_d = gs.matrices.A_tilde + gs.matrices.B * gs.distributed.F;
    gs.spectrum_d = spectrum(A_cl_d);
    gs.beta_d = -2.0 * gs.spectrum_d.real().maxCoeff();
    gs.centralized = centralized_gain(gs.matrices.A_tilde, gs.matrices.B, gs.weights.Q_xx,
                                      gs.weights.Q_uu, gs.distributed.F);
    const Eigen::MatrixXd A_cl_c = gs.matrices.A_tilde + gs.matrices.B * gs.centralized.F;
    gs.spectrum_c = spectrum(A_cl_c);
    gs.beta_c = -2.0 * gs.spectrum_c.real().maxCoeff();
    if (gs.beta_d > 0.0) {
        gs.P_d = solve_lyapunov(A_cl_d, gs.weights.Q_xx +
                                            gs.distributed.F.transpose() * gs.weights.Q_uu *
                                                gs.distributed.F);
        gs.exp_bound_kappa = empirical_exp_bound_factor(A_cl_d, gs.beta_d);
    }
    return gs;
}

inline json gains_to_json(const GainStage& gs) {
    json blocks = json::array();
    for (std::size_t i = 0; i < gs.distributed.blocks.size(); ++i)
        blocks.push_back({{"node", static_cast<int>(i)},
                          {"F", matrix_to_json(gs.distributed.blocks[i])},
                          {"care_residual", gs.distributed.solutions[i].residual_norm}});
    auto spec_json = [](const Eigen::VectorXcd& s) {
        json arr = json::array();
        for (int i = 0; i < s.size(); ++i) arr.push_back({s[i].real(), s[i].imag()});
        return arr;
    };
    return {{"f_d_blocks", blocks},
            {"f_c", matrix_to_json(gs.centralized.F)},
            {"q_tilde_residual", gs.centralized.solution.residual_norm},
            {"beta_d", gs.beta_d},
            {"beta_c", gs.beta_c},
            {"spectrum_d", spec_json(gs.spectrum_d)},
            {"spectrum_c", spec_json(gs.spectrum_c)},
            {"exp_bound_kappa", gs.exp_bound_kappa}};
}

/// Gains reloaded from a gains document: enough to drive a simulation
/// without re-running the synthesis.
struct LoadedGains {
    Eigen::MatrixXd F_d;  // assembled block-diagonal
    Eigen::MatrixXd F_c;
    double beta_d = 0.0;
    double beta_c = 0.0;
};

inline LoadedGains gains_from_json(const json& j, const StateLayout& lay) {
    LoadedGains lg;
    try {
        lg.F_c = matrix_from_json(j.at("f_c"));
        lg.beta_d = j.at("beta_d").get<double>();
        lg.beta_c = j.at("beta_c").get<double>();
        lg.F_d = Eigen::MatrixXd::Zero(2 * lay.node_count(), lay.dim());
        for (const auto& bj : j.at("f_d_blocks")) {
            const int i = bj.at("node").get<int>();
            const Eigen::MatrixXd Fi = matrix_from_json(bj.at("F"));
            const int off = lay.has_theta(i) ? lay.theta(i) : lay.omega(i);
            lg.F_d.block(2 * i, off, 2, Fi.cols()) = Fi;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed gains document: ") + e.what());
    }
    if (lg.F_c.rows() != 2 * lay.node_count() || lg.F_c.cols() != lay.dim())
        throw ConfigError("gains document does not match the graph dimensions");
    return lg;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Initial deviation vector for a scenario perturbation.
inline Eigen::VectorXd initial_deviation(const PerturbationSpec& pert, const StateLayout& lay) {
    pert.validate();
    if (pert.mode == "ball") {
        Rng rng(pert.seed);
        return rng.on_sphere(lay.dim(), pert.radius);
    }
    Eigen::VectorXd dev = Eigen::VectorXd::Zero(lay.dim());
    for (const auto& p : pert.per_node) {
        if (p.id < 0 || p.id >= lay.node_count())
            throw ConfigError("perturbation refers to unknown node " + std::to_string(p.id));
        if (p.dtheta != 0.0 && !lay.has_theta(p.id))
            throw ConfigError("reference node has no angle perturbation slot");
        if (lay.has_theta(p.id)) dev[lay.theta(p.id)] = p.dtheta;
        dev[lay.omega(p.id)] = p.domega;
        dev[lay.v(p.id)] = p.dv;
    }
    return dev;
}

struct VarianceMetrics {
    double freq_variance = 0.0;  // time-averaged across-node sample variance of omega
    double volt_variance = 0.0;  // same for the voltage deviation
};

inline VarianceMetrics trace_variance_metrics(const Trace& trace, const SynchronousState& steady) {
    const int n = static_cast<int>(steady.v_star.size());
    VarianceMetrics vm;
    if (trace.states.empty() || n < 2) return vm;
    for (const auto& x : trace.states) {
        double mo = 0.0, mv = 0.0;
        for (int i = 0; i < n; ++i) {
            mo += x[3 * i + 1];
            mv += x[3 * i + 2] - steady.v_star[i];
        }
        mo /= n;
        mv /= n;
        double so = 0.0, sv = 0.0;
        for (int i = 0; i < n; ++i) {
            const double eo = x[3 * i + 1] - mo;
            const double ev = x[3 * i + 2] - steady.v_star[i] - mv;
            so += eo * eo;
            sv += ev * ev;
        }
        vm.freq_variance += so / (n - 1);
        vm.volt_variance += sv / (n - 1);
    }
    vm.freq_variance /= static_cast<double>(trace.states.size());
    vm.volt_variance /= static_cast<double>(trace.states.size());
    return vm;
}

struct SimResult {
    Trace trace;
    double x0_norm = 0.0;
    double xT_norm = 0.0;  // re-referenced deviation norm at the final sample
    VarianceMetrics variances;
    bool lyapunov_nonincreasing = true;  // open loop only, 1e-10 per-step slack
};

/// Simulate the full nonlinear system from the given initial deviation under
/// the chosen controller. Feedback acts on the plain deviations (each node
/// sees only its own state); trajectory metrics use re-referenced deviations
/// so the neutral drift of the absolute angles does not pollute them.
inline SimResult simulate_scenario(const NetworkGraph& graph, const SynchronousState& steady,
                                   const Eigen::VectorXd& dev0, const SimSpec& sim,
                                   const Eigen::MatrixXd* F) {
    const GridDynamics dyn(graph);
    const StateLayout& lay = dyn.layout();
    const Eigen::VectorXd x0 = from_deviation(lay, dev0, steady);

    RhsFunction rhs = [&dyn](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        return dyn.rhs_combined(x, u);
    };
    ControllerFunction ctrl;
    if (F)
        ctrl = [&lay, &steady, F](double, const Eigen::VectorXd& x) -> Eigen::VectorXd {
            return (*F) * to_deviation(lay, x, steady);
        };

    IntegrateOptions opts;
    opts.dt = sim.dt;
    opts.T = sim.T;
    opts.controller_in_stages = sim.controller_in_stages;
    SimResult res;
    res.trace = integrate(rhs, x0, ctrl, opts);
    res.x0_norm = dev0.norm();
    res.xT_norm = to_deviation_rereferenced(lay, res.trace.states.back(), steady).norm();
    res.variances = trace_variance_metrics(res.trace, steady);
    res.trace.lyapunov.reserve(res.trace.states.size());
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& x : res.trace.states) {
        const double V = lyapunov_value(graph, steady, to_deviation_rereferenced(lay, x, steady));
        res.trace.lyapunov.push_back(V);
        if (!F && V > prev + 1e-10) res.lyapunov_nonincreasing = false;
        prev = V;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct SteadySummary {
    double residual_inf = 0.0;
    int iterations = 0;
    double max_angle_diff = 0.0;
};

struct CostSummary {
    double x0_norm = 0.0;
    double j_d_coupled = 0.0;
    double j_d_isolated_sum = 0.0;
    double j_c = 0.0;
    double gap = 0.0;
    double gap_bound = 0.0;
    bool holds = false;
};

struct SimSummary {
    std::string controller;
    double x0_norm = 0.0;
    double xT_norm = 0.0;
    double freq_variance = 0.0;
    double volt_variance = 0.0;
    bool lyapunov_nonincreasing = true;
    std::string trace_file;
};

struct GainSummary {
    double beta_d = 0.0;
    double beta_c = 0.0;
    double care_residual_blocks_max = 0.0;
    double care_residual_central = 0.0;
    double exp_bound_kappa = 1.0;
    std::vector<std::pair<double, double>> spectrum_d;
    std::vector<std::pair<double, double>> spectrum_c;
};

struct Report {
    std::map<std::string, std::string> stage_status;  // pass | fail | skipped
    std::string error_stage;
    std::string error_message;
    std::optional<ValidationReport> validation;
    std::optional<SteadySummary> steady;
    std::optional<StabilityCertificate> certificate;
    std::optional<GainSummary> gains;
    std::optional<CostSummary> costs;
    std::vector<SimSummary> sims;

    bool ok() const { return error_stage.empty(); }
};

inline json report_to_json(const Report& rep) {
    json j;
    j["stage_status"] = rep.stage_status;
    if (!rep.error_stage.empty())
        j["error"] = {{"stage", rep.error_stage}, {"message", rep.error_message}};
    if (rep.validation) j["validation"] = validation_to_json(*rep.validation);
    if (rep.steady)
        j["steady"] = {{"residual_inf", rep.steady->residual_inf},
                       {"iterations", rep.steady->iterations},
                       {"max_angle_diff", rep.steady->max_angle_diff}};
    if (rep.certificate) j["certificate"] = certificate_to_json(*rep.certificate);
    if (rep.gains) {
        json g = {{"beta_d", rep.gains->beta_d},
                  {"beta_c", rep.gains->beta_c},
                  {"care_residual_blocks_max", rep.gains->care_residual_blocks_max},
                  {"care_residual_central", rep.gains->care_residual_central},
                  {"exp_bound_kappa", rep.gains->exp_bound_kappa}};
        json sd = json::array(), sc2 = json::array();
        for (auto [re, im] : rep.gains->spectrum_d) sd.push_back({re, im});
        for (auto [re, im] : rep.gains->spectrum_c) sc2.push_back({re, im});
        g["spectrum_d"] = sd;
        g["spectrum_c"] = sc2;
        j["gains"] = g;
    }
    if (rep.costs)
        j["costs"] = {{"x0_norm", rep.costs->x0_norm},
                      {"j_d_coupled", rep.costs->j_d_coupled},
                      {"j_d_isolated_sum", rep.costs->j_d_isolated_sum},
                      {"j_c", rep.costs->j_c},
                      {"gap", rep.costs->gap},
                      {"gap_bound", rep.costs->gap_bound},
                      {"holds", rep.costs->holds}};
    json sims = json::array();
    for (const auto& s : rep.sims)
        sims.push_back({{"controller", s.controller},
                        {"x0_norm", s.x0_norm},
                        {"xT_norm", s.xT_norm},
                        {"freq_variance", s.freq_variance},
                        {"volt_variance", s.volt_variance},
                        {"lyapunov_nonincreasing", s.lyapunov_nonincreasing},
                        {"trace_file", s.trace_file}});
    j["sims"] = sims;
    return j;
}

inline Report report_from_json(const json& j) {
    Report rep;
    rep.stage_status = j.at("stage_status").get<std::map<std::string, std::string>>();
    if (j.contains("error")) {
        rep.error_stage = j["error"].at("stage").get<std::string>();
        rep.error_message = j["error"].at("message").get<std::string>();
    }
    if (j.contains("validation")) rep.validation = validation_from_json(j["validation"]);
    if (j.contains("steady")) {
        SteadySummary s;
        s.residual_inf = j["steady"].at("residual_inf").get<double>();
        s.iterations = j["steady"].at("iterations").get<int>();
        s.max_angle_diff = j["steady"].at("max_angle_diff").get<double>();
        rep.steady = s;
    }
    if (j.contains("certificate")) rep.certificate = certificate_from_json(j["certificate"]);
    if (j.contains("gains")) {
        GainSummary g;
        const auto& gj = j["gains"];
        g.beta_d = gj.at("beta_d").get<double>();
        g.beta_c = gj.at("beta_c").get<double>();
        g.care_residual_blocks_max = gj.at("care_residual_blocks_max").get<double>();
        g.care_residual_central = gj.at("care_residual_central").get<double>();
        g.exp_bound_kappa = gj.at("exp_bound_kappa").get<double>();
        for (const auto& e : gj.at("spectrum_d")) g.spectrum_d.emplace_back(e[0], e[1]);
        for (const auto& e : gj.at("spectrum_c")) g.spectrum_c.emplace_back(e[0], e[1]);
        rep.gains = g;
    }
    if (j.contains("costs")) {
        CostSummary c;
        const auto& cj = j["costs"];
        c.x0_norm = cj.at("x0_norm").get<double>();
        c.j_d_coupled = cj.at("j_d_coupled").get<double>();
        c.j_d_isolated_sum = cj.at("j_d_isolated_sum").get<double>();
        c.j_c = cj.at("j_c").get<double>();
        c.gap = cj.at("gap").get<double>();
        c.gap_bound = cj.at("gap_bound").get<double>();
        c.holds = cj.at("holds").get<bool>();
        rep.costs = c;
    }
    if (j.contains("sims"))
        for (const auto& sj : j["sims"]) {
            SimSummary s;
            s.controller = sj.at("controller").get<std::string>();
            s.x0_norm = sj.at("x0_norm").get<double>();
            s.xT_norm = sj.at("xT_norm").get<double>();
            s.freq_variance = sj.at("freq_variance").get<double>();
            s.volt_variance = sj.at("volt_variance").get<double>();
            s.lyapunov_nonincreasing = sj.at("lyapunov_nonincreasing").get<bool>();
            s.trace_file = sj.at("trace_file").get<std::string>();
        rep.sims.push_back(s);
        }
    return rep;
}

// ---------------------------------------------------------------------------
// Scenario runner
// ---------------------------------------------------------------------------

/// Cost summary for one initial deviation given the gains stage output.
inline CostSummary evaluate_scenario_costs(const GainStage& gs, const StateLayout& lay,
                                           const Eigen::VectorXd& dev0) {
    CostSummary cs;
    cs.x0_norm = dev0.norm();
    const PerformanceBound pb =
        performance_bound(gs.matrices.A_tilde, gs.matrices.B, gs.weights.Q_xx, gs.weights.Q_uu,
                          gs.distributed.F, gs.centralized.F, gs.centralized.Q_tilde, dev0);
    cs.j_d_coupled = pb.j_d;
    cs.j_c = pb.j_c;
    cs.gap = pb.gap;
    cs.gap_bound = pb.gap_bound;
    cs.holds = pb.holds;
    cs.j_d_isolated_sum = 0.0;
    for (int i = 0; i < lay.node_count(); ++i) {
        const int off = lay.has_theta(i) ? lay.theta(i) : lay.omega(i);
        const int dim = lay.has_theta(i) ? 3 : 2;
        const Eigen::VectorXd xi = dev0.segment(off, dim);
        cs.j_d_isolated_sum += xi.dot(gs.distributed.solutions[i].P * xi);
    }
    return cs;
}

/// Full pipeline: build -> validate -> steady -> certify -> gains ->
/// simulate -> costs in `out_dir`. Stage artifacts are written as they
/// complete; the report always lands in report.json, also on failure. The
/// raised error keeps the stage name.
inline Report run_scenario(const Scenario& scenario, const std::string& out_dir) {
    namespace fs = std::filesystem;
    scenario.validate();
    fs::create_directories(out_dir);
    Report rep;
    for (const char* st : {"build", "validate", "steady_state", "certify", "gains", "simulate",
                           "costs"})
        rep.stage_status[st] = "skipped";
    auto finish = [&](const std::string& stage, const Error& e) {
        rep.stage_status[stage] = "fail";
        rep.error_stage = stage;
        rep.error_message = e.what();
        save_json(out_dir + "/report.json", report_to_json(rep));
    };

    NetworkGraph graph;
    std::string stage = "build";
    try {
        graph = scenario.network_config ? build_multilevel(*scenario.network_config)
                                        : graph_from_json(load_json(scenario.graph_file));
        save_json(out_dir + "/graph.json", graph_to_json(graph));
        rep.stage_status[stage] = "pass";

        stage = "validate";
        rep.validation = validate_static(graph);
        save_json(out_dir + "/validation.json", validation_to_json(*rep.validation));
        rep.stage_status[stage] = rep.validation->all_pass ? "pass" : "fail";
        if (!rep.validation->all_pass)
            throw ConfigError("static validation failed; see validation.json");

        stage = "steady_state";
        const SynchronousState steady = solve_synchronous_state(graph);
        save_json(out_dir + "/steady.json", steady_to_json(steady));
        SteadySummary ss;
        ss.residual_inf = steady.residual_inf;
        ss.iterations = steady.iterations;
        for (const auto& ln : graph.lines)
            ss.max_angle_diff = std::max(
                ss.max_angle_diff, std::abs(steady.theta_star[ln.from] - steady.theta_star[ln.to]));
        rep.steady = ss;
        rep.stage_status[stage] = "pass";

        stage = "certify";
        rep.certificate = certify(graph, steady);
        save_json(out_dir + "/certificate.json", certificate_to_json(*rep.certificate));
        rep.stage_status[stage] = "pass";

        const StateLayout lay(graph.size(), graph.reference);
        std::optional<GainStage> gains;
        if (scenario.sim.controller != "open") {
            stage = "gains";
            gains = stage_gains(graph, steady, scenario.weights);
            save_json(out_dir + "/gains.json", gains_to_json(*gains));
            GainSummary g;
            g.beta_d = gains->beta_d;
            g.beta_c = gains->beta_c;
            for (const auto& s : gains->distributed.solutions)
                g.care_residual_blocks_max = std::max(g.care_residual_blocks_max, s.residual_norm);
            g.care_residual_central = gains->centralized.solution.residual_norm;
            g.exp_bound_kappa = gains->exp_bound_kappa;
            for (int i = 0; i < gains->spectrum_d.size(); ++i)
                g.spectrum_d.emplace_back(gains->spectrum_d[i].real(), gains->spectrum_d[i].imag());
            for (int i = 0; i < gains->spectrum_c.size(); ++i)
                g.spectrum_c.emplace_back(gains->spectrum_c[i].real(), gains->spectrum_c[i].imag());
            rep.gains = g;
            rep.stage_status[stage] = "pass";
        }

        stage = "simulate";
        const Eigen::VectorXd dev0 = initial_deviation(scenario.perturbation, lay);
        const Eigen::MatrixXd* F = nullptr;
        if (scenario.sim.controller == "distributed") F = &gains->distributed.F;
        if (scenario.sim.controller == "central") F = &gains->centralized.F;
        const SimResult sim = simulate_scenario(graph, steady, dev0, scenario.sim, F);
        const std::string trace_file = out_dir + "/trace_" + scenario.sim.controller + ".csv";
        write_trace_csv(trace_file, sim.trace, graph.size());
        SimSummary s;
        s.controller = scenario.sim.controller;
        s.x0_norm = sim.x0_norm;
        s.xT_norm = sim.xT_norm;
        s.freq_variance = sim.variances.freq_variance;
        s.volt_variance = sim.variances.volt_variance;
        s.lyapunov_nonincreasing = sim.lyapunov_nonincreasing;
        s.trace_file = trace_file;
        rep.sims.push_back(s);
        rep.stage_status[stage] = "pass";

        if (gains) {
            stage = "costs";
            rep.costs = evaluate_scenario_costs(*gains, lay, dev0);
            rep.stage_status[stage] = "pass";
        }
    } catch (Error& e) {
        if (e.stage().empty()) e.set_stage(stage);
        finish(stage, e);
        throw;
    }
    save_json(out_dir + "/report.json", report_to_json(rep));
    return rep;
}

// ---------------------------------------------------------------------------
// Batch runner
// ---------------------------------------------------------------------------

struct BatchRow {
    std::uint64_t seed = 0;
    double x0_norm = 0.0;
    double xT_norm = 0.0;
    double freq_variance = 0.0;
    double volt_variance = 0.0;
    std::optional<double> j_d;
    std::optional<double> j_c;
    bool failed = false;
    std::string error;
};

struct BatchResult {
    std::vector<BatchRow> rows;
    double mean_xT_norm = 0.0;
    double mean_freq_variance = 0.0;
    double mean_volt_variance = 0.0;
    std::optional<double> mean_j_d;
    std::optional<double> mean_j_c;
    int n_failed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Run the scenario across `n_seeds` initial perturbations derived from the
/// master seed. The network, synchronous state, and gains are computed once;
/// seeds are simulated in parallel up to `workers` threads. Results are
/// deterministic regardless of the worker count.
inline BatchResult run_batch(const Scenario& scenario, int n_seeds, int workers = 0) {
    scenario.validate();
    if (n_seeds < 1) throw ConfigError("batch needs at least one seed");
    const NetworkGraph graph = scenario.network_config
                                   ? build_multilevel(*scenario.network_config)
                                   : graph_from_json(load_json(scenario.graph_file));
    const ValidationReport val = validate_static(graph);
    if (!val.all_pass) throw ConfigError("static validation failed for the batch network");
    const SynchronousState steady = solve_synchronous_state(graph);
    const StateLayout lay(graph.size(), graph.reference);

    std::optional<GainStage> gains;
    const Eigen::MatrixXd* F = nullptr;
    if (scenario.sim.controller != "open") {
        gains = stage_gains(graph, steady, scenario.weights);
        F = scenario.sim.controller == "central" ? &gains->centralized.F : &gains->distributed.F;
        if (scenario.sim.controller == "distributed" && !(gains->beta_d > 0.0))
            throw StabilityError("distributed closed loop is not Hurwitz for this network");
    }

    BatchResult result;
    result.rows.resize(n_seeds);
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= n_seeds) return;
            BatchRow row;
            row.seed = detail::splitmix64(scenario.perturbation.seed +
                                          0x9e3779b97f4a7c15ULL * (idx + 1));
            try {
                PerturbationSpec pert = scenario.perturbation;
                pert.seed = row.seed;
                const Eigen::VectorXd dev0 = initial_deviation(pert, lay);
                const SimResult sim = simulate_scenario(graph, steady, dev0, scenario.sim, F);
                row.x0_norm = sim.x0_norm;
                row.xT_norm = sim.xT_norm;
                row.freq_variance = sim.variances.freq_variance;
                row.volt_variance = sim.variances.volt_variance;
                if (gains && gains->beta_d > 0.0) {
                    row.j_d = dev0.dot(gains->P_d * dev0);
                    row.j_c = dev0.dot(gains->centralized.Q_tilde * dev0);
                }
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            result.rows[idx] = std::move(row);
        }
    };
    int n_workers = workers > 0 ? workers
                                : static_cast<int>(std::thread::hardware_concurrency());
    n_workers = std::max(1, std::min(n_workers, n_seeds));
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();

    int n_ok = 0;
    double sj_d = 0.0, sj_c = 0.0;
    int nj = 0;
    for (const auto& row : result.rows) {
        if (row.failed) {
            ++result.n_failed;
            continue;
        }
        ++n_ok;
        result.mean_xT_norm += row.xT_norm;
        result.mean_freq_variance += row.freq_variance;
        result.mean_volt_variance += row.volt_variance;
        if (row.j_d) {
            sj_d += *row.j_d;
            sj_c += *row.j_c;
            ++nj;
        }
    }
    if (n_ok > 0) {
        result.mean_xT_norm /= n_ok;
        result.mean_freq_variance /= n_ok;
        result.mean_volt_variance /= n_ok;
    }
    if (nj > 0) {
        result.mean_j_d = sj_d / nj;
        result.mean_j_c = sj_c / nj;
    }
    return result;
}

inline json batch_to_json(const BatchResult& br) {
    json rows = json::array();
    for (const auto& r : br.rows) {
        json row = {{"seed", r.seed},
                    {"x0_norm", r.x0_norm},
                    {"xT_norm", r.xT_norm},
                    {"freq_variance", r.freq_variance},
                    {"volt_variance", r.volt_variance},
                    {"failed", r.failed}};
        if (r.j_d) row["j_d"] = *r.j_d;
        if (r.j_c) row["j_c"] = *r.j_c;
        if (!r.error.empty()) row["error"] = r.error;
        rows.push_back(row);
    }
    json agg = {{"mean_xT_norm", br.mean_xT_norm},
                {"mean_freq_variance", br.mean_freq_variance},
                {"mean_volt_variance", br.mean_volt_variance},
                {"n_failed", br.n_failed}};
    if (br.mean_j_d) agg["mean_j_d"] = *br.mean_j_d;
    if (br.mean_j_c) agg["mean_j_c"] = *br.mean_j_c;
    return {{"rows", rows}, {"aggregate", agg}};
}

}  // namespace gridlevels
