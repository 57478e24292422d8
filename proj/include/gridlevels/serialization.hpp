#pragma once

#include <fstream>
#include <json.hpp>
#include <string>

#include "gridlevels/control.hpp"
#include "gridlevels/network.hpp"
#include "gridlevels/stability.hpp"
#include "gridlevels/steady_state.hpp"

namespace gridlevels {

using nlohmann::json;

// Doubles are emitted by nlohmann/json in shortest round-trip form, so every
// serialization here is lossless for all numeric fields.

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

inline json graph_to_json(const NetworkGraph& graph) {
    json nodes = json::array();
    for (const auto& nd : graph.nodes)
        nodes.push_back({{"id", nd.id},
                         {"level", nd.level},
                         {"m", nd.m},
                         {"d", nd.d},
                         {"tau", nd.tau},
                         {"k", nd.k},
                         {"p_inj", nd.p_inj},
                         {"p_sol", nd.p_sol},
                         {"p_wind", nd.p_wind},
                         {"p_bm", nd.p_bm},
                         {"p_nuclear", nd.p_nuclear},
                         {"p_load", nd.p_load},
                         {"q_inj", nd.q_inj},
                         {"q_sol", nd.q_sol},
                         {"q_wind", nd.q_wind},
                         {"q_bm", nd.q_bm},
                         {"q_load", nd.q_load}});
    json lines = json::array();
    for (const auto& ln : graph.lines)
        lines.push_back({{"from", ln.from}, {"to", ln.to}, {"b", ln.b}, {"g", ln.g}});
    return {{"nodes", nodes}, {"lines", lines}, {"reference", graph.reference},
            {"seed", graph.seed}};
}

inline NetworkGraph graph_from_json(const json& j) {
    NetworkGraph graph;
    try {
        graph.reference = j.at("reference").get<int>();
        graph.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& nj : j.at("nodes")) {
            NodeParams nd;
            nd.id = nj.at("id").get<int>();
            nd.level = nj.at("level").get<int>();
            nd.m = nj.at("m").get<double>();
            nd.d = nj.at("d").get<double>();
            nd.tau = nj.at("tau").get<double>();
            nd.k = nj.at("k").get<double>();
            nd.p_inj = nj.at("p_inj").get<double>();
            nd.p_sol = nj.at("p_sol").get<double>();
            nd.p_wind = nj.at("p_wind").get<double>();
            nd.p_bm = nj.at("p_bm").get<double>();
            nd.p_nuclear = nj.at("p_nuclear").get<double>();
            nd.p_load = nj.at("p_load").get<double>();
            nd.q_inj = nj.at("q_inj").get<double>();
            nd.q_sol = nj.at("q_sol").get<double>();
            nd.q_wind = nj.at("q_wind").get<double>();
            nd.q_bm = nj.at("q_bm").get<double>();
            nd.q_load = nj.at("q_load").get<double>();
            graph.nodes.push_back(nd);
            graph.level_sets[nd.level].push_back(nd.id);
        }
        for (const auto& lj : j.at("lines"))
            graph.lines.push_back({lj.at("from").get<int>(), lj.at("to").get<int>(),
                                   lj.at("b").get<double>(), lj.at("g").get<double>()});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed graph document: ") + e.what());
    }
    validate_structure(graph);
    return graph;
}

// ---------------------------------------------------------------------------
// Multilevel config
// ---------------------------------------------------------------------------

inline json range_to_json(const ParamRange& r) { return json::array({r.lo, r.hi}); }

inline ParamRange range_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("range must be a two-element array");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline json level_ranges_to_json(const LevelRanges& lr) {
    return {{"m", range_to_json(lr.m)},
            {"d", range_to_json(lr.d)},
            {"tau", range_to_json(lr.tau)},
            {"k", range_to_json(lr.k)},
            {"b", range_to_json(lr.b)}};
}

inline LevelRanges level_ranges_from_json(const json& j, const LevelRanges& defaults) {
    LevelRanges lr = defaults;
    if (j.contains("m")) lr.m = range_from_json(j["m"]);
    if (j.contains("d")) lr.d = range_from_json(j["d"]);
    if (j.contains("tau")) lr.tau = range_from_json(j["tau"]);
    if (j.contains("k")) lr.k = range_from_json(j["k"]);
    if (j.contains("b")) lr.b = range_from_json(j["b"]);
    return lr;
}

inline json config_to_json(const MultilevelConfig& cfg) {
    return {{"counts", {{"level5", cfg.count_l5}, {"level4", cfg.count_l4}, {"level3", cfg.count_l3}}},
            {"level5", level_ranges_to_json(cfg.level5)},
            {"level4", level_ranges_to_json(cfg.level4)},
            {"level3", level_ranges_to_json(cfg.level3)},
            {"p_leaf", range_to_json(cfg.p_leaf)},
            {"q_jitter", range_to_json(cfg.q_jitter)},
            {"source_scale", cfg.source_scale},
            {"seed", cfg.seed}};
}

inline MultilevelConfig config_from_json(const json& j) {
    MultilevelConfig cfg;  // field defaults are the documented artifact defaults
    try {
        if (j.contains("counts")) {
            const auto& c = j["counts"];
            if (c.contains("level5")) cfg.count_l5 = c["level5"].get<int>();
            if (c.contains("level4")) cfg.count_l4 = c["level4"].get<int>();
            if (c.contains("level3")) cfg.count_l3 = c["level3"].get<int>();
        }
        if (j.contains("level5")) cfg.level5 = level_ranges_from_json(j["level5"], cfg.level5);
        if (j.contains("level4")) cfg.level4 = level_ranges_from_json(j["level4"], cfg.level4);
        if (j.contains("level3")) cfg.level3 = level_ranges_from_json(j["level3"], cfg.level3);
        if (j.contains("p_leaf")) cfg.p_leaf = range_from_json(j["p_leaf"]);
        if (j.contains("q_jitter")) cfg.q_jitter = range_from_json(j["q_jitter"]);
        if (j.contains("source_scale")) cfg.source_scale = j["source_scale"].get<double>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed network config: ") + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Validation report, synchronous state, certificate
// ---------------------------------------------------------------------------

inline json validation_to_json(const ValidationReport& rep) {
    json clauses = json::array();
    for (const auto& c : rep.clauses)
        clauses.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    return {{"clauses", clauses}, {"all_pass", rep.all_pass}};
}

inline ValidationReport validation_from_json(const json& j) {
    ValidationReport rep;
    rep.all_pass = j.at("all_pass").get<bool>();
    for (const auto& cj : j.at("clauses"))
        rep.clauses.push_back({cj.at("name").get<std::string>(), cj.at("pass").get<bool>(),
                               cj.at("detail").get<std::string>()});
    return rep;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = rows ? static_cast<int>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    return m;
}

inline json steady_to_json(const SynchronousState& st) {
    return {{"theta_star", vector_to_json(st.theta_star)},
            {"v_star", vector_to_json(st.v_star)},
            {"residual_inf", st.residual_inf},
            {"iterations", st.iterations}};
}

inline SynchronousState steady_from_json(const json& j) {
    SynchronousState st;
    st.theta_star = vector_from_json(j.at("theta_star"));
    st.v_star = vector_from_json(j.at("v_star"));
    st.residual_inf = j.at("residual_inf").get<double>();
    st.iterations = j.at("iterations").get<int>();
    return st;
}

inline json certificate_to_json(const StabilityCertificate& cert) {
    json j = {{"C1", cert.C1},
              {"C", cert.C},
              {"lambda_min_Vtt", cert.lambda_min_Vtt},
              {"lambda_min_Vvv", cert.lambda_min_Vvv},
              {"lambda_min_G", cert.lambda_min_G},
              {"lambda_max_G", cert.lambda_max_G},
              {"gershgorin_Vvv", cert.gershgorin_Vvv},
              {"lambda_min_hessian", cert.lambda_min_hessian},
              {"lambda_max_hessian", cert.lambda_max_hessian},
              {"max_angle_diff", cert.max_angle_diff},
              {"sufficient", cert.sufficient},
              {"direct", cert.direct}};
    json clauses = json::array();
    for (const auto& c : cert.clauses)
        clauses.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["clauses"] = clauses;
    if (cert.lipschitz) j["lipschitz_estimate"] = *cert.lipschitz;
    if (cert.region)
        j["region"] = {{"c1", cert.region->c1}, {"c2", cert.region->c2}, {"r", cert.region->r}};
    return j;
}

inline StabilityCertificate certificate_from_json(const json& j) {
    StabilityCertificate cert;
    cert.C1 = j.at("C1").get<double>();
    cert.C = j.at("C").get<double>();
    cert.lambda_min_Vtt = j.at("lambda_min_Vtt").get<double>();
    cert.lambda_min_Vvv = j.at("lambda_min_Vvv").get<double>();
    cert.lambda_min_G = j.at("lambda_min_G").get<double>();
    cert.lambda_max_G = j.at("lambda_max_G").get<double>();
    cert.gershgorin_Vvv = j.at("gershgorin_Vvv").get<double>();
    cert.lambda_min_hessian = j.at("lambda_min_hessian").get<double>();
    cert.lambda_max_hessian = j.at("lambda_max_hessian").get<double>();
    cert.max_angle_diff = j.at("max_angle_diff").get<double>();
    cert.sufficient = j.at("sufficient").get<bool>();
    cert.direct = j.at("direct").get<bool>();
    for (const auto& cj : j.at("clauses"))
        cert.clauses.push_back({cj.at("name").get<std::string>(), cj.at("pass").get<bool>(),
                                cj.at("detail").get<std::string>()});
    if (j.contains("lipschitz_estimate")) cert.lipschitz = j["lipschitz_estimate"].get<double>();
    if (j.contains("region")) {
        RegionConstants rc;
        rc.c1 = j["region"].at("c1").get<double>();
        rc.c2 = j["region"].at("c2").get<double>();
        rc.r = j["region"].at("r").get<double>();
        cert.region = rc;
    }
    return cert;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path + ": " + e.what());
    }
}

inline void save_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace gridlevels
