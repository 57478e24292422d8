#pragma once

// Shared helpers for the test suites: small hand-built networks, finite
// difference oracles, and a matrix-exponential reference.

#include <tuple>
#include <unsupported/Eigen/MatrixFunctions>
#include <vector>

#include "gridlevels/gridlevels.hpp"

namespace gltest {

using namespace gridlevels;

/// Hand-built toy network. All nodes are Level 3 unless relabeled afterwards;
/// the injection breakdown is filled so the structural identities hold
/// bit-exactly.
inline NetworkGraph make_toy(int n, const std::vector<std::tuple<int, int, double>>& edges,
                             const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                             int reference = 0) {
    NetworkGraph g;
    g.reference = reference;
    g.seed = 0;
    for (int i = 0; i < n; ++i) {
        NodeParams nd;
        nd.id = i;
        nd.level = 3;
        nd.m = nd.d = nd.tau = nd.k = 1.0;
        if (p[i] >= 0.0) {
            nd.p_sol = p[i];
        } else {
            nd.p_load = -p[i];
        }
        nd.p_inj = ((nd.p_sol + nd.p_wind) + nd.p_bm + nd.p_nuclear) - nd.p_load;
        if (q[i] >= 0.0) {
            nd.q_sol = q[i];
        } else {
            nd.q_load = -q[i];
        }
        nd.q_inj = ((nd.q_sol + nd.q_wind) + nd.q_bm) - nd.q_load;
        g.nodes.push_back(nd);
        g.level_sets[3].push_back(i);
    }
    for (const auto& [from, to, b] : edges) g.lines.push_back({from, to, b, 0.0});
    return g;
}

/// Two-node toy: node 0 is the parent/reference, node 1 the child.
inline NetworkGraph two_node_toy(double b, double k, double p1, const Eigen::Vector2d& q) {
    Eigen::VectorXd p(2), qq(2);
    p << -p1, p1;
    qq = q;
    NetworkGraph g = make_toy(2, {{0, 1, b}}, p, qq);
    for (auto& nd : g.nodes) nd.k = k;
    return g;
}

/// Per-node parameter overrides applied after construction. The injection
/// breakdown stays valid because only dynamics parameters change.
inline void set_params(NetworkGraph& g, double m, double d, double tau, double k) {
    for (auto& nd : g.nodes) {
        nd.m = m;
        nd.d = d;
        nd.tau = tau;
        nd.k = k;
    }
}

/// Flat-profile injections: p = 0 and q_i = k_i - sum_j b_ij, which make
/// theta = 0, v = 1 an exact synchronous state.
inline void set_flat_profile(NetworkGraph& g) {
    const Adjacency adj = Adjacency::build(g);
    for (int i = 0; i < g.size(); ++i) {
        auto& nd = g.nodes[i];
        const double q = nd.k - sum_susceptance(adj, i);
        nd.p_sol = nd.p_wind = nd.p_bm = nd.p_nuclear = nd.p_load = 0.0;
        nd.p_inj = ((nd.p_sol + nd.p_wind) + nd.p_bm + nd.p_nuclear) - nd.p_load;
        nd.q_sol = nd.q_wind = nd.q_bm = nd.q_load = 0.0;
        if (q >= 0.0) {
            nd.q_sol = q;
        } else {
            nd.q_load = -q;
        }
        nd.q_inj = ((nd.q_sol + nd.q_wind) + nd.q_bm) - nd.q_load;
    }
}

/// Random toy tree with flat-profile-plus-jitter injections; stays within the
/// solvable, certifiable regime.
inline NetworkGraph random_toy_tree(std::uint64_t seed, int n_min = 3, int n_max = 12) {
    Rng rng(seed);
    const int n = n_min + static_cast<int>(rng.uniform01() * (n_max - n_min + 1));
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n), q = Eigen::VectorXd::Zero(n);
    NetworkGraph g = make_toy(n, {}, p, q);
    for (int i = 1; i < n; ++i) {
        const int parent = static_cast<int>(rng.uniform01() * i);
        g.lines.push_back({parent, i, rng.uniform(0.5, 1.5), 0.0});
    }
    const Adjacency adj0 = Adjacency::build(g);
    for (auto& nd : g.nodes) {
        nd.m = rng.uniform(0.5, 2.0);
        nd.d = rng.uniform(0.5, 2.0);
        nd.tau = rng.uniform(0.5, 2.0);
        // voltage damping above twice the incident susceptance keeps the toys
        // inside the certified regime regardless of the drawn degree
        nd.k = 2.5 * sum_susceptance(adj0, nd.id) + rng.uniform(1.0, 3.0);
    }
    set_flat_profile(g);
    // small balanced active injections and reactive jitter
    std::vector<double> pn(n, 0.0);
    for (int i = 1; i < n; ++i) pn[i] = rng.uniform(-0.01, 0.01);
    for (int i = 1; i < n; ++i) pn[0] -= pn[i];
    for (int i = 0; i < n; ++i) {
        auto& nd = g.nodes[i];
        nd.p_sol = nd.p_load = 0.0;
        if (pn[i] >= 0.0) {
            nd.p_sol = pn[i];
        } else {
            nd.p_load = -pn[i];
        }
        nd.p_inj = ((nd.p_sol + nd.p_wind) + nd.p_bm + nd.p_nuclear) - nd.p_load;
        const double jq = rng.uniform(-0.01, 0.01);
        nd.q_sol += (jq >= 0.0 ? jq : 0.0);
        nd.q_load += (jq < 0.0 ? -jq : 0.0);
        nd.q_inj = ((nd.q_sol + nd.q_wind) + nd.q_bm) - nd.q_load;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Finite-difference oracles
// ---------------------------------------------------------------------------

template <typename F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& x, double h = 1e-6) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd e = x;
    for (int i = 0; i < x.size(); ++i) {
        e[i] = x[i] + h;
        const double fp = f(e);
        e[i] = x[i] - h;
        const double fm = f(e);
        e[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

template <typename F>
Eigen::MatrixXd fd_jacobian(F&& f, const Eigen::VectorXd& x, double h = 1e-6) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    Eigen::VectorXd e = x;
    for (int j = 0; j < x.size(); ++j) {
        e[j] = x[j] + h;
        const Eigen::VectorXd fp = f(e);
        e[j] = x[j] - h;
        const Eigen::VectorXd fm = f(e);
        e[j] = x[j];
        J.col(j) = (fp - fm) / (2.0 * h);
    }
    return J;
}

/// Scaling-and-squaring matrix exponential (independent reference path).
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A) { return A.exp(); }

}  // namespace gltest
