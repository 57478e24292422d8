#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>

#include "gridlevels/layout.hpp"
#include "gridlevels/network.hpp"
#include "gridlevels/rng.hpp"
#include "gridlevels/steady_state.hpp"

namespace gridlevels {

/// Second-derivative blocks of the energy function, evaluated at a given
/// operating point (usually the synchronous state).
///
///   V_tt  (n-1) x (n-1)  angle block, reference row/column removed
///   V_vv   n x n         voltage block, diagonal Q_i / v_i^2
///   V_tv  (n-1) x n      angle/voltage coupling
///   V_ww   n x n         diag(m_i)
struct HessianBlocks {
    Eigen::MatrixXd V_tt;
    Eigen::MatrixXd V_vv;
    Eigen::MatrixXd V_tv;
    Eigen::VectorXd m_diag;

    /// The symmetric block matrix [V_tt, V_tv; V_tv^T, V_vv].
    Eigen::MatrixXd G() const {
        const int nt = static_cast<int>(V_tt.rows());
        const int nv = static_cast<int>(V_vv.rows());
        Eigen::MatrixXd g(nt + nv, nt + nv);
        g.topLeftCorner(nt, nt) = V_tt;
        g.topRightCorner(nt, nv) = V_tv;
        g.bottomLeftCorner(nv, nt) = V_tv.transpose();
        g.bottomRightCorner(nv, nv) = V_vv;
        return g;
    }
};

/// Hessian blocks of the energy function at an arbitrary point (theta, v).
/// At the synchronous state these are the certificate blocks; off equilibrium
/// they feed the Lipschitz estimate.
inline HessianBlocks hessian_blocks_at(const NetworkGraph& graph, const Eigen::VectorXd& theta,
                                       const Eigen::VectorXd& v) {
    const int n = graph.size();
    if (theta.size() != n || v.size() != n)
        throw DimensionError("hessian_blocks_at: theta/v must have one entry per node");
    const StateLayout lay(n, graph.reference);
    HessianBlocks hb;
    hb.V_tt = Eigen::MatrixXd::Zero(n - 1, n - 1);
    hb.V_vv = Eigen::MatrixXd::Zero(n, n);
    hb.V_tv = Eigen::MatrixXd::Zero(n - 1, n);
    hb.m_diag.resize(n);
    for (int i = 0; i < n; ++i) {
        hb.m_diag[i] = graph.nodes[i].m;
        hb.V_vv(i, i) = graph.nodes[i].q_inj / (v[i] * v[i]);
    }
    for (const auto& ln : graph.lines) {
        for (const auto [i, j] : {std::pair{ln.from, ln.to}, std::pair{ln.to, ln.from}}) {
            const double c = std::cos(theta[i] - theta[j]);
            const double s = std::sin(theta[i] - theta[j]);
            hb.V_vv(i, j) = -ln.b * c;
            if (i != graph.reference) {
                const int ti = lay.theta_rank(i);
                hb.V_tt(ti, ti) += ln.b * v[i] * v[j] * c;
                if (j != graph.reference) hb.V_tt(ti, lay.theta_rank(j)) = -ln.b * v[i] * v[j] * c;
                hb.V_tv(ti, i) += ln.b * v[j] * s;
                hb.V_tv(ti, j) = ln.b * v[i] * s;
            }
        }
    }
    return hb;
}

/// Certificate blocks at the synchronous state.
inline HessianBlocks build_hessian_blocks(const NetworkGraph& graph,
                                          const SynchronousState& x_star) {
    return hessian_blocks_at(graph, x_star.theta_star, x_star.v_star);
}

/// Assemble the full Hessian in the reduced interleaved layout.
inline Eigen::MatrixXd assemble_hessian(const StateLayout& lay, const HessianBlocks& hb) {
    const int n = lay.node_count();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(lay.dim(), lay.dim());
    for (int i = 0; i < n; ++i) {
        H(lay.omega(i), lay.omega(i)) = hb.m_diag[i];
        for (int j = 0; j < n; ++j) H(lay.v(i), lay.v(j)) = hb.V_vv(i, j);
        if (lay.has_theta(i)) {
            const int ti = lay.theta_rank(i);
            for (int j = 0; j < n; ++j)
                if (lay.has_theta(j)) H(lay.theta(i), lay.theta(j)) = hb.V_tt(ti, lay.theta_rank(j));
            for (int j = 0; j < n; ++j) {
                H(lay.theta(i), lay.v(j)) = hb.V_tv(ti, j);
                H(lay.v(j), lay.theta(i)) = hb.V_tv(ti, j);
            }
        }
    }
    return H;
}

/// Permutation p such that grouped[p[i]] = interleaved[i], with the grouped
/// order [theta block; omega block; v block].
inline std::vector<int> grouped_permutation(const StateLayout& lay) {
    const int n = lay.node_count();
    std::vector<int> p(lay.dim());
    for (int i = 0; i < n; ++i) {
        if (lay.has_theta(i)) p[lay.theta(i)] = lay.theta_rank(i);
        p[lay.omega(i)] = (n - 1) + i;
        p[lay.v(i)] = (2 * n - 1) + i;
    }
    return p;
}

/// The Hessian in grouped block order [V_tt, 0, V_tv; 0, M, 0; V_tv^T, 0, V_vv].
inline Eigen::MatrixXd grouped_hessian(const HessianBlocks& hb) {
    const int nt = static_cast<int>(hb.V_tt.rows());
    const int n = static_cast<int>(hb.V_vv.rows());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nt + 2 * n, nt + 2 * n);
    H.topLeftCorner(nt, nt) = hb.V_tt;
    H.block(nt, nt, n, n) = hb.m_diag.asDiagonal();
    H.bottomRightCorner(n, n) = hb.V_vv;
    H.topRightCorner(nt, n) = hb.V_tv;
    H.bottomLeftCorner(n, nt) = hb.V_tv.transpose();
    return H;
}

// ---------------------------------------------------------------------------
// Lyapunov function, gradient, time derivative
// ---------------------------------------------------------------------------

/// Energy-function value at a deviation from the synchronous state.
///
/// Computed per node as a difference against the synchronous value, so that
/// small deviations do not cancel against the large absolute energy offset.
/// Each line's coupling term is counted once, at its child endpoint.
inline double lyapunov_value(const NetworkGraph& graph, const SynchronousState& x_star,
                             const Eigen::VectorXd& dev) {
    const int n = graph.size();
    const StateLayout lay(n, graph.reference);
    if (dev.size() != lay.dim()) throw DimensionError("lyapunov_value: deviation size mismatch");
    double val = 0.0;
    Eigen::VectorXd theta(n), v(n);
    for (int i = 0; i < n; ++i) {
        const auto& nd = graph.nodes[i];
        const double dth = lay.has_theta(i) ? dev[lay.theta(i)] : 0.0;
        const double om = dev[lay.omega(i)];
        const double dv = dev[lay.v(i)];
        theta[i] = x_star.theta_star[i] + dth;
        v[i] = x_star.v_star[i] + dv;
        if (!(v[i] > 0.0))
            throw DomainError("lyapunov_value: voltage at node " + std::to_string(i) +
                              " is not positive");
        val += 0.5 * nd.m * om * om + nd.k * dv - nd.q_inj * std::log1p(dv / x_star.v_star[i]) -
               nd.p_inj * dth;
    }
    for (const auto& ln : graph.lines) {
        const int i = ln.from, j = ln.to;
        val -= ln.b * (v[i] * v[j] * std::cos(theta[i] - theta[j]) -
                       x_star.v_star[i] * x_star.v_star[j] *
                           std::cos(x_star.theta_star[i] - x_star.theta_star[j]));
    }
    return val;
}

/// Analytic gradient of the energy function in the reduced layout.
inline Eigen::VectorXd lyapunov_gradient(const NetworkGraph& graph, const SynchronousState& x_star,
                                         const Eigen::VectorXd& dev) {
    const int n = graph.size();
    const StateLayout lay(n, graph.reference);
    if (dev.size() != lay.dim()) throw DimensionError("lyapunov_gradient: deviation size mismatch");
    Eigen::VectorXd theta(n), v(n);
    for (int i = 0; i < n; ++i) {
        theta[i] = x_star.theta_star[i] + (lay.has_theta(i) ? dev[lay.theta(i)] : 0.0);
        v[i] = x_star.v_star[i] + dev[lay.v(i)];
        if (!(v[i] > 0.0)) throw DomainError("lyapunov_gradient: nonpositive voltage");
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(lay.dim());
    for (int i = 0; i < n; ++i) {
        const auto& nd = graph.nodes[i];
        grad[lay.omega(i)] = nd.m * dev[lay.omega(i)];
        grad[lay.v(i)] = nd.k - nd.q_inj / v[i];
        if (lay.has_theta(i)) grad[lay.theta(i)] = -nd.p_inj;
    }
    for (const auto& ln : graph.lines) {
        for (const auto [i, j] : {std::pair{ln.from, ln.to}, std::pair{ln.to, ln.from}}) {
            const double s = std::sin(theta[i] - theta[j]);
            const double c = std::cos(theta[i] - theta[j]);
            if (lay.has_theta(i)) grad[lay.theta(i)] += ln.b * v[i] * v[j] * s;
            grad[lay.v(i)] -= ln.b * v[j] * c;
        }
    }
    return grad;
}

/// Closed form of the energy decay rate: -sum_i (d_i w_i^2 + tau_i/v_i vdot_i^2).
/// Takes the absolute interleaved state and its time derivative.
inline double lyapunov_derivative(const NetworkGraph& graph, const Eigen::VectorXd& x_full,
                                  const Eigen::VectorXd& xdot_full) {
    const int n = graph.size();
    if (x_full.size() != 3 * n || xdot_full.size() != 3 * n)
        throw DimensionError("lyapunov_derivative: full-state size mismatch");
    double val = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = x_full[3 * i + 2];
        if (!(v > 0.0)) throw DomainError("lyapunov_derivative: nonpositive voltage");
        const double om = x_full[3 * i + 1];
        const double vdot = xdot_full[3 * i + 2];
        val -= graph.nodes[i].d * om * om + graph.nodes[i].tau / v * vdot * vdot;
    }
    return val;
}

// ---------------------------------------------------------------------------
// Lipschitz estimate and the local stability region
// ---------------------------------------------------------------------------

struct LipschitzOptions {
    double radius = 0.2;
    int n_samples = 40;       // sampled pairs
    std::uint64_t seed = 1;
    double safety_factor = 1.5;
};

/// Sampled estimate of the Hessian Lipschitz constant on a ball around the
/// synchronous state: max ||H(x)-H(y)||_2 / ||x-y|| over random pairs, times
/// a safety factor. This is an estimate, not a bound; reports flag it as such.
inline double estimate_lipschitz(const NetworkGraph& graph, const SynchronousState& x_star,
                                 const LipschitzOptions& opts = {}) {
    if (!(opts.radius > 0.0)) throw RangeError("estimate_lipschitz: radius must be positive");
    const int n = graph.size();
    const StateLayout lay(n, graph.reference);
    Rng rng(opts.seed);
    // keep samples inside the voltage domain
    const double vmin = x_star.v_star.minCoeff();
    const double radius = std::min(opts.radius, 0.5 * vmin);
    auto hess_at_dev = [&](const Eigen::VectorXd& dev) {
        Eigen::VectorXd theta(n), v(n);
        for (int i = 0; i < n; ++i) {
            theta[i] = x_star.theta_star[i] + (lay.has_theta(i) ? dev[lay.theta(i)] : 0.0);
            v[i] = x_star.v_star[i] + dev[lay.v(i)];
        }
        return assemble_hessian(lay, hessian_blocks_at(graph, theta, v));
    };
    double worst = 0.0;
    for (int s = 0; s < opts.n_samples; ++s) {
        const Eigen::VectorXd x = rng.in_ball(lay.dim(), radius);
        const Eigen::VectorXd y = rng.in_ball(lay.dim(), radius);
        const double dist = (x - y).norm();
        if (dist < 1e-12) continue;
        const Eigen::MatrixXd diff = hess_at_dev(x) - hess_at_dev(y);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff, Eigen::EigenvaluesOnly);
        const double snorm =
            std::max(std::abs(es.eigenvalues().minCoeff()), std::abs(es.eigenvalues().maxCoeff()));
        worst = std::max(worst, snorm / dist);
    }
    return opts.safety_factor * worst;
}

/// Quadratic sandwich constants of the local stability region.
struct RegionConstants {
    double c1 = 0.0;
    double c2 = 0.0;
    double r = 0.0;

    /// delta(eps) = sqrt(c1/c2) * min(eps, r)
    double delta(double eps) const { return std::sqrt(c1 / c2) * std::min(eps, r); }
};

/// Constants of the quadratic bounds c1 ||x||^2 <= V(x) <= c2 ||x||^2 on the
/// r-ball. Requires 0 < r < 3 lambda_min / L, which guarantees c2 > c1 > 0.
inline RegionConstants region_constants(double lambda_min, double lambda_max, double L, double r) {
    if (!(r > 0.0) || !(r < 3.0 * lambda_min / L))
        throw RangeError("region_constants: need 0 < r < 3 lambda_min / L");
    RegionConstants rc;
    rc.c1 = 0.5 * lambda_min - L * r / 6.0;
    rc.c2 = 0.5 * lambda_max + L * r / 6.0;
    rc.r = r;
    return rc;
}

// ---------------------------------------------------------------------------
// Certificate
// ---------------------------------------------------------------------------

struct StabilityCertificate {
    double C1 = 0.0;
    double C = 0.0;
    double lambda_min_Vtt = 0.0;
    double lambda_min_Vvv = 0.0;
    double lambda_min_G = 0.0;
    double lambda_max_G = 0.0;
    double gershgorin_Vvv = 0.0;     // min_i (Q_i/v_i^2 - sum_j b_ij cos th_ij)
    double lambda_min_hessian = 0.0; // min over the full reduced Hessian
    double lambda_max_hessian = 0.0;
    double max_angle_diff = 0.0;     // max |theta_i - theta_j| over lines
    std::vector<ValidationClause> clauses;
    bool sufficient = false;   // every model assumption incl. C > C1 > 0
    bool direct = false;             // lambda_min of the full Hessian > 1e-10
    std::optional<double> lipschitz; // sampled estimate, when computed
    std::optional<RegionConstants> region;
};

/// Positive-definiteness floor for the strict inequalities.
inline constexpr double kPdThreshold = 1e-10;

/// Evaluate the certificate at a synchronous state: the stability constants,
/// eigenvalue minima, and the two verdict tiers. The "sufficient" tier
/// checks the sufficient conditions (lossless connected network, angle gaps
/// below pi/2, positive parameters, ordered inertia, C > C1 > 0); the
/// "direct" tier checks positive definiteness of the assembled Hessian by
/// eigendecomposition. Failures are clauses, never exceptions.
inline StabilityCertificate check_certificate(const HessianBlocks& blocks,
                                              const NetworkGraph& graph,
                                              const SynchronousState& x_star) {
    StabilityCertificate cert;
    auto add = [&cert](const std::string& name, bool pass, const std::string& detail = "") {
        cert.clauses.push_back({name, pass, detail});
        return pass;
    };

    bool ok = true;
    const ValidationReport static_rep = validate_static(graph);
    for (const auto& c : static_rep.clauses) {
        cert.clauses.push_back(c);
        ok = ok && c.pass;
    }
    {
        double worst = 0.0;
        for (const auto& ln : graph.lines)
            worst = std::max(worst, std::abs(x_star.theta_star[ln.from] - x_star.theta_star[ln.to]));
        cert.max_angle_diff = worst;
        ok = add("angle_gaps_below_pi_half", worst < M_PI / 2,
                 worst < M_PI / 2 ? "" : "max |theta_ij| = " + std::to_string(worst)) && ok;
    }
    ok = add("voltages_positive", (x_star.v_star.array() > 0.0).all()) && ok;

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_tt(blocks.V_tt, Eigen::EigenvaluesOnly);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_vv(blocks.V_vv, Eigen::EigenvaluesOnly);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_G(blocks.G(), Eigen::EigenvaluesOnly);
    cert.lambda_min_Vtt = blocks.V_tt.size() > 0 ? es_tt.eigenvalues().minCoeff() : 0.0;
    cert.lambda_min_Vvv = es_vv.eigenvalues().minCoeff();
    cert.lambda_min_G = es_G.eigenvalues().minCoeff();
    cert.lambda_max_G = es_G.eigenvalues().maxCoeff();

    // C1 = squared Frobenius norm of the assembled angle/voltage coupling
    cert.C1 = blocks.V_tv.squaredNorm();
    double gersh = 1e300;
    {
        const Adjacency adj = Adjacency::build(graph);
        for (int i = 0; i < graph.size(); ++i) {
            double row = graph.nodes[i].q_inj / (x_star.v_star[i] * x_star.v_star[i]);
            for (const auto& nb : adj.neighbors[i])
                row -= nb.b * std::cos(x_star.theta_star[i] - x_star.theta_star[nb.node]);
            gersh = std::min(gersh, row);
        }
    }
    cert.gershgorin_Vvv = gersh;
    cert.C = gersh * cert.lambda_min_Vtt;
    ok = add("stability_constants_C_gt_C1_gt_0", cert.C > cert.C1 && cert.C1 > 0.0,
             "C = " + std::to_string(cert.C) + ", C1 = " + std::to_string(cert.C1)) && ok;
    cert.sufficient = ok;

    const double m_min = blocks.m_diag.minCoeff();
    const double m_max = blocks.m_diag.maxCoeff();
    cert.lambda_min_hessian = std::min(m_min, cert.lambda_min_G);
    cert.lambda_max_hessian = std::max(m_max, cert.lambda_max_G);
    cert.direct = cert.lambda_min_hessian > kPdThreshold;
    add("direct_hessian_positive_definite", cert.direct,
        "lambda_min = " + std::to_string(cert.lambda_min_hessian));
    return cert;
}

/// Full certification pass: certificate constants plus the Lipschitz estimate
/// and the region constants with r = fraction * 3 lambda_min / L.
inline StabilityCertificate certify(const NetworkGraph& graph, const SynchronousState& x_star,
                                    const LipschitzOptions& lips = {},
                                    double radius_fraction = 0.5) {
    const HessianBlocks blocks = build_hessian_blocks(graph, x_star);
    StabilityCertificate cert = check_certificate(blocks, graph, x_star);
    if (!cert.direct) return cert;  // no positive-definite base point, no region
    const double L = estimate_lipschitz(graph, x_star, lips);
    cert.lipschitz = L;
    if (L > 0.0) {
        const double r = radius_fraction * 3.0 * cert.lambda_min_hessian / L;
        cert.region = region_constants(cert.lambda_min_hessian, cert.lambda_max_hessian, L, r);
    }
    return cert;
}

}  // namespace gridlevels
