#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <sstream>

#include "gridlevels/layout.hpp"
#include "gridlevels/log.hpp"
#include "gridlevels/network.hpp"

namespace gridlevels {

/// Equilibrium of the grid dynamics: all frequencies zero, constant angles
/// and voltages balancing the scheduled injections.
struct SynchronousState {
    Eigen::VectorXd theta_star;  // per-node angle (rad)
    Eigen::VectorXd v_star;      // per-node voltage (pu), > 0
    double residual_inf = 0.0;   // achieved infinity norm of the steady equations
    int iterations = 0;          // Newton corrections applied

    /// omega is identically zero at a synchronous state.
    Eigen::VectorXd omega_star() const { return Eigen::VectorXd::Zero(theta_star.size()); }

    /// Absolute interleaved state (theta_i, 0, v_i) of dimension 3n.
    Eigen::VectorXd full_state() const {
        const int n = static_cast<int>(theta_star.size());
        Eigen::VectorXd x(3 * n);
        for (int i = 0; i < n; ++i) {
            x[3 * i] = theta_star[i];
            x[3 * i + 1] = 0.0;
            x[3 * i + 2] = v_star[i];
        }
        return x;
    }
};

/// Residual of the steady equations. Layout: first the active balances
///   sum_j P_ij(theta, v) - P_i        for every node i != reference,
/// then the reactive balances
///   sum_j Q_ij(theta, v) - Q_i + k_i v_i   for every node i.
/// Flow formulas include the conductance terms; they vanish in the lossless
/// model. Size is 2n - 1.
inline Eigen::VectorXd steady_residual(const NetworkGraph& graph, const Eigen::VectorXd& theta,
                                       const Eigen::VectorXd& v) {
    const int n = graph.size();
    if (theta.size() != n || v.size() != n)
        throw DimensionError("steady_residual: theta/v must have one entry per node");
    Eigen::VectorXd active = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd reactive = Eigen::VectorXd::Zero(n);
    for (const auto& ln : graph.lines) {
        const int i = ln.from, j = ln.to;
        const double s = std::sin(theta[i] - theta[j]);
        const double c = std::cos(theta[i] - theta[j]);
        const double vv = v[i] * v[j];
        active[i] += vv * (ln.g * c + ln.b * s);
        active[j] += vv * (ln.g * c - ln.b * s);
        reactive[i] += vv * (ln.g * s - ln.b * c);
        reactive[j] += vv * (-ln.g * s - ln.b * c);
    }
    const int ref = graph.reference;
    Eigen::VectorXd r(2 * n - 1);
    int row = 0;
    for (int i = 0; i < n; ++i)
        if (i != ref) r[row++] = active[i] - graph.nodes[i].p_inj;
    for (int i = 0; i < n; ++i)
        r[row++] = reactive[i] - graph.nodes[i].q_inj + graph.nodes[i].k * v[i];
    return r;
}

namespace detail {

/// Analytic Jacobian of steady_residual with respect to the unknowns
/// [theta_i (i != ref); v_i (all i)].
inline Eigen::MatrixXd steady_jacobian(const NetworkGraph& graph, const Eigen::VectorXd& theta,
                                       const Eigen::VectorXd& v) {
    const int n = graph.size();
    const int ref = graph.reference;
    const StateLayout lay(n, ref);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n - 1, 2 * n - 1);
    auto arow = [&](int i) { return lay.theta_rank(i); };          // active row of i != ref
    auto rrow = [&](int i) { return (n - 1) + i; };                // reactive row of i
    auto tcol = [&](int i) { return lay.theta_rank(i); };          // theta column of i != ref
    auto vcol = [&](int i) { return (n - 1) + i; };                // v column of i
    for (const auto& ln : graph.lines) {
        for (const auto [i, j] : {std::pair{ln.from, ln.to}, std::pair{ln.to, ln.from}}) {
            const double s = std::sin(theta[i] - theta[j]);
            const double c = std::cos(theta[i] - theta[j]);
            // dP_ij, dQ_ij with P_ij = v_i v_j (g c + b s), Q_ij = v_i v_j (g s - b c)
            const double dP_dti = v[i] * v[j] * (-ln.g * s + ln.b * c);
            const double dP_dvi = v[j] * (ln.g * c + ln.b * s);
            const double dP_dvj = v[i] * (ln.g * c + ln.b * s);
            const double dQ_dti = v[i] * v[j] * (ln.g * c + ln.b * s);
            const double dQ_dvi = v[j] * (ln.g * s - ln.b * c);
            const double dQ_dvj = v[i] * (ln.g * s - ln.b * c);
            if (i != ref) {
                J(arow(i), tcol(i)) += dP_dti;
                if (j != ref) J(arow(i), tcol(j)) -= dP_dti;
                J(arow(i), vcol(i)) += dP_dvi;
                J(arow(i), vcol(j)) += dP_dvj;
            }
            if (i != ref) J(rrow(i), tcol(i)) += dQ_dti;
            if (j != ref) J(rrow(i), tcol(j)) -= dQ_dti;
            J(rrow(i), vcol(i)) += dQ_dvi;
            J(rrow(i), vcol(j)) += dQ_dvj;
        }
    }
    for (int i = 0; i < n; ++i) J(rrow(i), vcol(i)) += graph.nodes[i].k;
    return J;
}

}  // namespace detail

struct SteadySolveOptions {
    double tolerance = 1e-10;  // infinity norm of the residual
    int max_iterations = 50;
    int max_halvings = 10;  // damped fallback on residual increase
};

/// Solve the synchronous-state equations by damped Newton iteration with the
/// reference angle pinned at zero. Default start is the flat profile
/// (theta = 0, v = 1). The returned state satisfies |theta_i - theta_j| < pi/2
/// on every line and v > 0; violations raise AssumptionViolation.
inline SynchronousState solve_synchronous_state(
    const NetworkGraph& graph, std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> start = {},
    const SteadySolveOptions& opts = {}) {
    const int n = graph.size();
    const int ref = graph.reference;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    if (start) {
        if (start->first.size() != n || start->second.size() != n)
            throw DimensionError("initial guess must have one entry per node");
        theta = start->first;
        theta.array() -= theta[ref];  // pin the reference angle
        v = start->second;
    }
    if ((v.array() <= 0.0).any()) throw DomainError("initial voltages must be positive");

    Eigen::VectorXd r = steady_residual(graph, theta, v);
    double rnorm = r.lpNorm<Eigen::Infinity>();
    int it = 0;
    double prev_norm = -1.0;
    for (; it < opts.max_iterations; ++it) {
        if (rnorm < opts.tolerance) break;
        const Eigen::MatrixXd J = detail::steady_jacobian(graph, theta, v);
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
        const Eigen::VectorXd dx = lu.solve(-r);
        if (!dx.allFinite())
            throw ConvergenceError("Newton step is not finite (singular Jacobian)", rnorm);
        double step = 1.0;
        Eigen::VectorXd theta_n, v_n, r_n;
        double rn = rnorm;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            theta_n = theta;
            int col = 0;
            for (int i = 0; i < n; ++i)
                if (i != ref) theta_n[i] += step * dx[col++];
            v_n = v + step * dx.tail(n);
            if ((v_n.array() > 0.0).all()) {
                r_n = steady_residual(graph, theta_n, v_n);
                rn = r_n.lpNorm<Eigen::Infinity>();
                if (rn < rnorm || h == opts.max_halvings) break;
            }
            step *= 0.5;
        }
        // quadratic-convergence diagnostic, logged only
        if (prev_norm > 0.0 && rnorm > 0.0)
            log::debug("newton it=" + std::to_string(it) + " |r|=" + std::to_string(rnorm) +
                       " ratio/r^2=" + std::to_string(rn / (rnorm * rnorm)));
        prev_norm = rnorm;
        theta = theta_n;
        v = v_n;
        r = r_n;
        rnorm = rn;
    }
    if (rnorm >= opts.tolerance) {
        std::ostringstream os;
        os << "synchronous-state solve did not converge after " << it
           << " iterations (|r|_inf = " << rnorm << ")";
        throw ConvergenceError(os.str(), rnorm);
    }

    for (const auto& ln : graph.lines)
        if (!(std::abs(theta[ln.from] - theta[ln.to]) < M_PI / 2)) {
            std::ostringstream os;
            os << "synchronous angle difference |theta_" << ln.from << " - theta_" << ln.to
               << "| = " << std::abs(theta[ln.from] - theta[ln.to]) << " >= pi/2";
            throw AssumptionViolation(os.str());
        }
    for (int i = 0; i < n; ++i)
        if (!(v[i] > 0.0))
            throw AssumptionViolation("synchronous voltage at node " + std::to_string(i) +
                                      " is not positive");

    SynchronousState out;
    out.theta_star = theta;
    out.v_star = v;
    out.residual_inf = rnorm;
    out.iterations = it;
    return out;
}

// ---------------------------------------------------------------------------
// Deviation coordinates
// ---------------------------------------------------------------------------

/// Componentwise deviation of an absolute interleaved state from the
/// synchronous state, with the reference angle slot dropped.
inline Eigen::VectorXd to_deviation(const StateLayout& lay, const Eigen::VectorXd& x_abs,
                                    const SynchronousState& x_star) {
    const int n = lay.node_count();
    if (x_abs.size() != lay.full_dim() || x_star.theta_star.size() != n)
        throw DimensionError("to_deviation: dimension mismatch");
    Eigen::VectorXd d(lay.dim());
    for (int i = 0; i < n; ++i) {
        if (lay.has_theta(i)) d[lay.theta(i)] = x_abs[3 * i] - x_star.theta_star[i];
        d[lay.omega(i)] = x_abs[3 * i + 1];
        d[lay.v(i)] = x_abs[3 * i + 2] - x_star.v_star[i];
    }
    return d;
}

/// Exact inverse of to_deviation given the same synchronous state; the
/// reference angle is restored to its synchronous value.
inline Eigen::VectorXd from_deviation(const StateLayout& lay, const Eigen::VectorXd& dev,
                                      const SynchronousState& x_star) {
    const int n = lay.node_count();
    if (dev.size() != lay.dim() || x_star.theta_star.size() != n)
        throw DimensionError("from_deviation: dimension mismatch");
    Eigen::VectorXd x(lay.full_dim());
    for (int i = 0; i < n; ++i) {
        x[3 * i] = x_star.theta_star[i] + (lay.has_theta(i) ? dev[lay.theta(i)] : 0.0);
        x[3 * i + 1] = dev[lay.omega(i)];
        x[3 * i + 2] = x_star.v_star[i] + dev[lay.v(i)];
    }
    return x;
}

/// Deviation with the uniform angle mode removed: all angles are measured
/// relative to the reference node's current angle. Along trajectories of the
/// balanced open-loop system this quotients out the neutral drift of the
/// absolute angles, which is what the Lyapunov analysis tracks.
inline Eigen::VectorXd to_deviation_rereferenced(const StateLayout& lay,
                                                 const Eigen::VectorXd& x_abs,
                                                 const SynchronousState& x_star) {
    Eigen::VectorXd d = to_deviation(lay, x_abs, x_star);
    const double shift = x_abs[3 * lay.reference()] - x_star.theta_star[lay.reference()];
    for (int i = 0; i < lay.node_count(); ++i)
        if (lay.has_theta(i)) d[lay.theta(i)] -= shift;
    return d;
}

}  // namespace gridlevels
