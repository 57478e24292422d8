#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "gridlevels/layout.hpp"
#include "gridlevels/network.hpp"
#include "gridlevels/steady_state.hpp"

namespace gridlevels {

/// Right-hand-side evaluator for one network. Caches the line list and
/// per-node parameter arrays so repeated evaluations inside an integration
/// loop stay allocation-light.
class GridDynamics {
public:
    explicit GridDynamics(const NetworkGraph& graph)
        : n_(graph.size()), ref_(graph.reference), layout_(graph.size(), graph.reference) {
        m_.resize(n_); d_.resize(n_); tau_.resize(n_); k_.resize(n_);
        p_.resize(n_); q_.resize(n_);
        for (int i = 0; i < n_; ++i) {
            const auto& nd = graph.nodes[i];
            m_[i] = nd.m; d_[i] = nd.d; tau_[i] = nd.tau; k_[i] = nd.k;
            p_[i] = nd.p_inj; q_[i] = nd.q_inj;
        }
        lines_ = graph.lines;
    }

    int node_count() const { return n_; }
    const StateLayout& layout() const { return layout_; }

    /// Net flow sums per node: (sum_j P_ij, sum_j Q_ij) at the given state.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> flows(const Eigen::VectorXd& theta,
                                                      const Eigen::VectorXd& v) const {
        Eigen::VectorXd pf = Eigen::VectorXd::Zero(n_);
        Eigen::VectorXd qf = Eigen::VectorXd::Zero(n_);
        for (const auto& ln : lines_) {
            const int i = ln.from, j = ln.to;
            const double s = std::sin(theta[i] - theta[j]);
            const double c = std::cos(theta[i] - theta[j]);
            const double vv = v[i] * v[j];
            pf[i] += vv * (ln.g * c + ln.b * s);
            pf[j] += vv * (ln.g * c - ln.b * s);
            qf[i] += vv * (ln.g * s - ln.b * c);
            qf[j] += vv * (-ln.g * s - ln.b * c);
        }
        return {pf, qf};
    }

    /// Combined nonlinear dynamics on the absolute interleaved state.
    /// `u` is the stacked per-node input (u_omega, u_v); pass an empty vector
    /// for the open loop.
    Eigen::VectorXd rhs_combined(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
        check_state(x, u);
        Eigen::VectorXd theta(n_), v(n_);
        for (int i = 0; i < n_; ++i) {
            theta[i] = x[3 * i];
            v[i] = x[3 * i + 2];
            if (!(v[i] > 0.0))
                throw DomainError("rhs_combined: nonpositive voltage at node " + std::to_string(i));
        }
        auto [pf, qf] = flows(theta, v);
        Eigen::VectorXd dx(3 * n_);
        for (int i = 0; i < n_; ++i) {
            const double uo = u.size() ? u[2 * i] : 0.0;
            const double uv = u.size() ? u[2 * i + 1] : 0.0;
            const double om = x[3 * i + 1];
            dx[3 * i] = om;
            dx[3 * i + 1] = (-d_[i] * om + p_[i] - pf[i] + uo) / m_[i];
            dx[3 * i + 2] = (-k_[i] * v[i] + q_[i] - qf[i] + uv) / tau_[i];
        }
        return dx;
    }

    /// Isolated dynamics: flows frozen at the supplied per-node constants.
    Eigen::VectorXd rhs_isolated(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                 const Eigen::VectorXd& p_flow,
                                 const Eigen::VectorXd& q_flow) const {
        check_state(x, u);
        if (p_flow.size() != n_ || q_flow.size() != n_)
            throw DimensionError("rhs_isolated: flow vectors must have one entry per node");
        Eigen::VectorXd dx(3 * n_);
        for (int i = 0; i < n_; ++i) {
            const double uo = u.size() ? u[2 * i] : 0.0;
            const double uv = u.size() ? u[2 * i + 1] : 0.0;
            const double om = x[3 * i + 1];
            dx[3 * i] = om;
            dx[3 * i + 1] = (-d_[i] * om + p_[i] - p_flow[i] + uo) / m_[i];
            dx[3 * i + 2] = (-k_[i] * x[3 * i + 2] + q_[i] - q_flow[i] + uv) / tau_[i];
        }
        return dx;
    }

    /// Reduced nonlinear dynamics around a synchronous state: the reference
    /// angle is pinned at its synchronous value and its rate dropped. The
    /// Jacobian of this map at zero is exactly the linearized state matrix.
    Eigen::VectorXd reduced_rhs(const Eigen::VectorXd& dev, const Eigen::VectorXd& u,
                                const SynchronousState& x_star) const {
        const Eigen::VectorXd dx_full = rhs_combined(from_deviation(layout_, dev, x_star), u);
        Eigen::VectorXd dx(layout_.dim());
        for (int i = 0; i < n_; ++i) {
            if (layout_.has_theta(i)) dx[layout_.theta(i)] = dx_full[3 * i];
            dx[layout_.omega(i)] = dx_full[3 * i + 1];
            dx[layout_.v(i)] = dx_full[3 * i + 2];
        }
        return dx;
    }

private:
    void check_state(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
        if (x.size() != 3 * n_)
            throw DimensionError("state must be the absolute interleaved vector of size 3n");
        if (u.size() != 0 && u.size() != 2 * n_)
            throw DimensionError("input must be empty or of size 2n");
    }

    int n_;
    int ref_;
    StateLayout layout_;
    Eigen::VectorXd m_, d_, tau_, k_, p_, q_;
    std::vector<LineParams> lines_;
};

inline Eigen::VectorXd rhs_combined(const NetworkGraph& graph, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& u = {}) {
    return GridDynamics(graph).rhs_combined(x, u);
}

inline Eigen::VectorXd rhs_isolated(const NetworkGraph& graph, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& u, const Eigen::VectorXd& p_flow,
                                    const Eigen::VectorXd& q_flow) {
    return GridDynamics(graph).rhs_isolated(x, u, p_flow, q_flow);
}

// ---------------------------------------------------------------------------
// State-space matrices
// ---------------------------------------------------------------------------

/// Output gains defining C and the LQR state weight C^T C. The reference
/// node's angle slot does not exist after the reduction, so its output block
/// observes (omega, v) with gains (c_omega_ref, c_v); all other nodes use the
/// pattern diag(c_theta, 0, c_v).
struct WeightParams {
    double c_theta = 1.0;
    double c_v = 1.0;
    double c_omega_ref = 1.0;
    double q_u_omega = 1.0;
    double q_u_v = 1.0;

    void validate() const {
        if (!(c_theta > 0.0 && c_v > 0.0 && c_omega_ref > 0.0))
            throw ConfigError("output gains must be positive");
        if (!(q_u_omega > 0.0 && q_u_v > 0.0))
            throw ConfigError("input weights must be positive");
    }
};

struct SystemMatrices {
    Eigen::MatrixXd A;       // block-diagonal isolated dynamics
    Eigen::MatrixXd B;       // block-diagonal input map
    Eigen::MatrixXd C_out;   // diagonal output map
    Eigen::MatrixXd A_x;     // block-diagonal local coupling correction
    Eigen::MatrixXd A_hat;   // off-diagonal neighbor coupling
    Eigen::MatrixXd A_tilde; // A + A_x + A_hat

    /// A + s * (A_x + A_hat): coupling continuation used in tests/analyses.
    Eigen::MatrixXd coupled(double s) const { return A + s * (A_x + A_hat); }
};

/// Assemble the block-diagonal isolated matrices A, B and the output map.
inline SystemMatrices build_isolated_matrices(const NetworkGraph& graph,
                                              const WeightParams& w = {}) {
    w.validate();
    const int n = graph.size();
    const StateLayout lay(n, graph.reference);
    SystemMatrices sm;
    sm.A = Eigen::MatrixXd::Zero(lay.dim(), lay.dim());
    sm.B = Eigen::MatrixXd::Zero(lay.dim(), 2 * n);
    sm.C_out = Eigen::MatrixXd::Zero(lay.dim(), lay.dim());
    for (int i = 0; i < n; ++i) {
        const auto& nd = graph.nodes[i];
        if (lay.has_theta(i)) {
            sm.A(lay.theta(i), lay.omega(i)) = 1.0;
            sm.C_out(lay.theta(i), lay.theta(i)) = w.c_theta;
        } else {
            sm.C_out(lay.omega(i), lay.omega(i)) = w.c_omega_ref;
        }
        sm.A(lay.omega(i), lay.omega(i)) = -nd.d / nd.m;
        sm.A(lay.v(i), lay.v(i)) = -nd.k / nd.tau;
        sm.B(lay.omega(i), 2 * i) = 1.0 / nd.m;
        sm.B(lay.v(i), 2 * i + 1) = 1.0 / nd.tau;
        sm.C_out(lay.v(i), lay.v(i)) = w.c_v;
    }
    return sm;
}

/// Add the linearization blocks around a synchronous state: the local
/// coupling correction A_x, the neighbor coupling A_hat (zero for every
/// non-adjacent pair), and their sum A_tilde. Lossless lines only; the block
/// templates assume g = 0.
inline SystemMatrices build_linearized(const NetworkGraph& graph, const SynchronousState& x_star,
                                       const WeightParams& w = {}) {
    for (const auto& ln : graph.lines)
        if (ln.g != 0.0)
            throw ConfigError("build_linearized: block templates require lossless lines");
    SystemMatrices sm = build_isolated_matrices(graph, w);
    const int n = graph.size();
    const StateLayout lay(n, graph.reference);
    sm.A_x = Eigen::MatrixXd::Zero(lay.dim(), lay.dim());
    sm.A_hat = Eigen::MatrixXd::Zero(lay.dim(), lay.dim());
    const Eigen::VectorXd& th = x_star.theta_star;
    const Eigen::VectorXd& v = x_star.v_star;
    for (const auto& ln : graph.lines) {
        for (const auto [i, j] : {std::pair{ln.from, ln.to}, std::pair{ln.to, ln.from}}) {
            const double c = std::cos(th[i] - th[j]);
            const double s = std::sin(th[i] - th[j]);
            const double mi = graph.nodes[i].m, ti = graph.nodes[i].tau;
            if (lay.has_theta(i)) {
                sm.A_x(lay.omega(i), lay.theta(i)) += -ln.b * v[i] * v[j] * c / mi;
                sm.A_x(lay.v(i), lay.theta(i)) += -ln.b * v[i] * v[j] * s / ti;
            }
            sm.A_x(lay.omega(i), lay.v(i)) += -ln.b * v[j] * s / mi;
            sm.A_x(lay.v(i), lay.v(i)) += ln.b * v[j] * c / ti;
            if (lay.has_theta(j)) {
                sm.A_hat(lay.omega(i), lay.theta(j)) = ln.b * v[i] * v[j] * c / mi;
                sm.A_hat(lay.v(i), lay.theta(j)) = ln.b * v[i] * v[j] * s / ti;
            }
            sm.A_hat(lay.omega(i), lay.v(j)) = -ln.b * v[i] * s / mi;
            sm.A_hat(lay.v(i), lay.v(j)) = ln.b * v[i] * c / ti;
        }
    }
    sm.A_tilde = sm.A + sm.A_x + sm.A_hat;
    return sm;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// Sampled trajectory. `states` holds whatever vector the integrated system
/// evolves (absolute full states for grid simulations); `inputs` the control
/// vector per sample, empty when no controller ran.
struct Trace {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
    std::vector<Eigen::VectorXd> inputs;
    std::vector<double> lyapunov;  // optional, filled by analyses
};

using RhsFunction = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x,
                                                  const Eigen::VectorXd& u)>;
using ControllerFunction = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)>;

struct IntegrateOptions {
    double dt = 1e-3;
    double T = 20.0;
    /// true: controller re-evaluated inside every RK stage (continuous
    /// feedback); false: zero-order hold over each step.
    bool controller_in_stages = true;
};

/// Classical fixed-step fourth-order Runge-Kutta integration with the
/// trajectory sampled at every step. NaN/Inf in any computed state raises
/// NumericalError carrying the step index.
inline Trace integrate(const RhsFunction& rhs, const Eigen::VectorXd& x0,
                       const ControllerFunction& controller, const IntegrateOptions& opts) {
    if (!(opts.dt > 0.0)) throw RangeError("integrate: dt must be positive");
    if (!(opts.T >= opts.dt)) throw RangeError("integrate: T must be at least dt");
    const long steps = std::lround(opts.T / opts.dt);
    Trace trace;
    trace.times.reserve(steps + 1);
    trace.states.reserve(steps + 1);
    Eigen::VectorXd x = x0;
    const Eigen::VectorXd no_input;

    auto eval_u = [&](double t, const Eigen::VectorXd& xx) -> Eigen::VectorXd {
        return controller ? controller(t, xx) : no_input;
    };

    trace.times.push_back(0.0);
    trace.states.push_back(x);
    trace.inputs.push_back(eval_u(0.0, x));
    for (long step = 0; step < steps; ++step) {
        const double t = step * opts.dt;
        const double h = opts.dt;
        Eigen::VectorXd k1, k2, k3, k4;
        if (opts.controller_in_stages || !controller) {
            k1 = rhs(t, x, eval_u(t, x));
            const Eigen::VectorXd x2 = x + 0.5 * h * k1;
            k2 = rhs(t + 0.5 * h, x2, eval_u(t + 0.5 * h, x2));
            const Eigen::VectorXd x3 = x + 0.5 * h * k2;
            k3 = rhs(t + 0.5 * h, x3, eval_u(t + 0.5 * h, x3));
            const Eigen::VectorXd x4 = x + h * k3;
            k4 = rhs(t + h, x4, eval_u(t + h, x4));
        } else {
            const Eigen::VectorXd u = eval_u(t, x);  // zero-order hold
            k1 = rhs(t, x, u);
            k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1, u);
            k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2, u);
            k4 = rhs(t + h, x + h * k3, u);
        }
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!x.allFinite())
            throw NumericalError("integrate: non-finite state at step " + std::to_string(step + 1),
                                 step + 1);
        trace.times.push_back((step + 1) * opts.dt);
        trace.states.push_back(x);
        trace.inputs.push_back(eval_u((step + 1) * opts.dt, x));
    }
    return trace;
}

}  // namespace gridlevels
