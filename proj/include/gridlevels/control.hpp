#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "gridlevels/dynamics.hpp"
#include "gridlevels/errors.hpp"
#include "gridlevels/log.hpp"
#include "gridlevels/network.hpp"

namespace gridlevels {

// ---------------------------------------------------------------------------
// Dense Lyapunov equation (Bartels-Stewart)
// ---------------------------------------------------------------------------

namespace detail {

/// Boundaries of the 1x1/2x2 diagonal blocks of a real quasi-triangular
/// Schur factor.
inline std::vector<std::pair<int, int>> schur_blocks(const Eigen::MatrixXd& T) {
    std::vector<std::pair<int, int>> blocks;  // (start, size)
    const int n = static_cast<int>(T.rows());
    int p = 0;
    while (p < n) {
        if (p + 1 < n && T(p + 1, p) != 0.0) {
            blocks.emplace_back(p, 2);
            p += 2;
        } else {
            blocks.emplace_back(p, 1);
            p += 1;
        }
    }
    return blocks;
}

/// Solve the small Sylvester system T1^T Z + Z T2 = R (sizes at most 2x2)
/// by Kronecker vectorization.
inline Eigen::MatrixXd small_sylvester(const Eigen::MatrixXd& T1, const Eigen::MatrixXd& T2,
                                       const Eigen::MatrixXd& R) {
    const int p = static_cast<int>(T1.rows()), q = static_cast<int>(T2.rows());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(p * q, p * q);
    // vec(T1^T Z) = (I_q kron T1^T) vec(Z); vec(Z T2) = (T2^T kron I_p) vec(Z)
    for (int j = 0; j < q; ++j) M.block(j * p, j * p, p, p) += T1.transpose();
    for (int j = 0; j < q; ++j)
        for (int l = 0; l < q; ++l) M.block(j * p, l * p, p, p) += T2(l, j) * Eigen::MatrixXd::Identity(p, p);
    Eigen::Map<const Eigen::VectorXd> rvec(R.data(), p * q);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
    if (!lu.isInvertible())
        throw NumericalError("lyapunov solve: singular block (eigenvalue pair sums to zero)", 0);
    const Eigen::VectorXd zvec = lu.solve(rvec);
    return Eigen::Map<const Eigen::MatrixXd>(zvec.data(), p, q);
}

}  // namespace detail

/// Solve A^T X + X A + Q = 0 by the Bartels-Stewart algorithm: real Schur
/// reduction of A followed by block back-substitution. Solvable whenever no
/// two eigenvalues of A sum to zero (in particular for Hurwitz or anti-Hurwitz
/// A). The result is symmetrized when Q is symmetric.
inline Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n || Q.rows() != n || Q.cols() != n)
        throw DimensionError("solve_lyapunov: A and Q must be square of equal size");
    const Eigen::RealSchur<Eigen::MatrixXd> schur(A);
    if (schur.info() != Eigen::Success)
        throw NumericalError("solve_lyapunov: Schur decomposition failed", 0);
    const Eigen::MatrixXd& U = schur.matrixU();
    const Eigen::MatrixXd& T = schur.matrixT();
    const Eigen::MatrixXd Qh = U.transpose() * Q * U;

    const auto blocks = detail::schur_blocks(T);
    const int nb = static_cast<int>(blocks.size());
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, n);
    for (int l = 0; l < nb; ++l) {
        const auto [cl, sl] = blocks[l];
        for (int k = 0; k < nb; ++k) {
            const auto [rk, sk] = blocks[k];
            Eigen::MatrixXd R = -Qh.block(rk, cl, sk, sl);
            if (rk > 0) R -= T.block(0, rk, rk, sk).transpose() * Y.block(0, cl, rk, sl);
            if (cl > 0) R -= Y.block(rk, 0, sk, cl) * T.block(0, cl, cl, sl);
            Y.block(rk, cl, sk, sl) =
                detail::small_sylvester(T.block(rk, rk, sk, sk), T.block(cl, cl, sl, sl), R);
        }
    }
    Eigen::MatrixXd X = U * Y * U.transpose();
    if (Q.isApprox(Q.transpose(), 1e-12)) X = 0.5 * (X + X.transpose());
    return X;
}

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

inline Eigen::VectorXcd spectrum(const Eigen::MatrixXd& A) {
    const Eigen::EigenSolver<Eigen::MatrixXd> es(A, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) throw NumericalError("eigenvalue computation failed", 0);
    return es.eigenvalues();
}

inline double max_real_part(const Eigen::MatrixXd& A) {
    return spectrum(A).real().maxCoeff();
}

inline bool is_hurwitz(const Eigen::MatrixXd& A) { return max_real_part(A) < 0.0; }

/// Decay margin beta = -2 max_i Re lambda_i(A_cl); positive iff Hurwitz.
inline double decay_margin(const Eigen::MatrixXd& A_cl) { return -2.0 * max_real_part(A_cl); }

/// Largest singular value, via SVD.
inline double spectral_norm(const Eigen::MatrixXd& M) {
    if (M.size() == 0) return 0.0;
    return Eigen::BDCSVD<Eigen::MatrixXd>(M).singularValues()(0);
}

// ---------------------------------------------------------------------------
// PBH rank tests
// ---------------------------------------------------------------------------

namespace detail {

inline int rank_with_threshold(const Eigen::MatrixXcd& M) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    const double tol = std::max(M.rows(), M.cols()) * 1e-15 * sv(0);
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++r;
    return r;
}

}  // namespace detail

struct PbhVerdict {
    int block_id = -1;
    bool ok = true;
    std::complex<double> failing_eigenvalue{0.0, 0.0};
};

/// PBH controllability test of one block: rank [A - lambda I, B] must be full
/// row rank at every eigenvalue of A.
inline PbhVerdict pbh_controllable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   int block_id = -1) {
    const int n = static_cast<int>(A.rows());
    PbhVerdict v;
    v.block_id = block_id;
    Eigen::MatrixXcd M(n, n + B.cols());
    for (const auto lam : spectrum(A)) {
        M.leftCols(n) = A.cast<std::complex<double>>() -
                        lam * Eigen::MatrixXcd::Identity(n, n);
        M.rightCols(B.cols()) = B.cast<std::complex<double>>();
        if (detail::rank_with_threshold(M) < n) {
            v.ok = false;
            v.failing_eigenvalue = lam;
            return v;
        }
    }
    return v;
}

/// PBH observability test of one block: rank [A - lambda I; C] must be full
/// column rank at every eigenvalue of A.
inline PbhVerdict pbh_observable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C,
                                 int block_id = -1) {
    const int n = static_cast<int>(A.rows());
    PbhVerdict v;
    v.block_id = block_id;
    Eigen::MatrixXcd M(n + C.rows(), n);
    for (const auto lam : spectrum(A)) {
        M.topRows(n) = A.cast<std::complex<double>>() -
                       lam * Eigen::MatrixXcd::Identity(n, n);
        M.bottomRows(C.rows()) = C.cast<std::complex<double>>();
        if (detail::rank_with_threshold(M) < n) {
            v.ok = false;
            v.failing_eigenvalue = lam;
            return v;
        }
    }
    return v;
}

/// Stabilizability: PBH only at eigenvalues with nonnegative real part.
inline bool is_stabilizable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    const int n = static_cast<int>(A.rows());
    Eigen::MatrixXcd M(n, n + B.cols());
    for (const auto lam : spectrum(A)) {
        if (lam.real() < -1e-9) continue;
        M.leftCols(n) = A.cast<std::complex<double>>() - lam * Eigen::MatrixXcd::Identity(n, n);
        M.rightCols(B.cols()) = B.cast<std::complex<double>>();
        if (detail::rank_with_threshold(M) < n) return false;
    }
    return true;
}

/// Detectability of (A, C): dual PBH at eigenvalues with nonnegative real part.
inline bool is_detectable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C) {
    const int n = static_cast<int>(A.rows());
    Eigen::MatrixXcd M(n + C.rows(), n);
    for (const auto lam : spectrum(A)) {
        if (lam.real() < -1e-9) continue;
        M.topRows(n) = A.cast<std::complex<double>>() - lam * Eigen::MatrixXcd::Identity(n, n);
        M.bottomRows(C.rows()) = C.cast<std::complex<double>>();
        if (detail::rank_with_threshold(M) < n) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Per-node state-space blocks
// ---------------------------------------------------------------------------

struct NodeBlock {
    int node = 0;
    Eigen::MatrixXd A;     // 3x3, or 2x2 at the reference
    Eigen::MatrixXd B;     // 3x2 / 2x2
    Eigen::MatrixXd C;     // diagonal output block
    Eigen::MatrixXd Q_xx;  // C^T C
    Eigen::MatrixXd Q_uu;  // diag(q_u_omega, q_u_v)
};

inline NodeBlock node_block(const NetworkGraph& graph, int i, const WeightParams& w = {}) {
    w.validate();
    const auto& nd = graph.nodes[i];
    NodeBlock blk;
    blk.node = i;
    if (i == graph.reference) {
        blk.A = Eigen::MatrixXd::Zero(2, 2);
        blk.A(0, 0) = -nd.d / nd.m;
        blk.A(1, 1) = -nd.k / nd.tau;
        blk.B = Eigen::MatrixXd::Zero(2, 2);
        blk.B(0, 0) = 1.0 / nd.m;
        blk.B(1, 1) = 1.0 / nd.tau;
        blk.C = Eigen::Vector2d(w.c_omega_ref, w.c_v).asDiagonal();
    } else {
        blk.A = Eigen::MatrixXd::Zero(3, 3);
        blk.A(0, 1) = 1.0;
        blk.A(1, 1) = -nd.d / nd.m;
        blk.A(2, 2) = -nd.k / nd.tau;
        blk.B = Eigen::MatrixXd::Zero(3, 2);
        blk.B(1, 0) = 1.0 / nd.m;
        blk.B(2, 1) = 1.0 / nd.tau;
        blk.C = Eigen::Vector3d(w.c_theta, 0.0, w.c_v).asDiagonal();
    }
    blk.Q_xx = blk.C.transpose() * blk.C;
    blk.Q_uu = Eigen::Vector2d(w.q_u_omega, w.q_u_v).asDiagonal();
    return blk;
}

struct BlockVerdicts {
    std::vector<PbhVerdict> verdicts;
    bool all_ok = true;
};

/// PBH controllability of every per-node block (A_i, B_i).
inline BlockVerdicts check_controllability(const NetworkGraph& graph, const WeightParams& w = {}) {
    BlockVerdicts out;
    for (int i = 0; i < graph.size(); ++i) {
        const NodeBlock blk = node_block(graph, i, w);
        out.verdicts.push_back(pbh_controllable(blk.A, blk.B, i));
        out.all_ok = out.all_ok && out.verdicts.back().ok;
    }
    return out;
}

/// PBH observability of every per-node block (A_i, C_i).
inline BlockVerdicts check_observability(const NetworkGraph& graph, const WeightParams& w = {}) {
    BlockVerdicts out;
    for (int i = 0; i < graph.size(); ++i) {
        const NodeBlock blk = node_block(graph, i, w);
        out.verdicts.push_back(pbh_observable(blk.A, blk.C, i));
        out.all_ok = out.all_ok && out.verdicts.back().ok;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Continuous algebraic Riccati equation (Newton-Kleinman)
// ---------------------------------------------------------------------------

struct RiccatiSolution {
    Eigen::MatrixXd P;
    double residual_norm = 0.0;  // Frobenius norm of the CARE residual
    bool stabilizing = false;    // closed-loop spectrum strictly left of the axis
    int iterations = 0;
};

struct CareOptions {
    double tol_factor = 1e-10;  // converge when ||R(P)||_F <= tol_factor * (1 + ||P||_F)
    int max_iterations = 100;
    bool check_structure = true;
    std::optional<Eigen::MatrixXd> initial_gain;  // must stabilize A + B F0
};

inline Eigen::MatrixXd care_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     const Eigen::MatrixXd& Q_xx, const Eigen::MatrixXd& Q_uu,
                                     const Eigen::MatrixXd& P) {
    const Eigen::MatrixXd BtP = B.transpose() * P;
    return A.transpose() * P + P * A + Q_xx - BtP.transpose() * Q_uu.llt().solve(BtP);
}

/// Stabilizing state feedback from a Lyapunov-based construction: with
/// beta above the spectral abscissa, solve (A + beta I) Z + Z (A + beta I)^T
/// = 2 B B^T and take F = -B^T Z^{-1}. Requires (A, B) controllable.
inline Eigen::MatrixXd bass_stabilizing_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    const int n = static_cast<int>(A.rows());
    const double beta = 1.05 * A.norm() + 0.1;
    const Eigen::MatrixXd M = A + beta * Eigen::MatrixXd::Identity(n, n);
    // M Z + Z M^T = 2 B B^T  <=>  (M^T)^T Z + Z M^T + (-2 B B^T) = 0
    const Eigen::MatrixXd Z =
        solve_lyapunov(M.transpose(), -2.0 * B * B.transpose());
    const Eigen::LLT<Eigen::MatrixXd> llt(Z);
    if (llt.info() != Eigen::Success)
        throw StructureError("stabilizing-gain construction failed; (A, B) not controllable");
    return -llt.solve(B).transpose();
}

namespace detail {

inline Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& Q) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Q + Q.transpose()));
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

}  // namespace detail

/// Solve 0 = A^T P + P A + Q_xx - P B Q_uu^{-1} B^T P for the unique
/// stabilizing symmetric PSD solution by Newton-Kleinman iteration: each step
/// solves a dense Lyapunov equation for the current stabilizing gain and
/// updates the gain from the new solution. The seed gain comes from the
/// options, from A itself when already Hurwitz, or from the Lyapunov-based
/// stabilization above.
inline RiccatiSolution solve_care(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                  const Eigen::MatrixXd& Q_xx, const Eigen::MatrixXd& Q_uu,
                                  const CareOptions& opts = {}) {
    const int n = static_cast<int>(A.rows());
    const int m = static_cast<int>(B.cols());
    if (A.cols() != n || B.rows() != n || Q_xx.rows() != n || Q_xx.cols() != n ||
        Q_uu.rows() != m || Q_uu.cols() != m)
        throw DimensionError("solve_care: inconsistent matrix dimensions");
    const Eigen::LLT<Eigen::MatrixXd> R_llt(Q_uu);
    if (R_llt.info() != Eigen::Success)
        throw ConfigError("solve_care: Q_uu must be symmetric positive definite");
    if (opts.check_structure) {
        if (!is_stabilizable(A, B))
            throw StructureError("solve_care: (A, B) is not stabilizable");
        if (!is_detectable(A, detail::symmetric_sqrt(Q_xx)))
            throw StructureError("solve_care: (A, Q_xx^{1/2}) is not detectable");
    }

    Eigen::MatrixXd F;
    if (opts.initial_gain) {
        F = *opts.initial_gain;
        if (F.rows() != m || F.cols() != n)
            throw DimensionError("solve_care: initial gain has wrong shape");
    } else if (is_hurwitz(A)) {
        F = Eigen::MatrixXd::Zero(m, n);
    } else {
        F = bass_stabilizing_gain(A, B);
    }
    if (!is_hurwitz(A + B * F))
        throw StructureError("solve_care: seed gain does not stabilize the system");

    RiccatiSolution sol;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const Eigen::MatrixXd A_cl = A + B * F;
        const Eigen::MatrixXd P =
            solve_lyapunov(A_cl, Q_xx + F.transpose() * Q_uu * F);
        F = -R_llt.solve(B.transpose() * P);
        sol.P = P;
        sol.iterations = it;
        sol.residual_norm = care_residual(A, B, Q_xx, Q_uu, P).norm();
        if (sol.residual_norm <= opts.tol_factor * (1.0 + P.norm())) break;
        if (it == opts.max_iterations)
            throw IterationError("solve_care: no convergence after " +
                                 std::to_string(opts.max_iterations) + " Newton steps (residual " +
                                 std::to_string(sol.residual_norm) + ")");
    }
    sol.P = 0.5 * (sol.P + sol.P.transpose());
    sol.stabilizing = is_hurwitz(A + B * (-R_llt.solve(B.transpose() * sol.P)));
    return sol;
}

// ---------------------------------------------------------------------------
// Gain synthesis
// ---------------------------------------------------------------------------

struct DistributedGains {
    std::vector<Eigen::MatrixXd> blocks;         // per-node gain F_i
    std::vector<RiccatiSolution> solutions;      // per-node CARE solutions
    Eigen::MatrixXd F;                           // assembled 2n x (3n-1), block-diagonal
};

/// Per-node LQR synthesis on the isolated blocks; the assembled gain is
/// block-diagonal (each node fed back from its own state only).
inline DistributedGains distributed_gains(const NetworkGraph& graph, const WeightParams& w = {}) {
    const int n = graph.size();
    const StateLayout lay(n, graph.reference);
    DistributedGains out;
    out.F = Eigen::MatrixXd::Zero(2 * n, lay.dim());
    for (int i = 0; i < n; ++i) {
        const NodeBlock blk = node_block(graph, i, w);
        CareOptions opts;
        if (i != graph.reference) {
            // lift the angle integrator; the remaining modes are already damped
            Eigen::MatrixXd F0 = Eigen::MatrixXd::Zero(2, 3);
            F0(0, 0) = -graph.nodes[i].m;
            F0(0, 1) = -graph.nodes[i].m;
            opts.initial_gain = F0;
        }
        RiccatiSolution rs;
        try {
            rs = solve_care(blk.A, blk.B, blk.Q_xx, blk.Q_uu, opts);
        } catch (Error& e) {
            e.set_stage("distributed_gains node " + std::to_string(i));
            throw;
        }
        Eigen::MatrixXd Fi = -blk.Q_uu.llt().solve(blk.B.transpose() * rs.P);
        const int off = lay.has_theta(i) ? lay.theta(i) : lay.omega(i);
        out.F.block(2 * i, off, 2, Fi.cols()) = Fi;
        out.blocks.push_back(std::move(Fi));
        out.solutions.push_back(std::move(rs));
    }
    return out;
}

struct CentralizedGain {
    Eigen::MatrixXd F;        // dense 2n x (3n-1)
    Eigen::MatrixXd Q_tilde;  // stabilizing CARE solution; J* = x0^T Q_tilde x0
    RiccatiSolution solution;
};

/// Full-size LQR on the linearized system. When a block-diagonal distributed
/// gain is supplied and stabilizes A_tilde it seeds the Newton iteration.
inline CentralizedGain centralized_gain(const Eigen::MatrixXd& A_tilde, const Eigen::MatrixXd& B,
                                        const Eigen::MatrixXd& Q_xx, const Eigen::MatrixXd& Q_uu,
                                        std::optional<Eigen::MatrixXd> seed_gain = {}) {
    CareOptions opts;
    if (seed_gain && is_hurwitz(A_tilde + B * *seed_gain)) opts.initial_gain = *seed_gain;
    CentralizedGain out;
    out.solution = solve_care(A_tilde, B, Q_xx, Q_uu, opts);
    out.Q_tilde = out.solution.P;
    out.F = -Q_uu.llt().solve(B.transpose() * out.Q_tilde);
    return out;
}

// ---------------------------------------------------------------------------
// Quadratic costs and the distributed-vs-centralized bound
// ---------------------------------------------------------------------------

/// Infinite-horizon quadratic cost of the stable linear system
/// xdot = A_cl x from x0 with running weight Q_eff: solves the Lyapunov
/// equation A_cl^T P + P A_cl + Q_eff = 0 and returns x0^T P x0.
inline double evaluate_cost(const Eigen::MatrixXd& A_cl, const Eigen::MatrixXd& Q_eff,
                            const Eigen::VectorXd& x0) {
    if (!is_hurwitz(A_cl))
        throw StabilityError("evaluate_cost: closed-loop matrix is not Hurwitz");
    const Eigen::MatrixXd P = solve_lyapunov(A_cl, Q_eff);
    return x0.dot(P * x0);
}

struct PerformanceBound {
    double beta = 0.0;       // decay margin of the distributed closed loop
    double j_d = 0.0;        // distributed cost on the coupled system
    double j_c = 0.0;        // centralized optimal cost
    double gap = 0.0;        // j_d - j_c
    double gap_bound = 0.0;  // ||(F_d-F_c)^T Q_uu (F_d-F_c)||_2 / beta * ||x0||^2
    bool holds = false;      // 0 <= gap <= gap_bound within absolute slack
};

inline constexpr double kBoundSlack = 1e-9;

/// Evaluate both optimal costs and the explicit upper bound on their gap.
/// j_d is the cost of the block-diagonal gain acting on the full coupled
/// system; j_c = x0^T Q_tilde x0 is the centralized optimum.
inline PerformanceBound performance_bound(const Eigen::MatrixXd& A_tilde, const Eigen::MatrixXd& B,
                                          const Eigen::MatrixXd& Q_xx, const Eigen::MatrixXd& Q_uu,
                                          const Eigen::MatrixXd& F_d, const Eigen::MatrixXd& F_c,
                                          const Eigen::MatrixXd& Q_tilde,
                                          const Eigen::VectorXd& x0) {
    PerformanceBound out;
    const Eigen::MatrixXd A_cl = A_tilde + B * F_d;
    out.beta = decay_margin(A_cl);
    if (!(out.beta > 0.0))
        throw StabilityError("performance_bound: distributed closed loop is not Hurwitz (beta = " +
                             std::to_string(out.beta) + ")");
    const Eigen::MatrixXd dF = F_d - F_c;
    out.gap_bound = spectral_norm(dF.transpose() * Q_uu * dF) / out.beta * x0.squaredNorm();
    out.j_d = evaluate_cost(A_cl, Q_xx + F_d.transpose() * Q_uu * F_d, x0);
    out.j_c = x0.dot(Q_tilde * x0);
    out.gap = out.j_d - out.j_c;
    out.holds = (out.gap >= -kBoundSlack) && (out.gap <= out.gap_bound + kBoundSlack);
    return out;
}

}  // namespace gridlevels
