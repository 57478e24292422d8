#pragma once

#include <stdexcept>
#include <string>

namespace gridlevels {

/// Base class for all toolkit errors. Carries an optional pipeline stage name
/// so CLI output can say where a run failed.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    Error(const std::string& stage, const std::string& msg)
        : std::runtime_error(stage.empty() ? msg : stage + ": " + msg), stage_(stage) {}
    const std::string& stage() const { return stage_; }
    void set_stage(const std::string& s) { stage_ = s; }

private:
    std::string stage_;
};

/// Invalid configuration, parameter range, or malformed input file.
struct ConfigError : Error { using Error::Error; };

/// Lookup key does not exist (e.g. demand keyed by a non Level-3 node).
struct KeyError : Error { using Error::Error; };

/// Vector or matrix dimensions do not match the expected layout.
struct DimensionError : Error { using Error::Error; };

/// Argument outside the mathematical domain (e.g. nonpositive voltage).
struct DomainError : Error { using Error::Error; };

/// Scalar argument outside its admissible interval.
struct RangeError : Error { using Error::Error; };

/// Iterative solver failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, double last_residual)
        : Error(msg), last_residual_(last_residual) {}
    double last_residual() const { return last_residual_; }

private:
    double last_residual_ = 0.0;
};

/// A converged state violates one of the model assumptions.
struct AssumptionViolation : Error { using Error::Error; };

/// NaN or Inf appeared during numerical integration.
class NumericalError : public Error {
public:
    NumericalError(const std::string& msg, long step)
        : Error(msg), step_(step) {}
    long step() const { return step_; }

private:
    long step_ = -1;
};

/// System lacks the structural property required by a solver
/// (stabilizability / detectability).
struct StructureError : Error { using Error::Error; };

/// Iteration limit reached without convergence.
struct IterationError : Error { using Error::Error; };

/// Matrix expected to be Hurwitz is not, or a closed loop is unstable.
struct StabilityError : Error { using Error::Error; };

}  // namespace gridlevels
