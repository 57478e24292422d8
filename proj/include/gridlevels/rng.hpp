#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <random>

namespace gridlevels {

/// Deterministic random source. Wraps mt19937_64 but derives uniform and
/// normal variates by hand so that streams are reproducible across standard
/// library implementations (std::uniform_real_distribution is not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(), u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

    /// Uniformly random direction scaled to exactly `radius`.
    Eigen::VectorXd on_sphere(int dim, double radius) {
        Eigen::VectorXd x(dim);
        for (int i = 0; i < dim; ++i) x[i] = normal();
        const double n = x.norm();
        return n > 0 ? Eigen::VectorXd(x * (radius / n)) : x;
    }

    /// Uniform sample from the closed ball of the given radius.
    Eigen::VectorXd in_ball(int dim, double radius) {
        return on_sphere(dim, radius * std::pow(uniform01(), 1.0 / dim));
    }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gridlevels
