#pragma once

#include "embprior/vec.hpp"

namespace embprior {

// Variances below this are clamped at construction; guards degenerate
// clusters whose within-cluster spread collapses to zero.
constexpr double kVarFloor = 1e-12;

// Diagonal-covariance Gaussian over embedding space.
struct DiagGaussian {
    Vec mean;
    Vec var;  // strictly positive, same dimension as mean

    size_t dim() const { return mean.size(); }

    static DiagGaussian standard(size_t d) { return DiagGaussian{zeros(d), Vec(d, 1.0)}; }
};

// Validates dimensions and positivity; entries of var below kVarFloor are
// raised to the floor.
DiagGaussian make_diag_gaussian(Vec mean, Vec var);

// KL(p || q) for diagonal Gaussians, closed form. Nonnegative.
double kl_diag(const DiagGaussian& p, const DiagGaussian& q);

// Exact negative log-density of x under g.
double nll_diag(const DiagGaussian& g, const Vec& x);

// Reparameterized draw: mean + sqrt(var) * noise, elementwise.
// Caller supplies standard-normal noise from a seeded generator.
Vec sample(const DiagGaussian& g, const Vec& noise);

// beta_t sequence with precomputed alpha_t and running products alpha_bar_t.
// Accessors are 1-indexed in t; alpha_bar(0) == 1 by convention.
struct Schedule {
    int T = 0;
    std::vector<double> betas;       // size T
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{i<=t} alpha_i

    double beta(int t) const { return betas[check(t)]; }
    double alpha(int t) const { return alphas[check(t)]; }
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        return alpha_bars[check(t)];
    }

  private:
    size_t check(int t) const {
        if (t < 1 || t > T) throw std::invalid_argument("Schedule: timestep out of range");
        return static_cast<size_t>(t - 1);
    }
};

// Linear beta ramp from beta_start to beta_end inclusive (a single step uses
// beta_start). Requires 0 < beta_start <= beta_end < 1 and T >= 1.
Schedule make_linear_schedule(int T, double beta_start, double beta_end);

// Builds a schedule from explicit betas (each in (0,1)).
Schedule make_schedule(std::vector<double> betas);

}  // namespace embprior
