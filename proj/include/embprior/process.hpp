#pragma once

#include "embprior/gaussian.hpp"

namespace embprior {

// Diffusion over embedding space whose per-step transition carries a shift
// term s_t = (1 - sqrt(1-beta_t)) * mu, so that the terminal distribution is
// N(mu, Sigma) instead of N(0, I). Vanilla diffusion is the exact special
// case mu = 0, Sigma = I; there is no separate baseline code path.
struct ShiftedProcess {
    Schedule schedule;
    Vec mu;    // initial-distribution mean
    Vec var;   // diagonal of Sigma
    double kappa = 1.0;

    size_t dim() const { return mu.size(); }
    int T() const { return schedule.T; }
    DiagGaussian initial() const { return DiagGaussian{mu, var}; }
};

ShiftedProcess make_shifted_process(Schedule schedule, Vec mu, Vec var, double kappa = 1.0);

// Convenience: mu = 0, Sigma = I (the vanilla baseline configuration).
ShiftedProcess make_vanilla_process(Schedule schedule, size_t d);

// s_t = (1 - sqrt(1-beta_t)) * mu, 1 <= t <= T
Vec shift_term(const ShiftedProcess& p, int t);

// One forward step: q(z_t | z_{t-1}) = N(sqrt(1-beta_t) z_{t-1} + s_t, beta_t Sigma)
DiagGaussian forward_step(const ShiftedProcess& p, const Vec& z_prev, int t);

// Closed-form marginal: q(z_t | z_0) = N(sqrt(abar_t) z_0 + (1-sqrt(abar_t)) mu,
//                                        (1-abar_t) Sigma)
DiagGaussian forward_marginal(const ShiftedProcess& p, const Vec& z0, int t);

// Scalar coefficients of the posterior q(z_{t_prev} | z_t, z_0):
//   mean = gamma (z_t - s) + eta z_0 + tau (1 - sqrt(abar_prev)) mu
//   cov  = lambda_scale * Sigma
// where s is the (effective) shift of the t_prev -> t transition.
struct PosteriorCoeffs {
    double gamma = 0.0;
    double eta = 0.0;
    double tau = 0.0;
    double lambda_scale = 0.0;
    double beta_eff = 0.0;  // transition beta for t_prev -> t (beta_t when adjacent)
};

// Adjacent-step coefficients, 2 <= t <= T. (t = 1 is the trainer's NLL term:
// lambda_scale would be 0 because abar_0 = 1.)
PosteriorCoeffs posterior_coeffs(const ShiftedProcess& p, int t);

// Coefficients of the skip-step posterior q(z_{t_prev} | z_t, z_0) for any
// 1 <= t_prev < t <= T; the composed t_prev -> t transition has effective
// beta' = 1 - abar_t / abar_prev. t_prev = t-1 reproduces posterior_coeffs
// bit-for-bit (it reads beta_t from the schedule rather than re-deriving it).
PosteriorCoeffs posterior_coeffs_between(const ShiftedProcess& p, int t, int t_prev);

// q(z_{t-1} | z_t, z_0), 2 <= t <= T
DiagGaussian posterior(const ShiftedProcess& p, const Vec& z_t, const Vec& z0, int t);

// q(z_{t_prev} | z_t, z_0) across a stride, 1 <= t_prev < t <= T
DiagGaussian posterior_between(const ShiftedProcess& p, const Vec& z_t, const Vec& z0, int t, int t_prev);

// KL(q(z_T | z_0) || init). Theta-independent; logged during training, never
// optimized. init must match the process dimension.
double kl_terminal(const ShiftedProcess& p, const Vec& z0, const DiagGaussian& init);

}  // namespace embprior
