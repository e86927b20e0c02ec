#include "embprior/process.hpp"

#include <cmath>

namespace embprior {

ShiftedProcess make_shifted_process(Schedule schedule, Vec mu, Vec var, double kappa) {
    if (mu.size() != var.size()) throw std::invalid_argument("make_shifted_process: dimension mismatch");
    if (mu.empty()) throw std::invalid_argument("make_shifted_process: empty dimension");
    if (!(kappa > 0.0)) throw std::invalid_argument("make_shifted_process: kappa must be positive");
    for (double& v : var) {
        if (!(v > 0.0)) throw std::invalid_argument("make_shifted_process: variance must be strictly positive");
        if (v < kVarFloor) v = kVarFloor;
    }
    return ShiftedProcess{std::move(schedule), std::move(mu), std::move(var), kappa};
}

ShiftedProcess make_vanilla_process(Schedule schedule, size_t d) {
    return make_shifted_process(std::move(schedule), zeros(d), Vec(d, 1.0), 1.0);
}

static void check_t(const ShiftedProcess& p, int t) {
    if (t < 1 || t > p.T()) throw std::invalid_argument("ShiftedProcess: timestep out of range");
}

Vec shift_term(const ShiftedProcess& p, int t) {
    check_t(p, t);
    double c = 1.0 - std::sqrt(1.0 - p.schedule.beta(t));
    Vec s(p.dim());
    for (size_t j = 0; j < p.dim(); ++j) s[j] = c * p.mu[j];
    return s;
}

DiagGaussian forward_step(const ShiftedProcess& p, const Vec& z_prev, int t) {
    check_t(p, t);
    check_same_dim(z_prev, p.mu, "forward_step");
    double beta = p.schedule.beta(t);
    double a = std::sqrt(1.0 - beta);
    double shift = 1.0 - a;
    Vec mean(p.dim()), var(p.dim());
    for (size_t j = 0; j < p.dim(); ++j) {
        mean[j] = a * z_prev[j] + shift * p.mu[j];
        var[j] = beta * p.var[j];
    }
    return DiagGaussian{std::move(mean), std::move(var)};
}

DiagGaussian forward_marginal(const ShiftedProcess& p, const Vec& z0, int t) {
    check_t(p, t);
    check_same_dim(z0, p.mu, "forward_marginal");
    double abar = p.schedule.alpha_bar(t);
    double ra = std::sqrt(abar);
    Vec mean(p.dim()), var(p.dim());
    for (size_t j = 0; j < p.dim(); ++j) {
        mean[j] = ra * z0[j] + (1.0 - ra) * p.mu[j];
        var[j] = (1.0 - abar) * p.var[j];
    }
    return DiagGaussian{std::move(mean), std::move(var)};
}

PosteriorCoeffs posterior_coeffs_between(const ShiftedProcess& p, int t, int t_prev) {
    check_t(p, t);
    if (t_prev < 1 || t_prev >= t) throw std::invalid_argument("posterior_coeffs_between: need 1 <= t_prev < t");
    double abar_t = p.schedule.alpha_bar(t);
    double abar_prev = p.schedule.alpha_bar(t_prev);
    // adjacent steps read beta_t straight off the schedule so that strided
    // code taking t_prev = t-1 is exactly the single-step posterior
    double beta_eff = (t_prev == t - 1) ? p.schedule.beta(t) : 1.0 - abar_t / abar_prev;
    double alpha_eff = 1.0 - beta_eff;
    double one_m_abar_t = 1.0 - abar_t;
    PosteriorCoeffs c;
    c.beta_eff = beta_eff;
    c.gamma = (1.0 - abar_prev) * std::sqrt(alpha_eff) / one_m_abar_t;
    c.eta = beta_eff * std::sqrt(abar_prev) / one_m_abar_t;
    c.tau = beta_eff / one_m_abar_t;
    c.lambda_scale = (1.0 - abar_prev) * beta_eff / one_m_abar_t;
    return c;
}

PosteriorCoeffs posterior_coeffs(const ShiftedProcess& p, int t) {
    if (t < 2) throw std::invalid_argument("posterior_coeffs: need 2 <= t <= T");
    return posterior_coeffs_between(p, t, t - 1);
}

DiagGaussian posterior_between(const ShiftedProcess& p, const Vec& z_t, const Vec& z0, int t, int t_prev) {
    check_same_dim(z_t, p.mu, "posterior_between");
    check_same_dim(z0, p.mu, "posterior_between");
    PosteriorCoeffs c = posterior_coeffs_between(p, t, t_prev);
    double abar_prev = p.schedule.alpha_bar(t_prev);
    double s_eff = 1.0 - std::sqrt(1.0 - c.beta_eff);          // shift of the composed transition, per unit mu
    double mu_coeff = c.tau * (1.0 - std::sqrt(abar_prev));
    Vec mean(p.dim()), var(p.dim());
    for (size_t j = 0; j < p.dim(); ++j) {
        mean[j] = c.gamma * (z_t[j] - s_eff * p.mu[j]) + c.eta * z0[j] + mu_coeff * p.mu[j];
        var[j] = c.lambda_scale * p.var[j];
    }
    return DiagGaussian{std::move(mean), std::move(var)};
}

DiagGaussian posterior(const ShiftedProcess& p, const Vec& z_t, const Vec& z0, int t) {
    if (t < 2) throw std::invalid_argument("posterior: need 2 <= t <= T");
    return posterior_between(p, z_t, z0, t, t - 1);
}

double kl_terminal(const ShiftedProcess& p, const Vec& z0, const DiagGaussian& init) {
    check_same_dim(z0, init.mean, "kl_terminal");
    return kl_diag(forward_marginal(p, z0, p.T()), init);
}

}  // namespace embprior
