#include "embprior/gaussian.hpp"

#include <cmath>

namespace embprior {

DiagGaussian make_diag_gaussian(Vec mean, Vec var) {
    if (mean.size() != var.size()) throw std::invalid_argument("make_diag_gaussian: dimension mismatch");
    if (mean.empty()) throw std::invalid_argument("make_diag_gaussian: empty dimension");
    for (double& v : var) {
        if (!(v > 0.0)) throw std::invalid_argument("make_diag_gaussian: variance must be strictly positive");
        if (v < kVarFloor) v = kVarFloor;
    }
    return DiagGaussian{std::move(mean), std::move(var)};
}

double kl_diag(const DiagGaussian& p, const DiagGaussian& q) {
    check_same_dim(p.mean, q.mean, "kl_diag");
    double s = 0.0;
    for (size_t j = 0; j < p.dim(); ++j) {
        double dm = p.mean[j] - q.mean[j];
        s += 0.5 * (std::log(q.var[j] / p.var[j]) + p.var[j] / q.var[j] + dm * dm / q.var[j] - 1.0);
    }
    return s;
}

double nll_diag(const DiagGaussian& g, const Vec& x) {
    check_same_dim(g.mean, x, "nll_diag");
    double s = 0.0;
    for (size_t j = 0; j < g.dim(); ++j) {
        double dm = x[j] - g.mean[j];
        s += 0.5 * (std::log(2.0 * M_PI * g.var[j]) + dm * dm / g.var[j]);
    }
    return s;
}

Vec sample(const DiagGaussian& g, const Vec& noise) {
    check_same_dim(g.mean, noise, "sample");
    Vec out(g.dim());
    for (size_t j = 0; j < g.dim(); ++j) out[j] = g.mean[j] + std::sqrt(g.var[j]) * noise[j];
    return out;
}

Schedule make_schedule(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("make_schedule: T must be >= 1");
    Schedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    double prod = 1.0;
    for (size_t i = 0; i < s.betas.size(); ++i) {
        double b = s.betas[i];
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("make_schedule: beta out of (0,1)");
        s.alphas[i] = 1.0 - b;
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

Schedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<size_t>(T));
    if (T == 1) {
        betas[0] = beta_start;
    } else {
        for (int t = 0; t < T; ++t)
            betas[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * t / (T - 1);
    }
    return make_schedule(std::move(betas));
}

}  // namespace embprior
