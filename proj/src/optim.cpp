#include "embprior/optim.hpp"

#include <cmath>

namespace embprior {

void adamw_update(Vec& params, const Vec& grads, AdamMoments& mom, const AdamwConfig& cfg) {
    if (params.size() != grads.size()) throw std::invalid_argument("adamw_update: shape mismatch");
    if (mom.m.empty()) {
        mom.m.assign(params.size(), 0.0);
        mom.v.assign(params.size(), 0.0);
    }
    if (mom.m.size() != params.size() || mom.v.size() != params.size())
        throw std::invalid_argument("adamw_update: moment shape mismatch");
    mom.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mom.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mom.step));
    for (size_t i = 0; i < params.size(); ++i) {
        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * grads[i];
        mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        double m_hat = mom.m[i] / bc1;
        double v_hat = mom.v[i] / bc2;
        params[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
    }
}

}  // namespace embprior
