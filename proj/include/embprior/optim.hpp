#pragma once

#include <cstdint>

#include "embprior/vec.hpp"

namespace embprior {

struct AdamwConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.96;
    double eps = 1e-6;
    double weight_decay = 0.01;
};

struct AdamMoments {
    Vec m, v;
    int64_t step = 0;
};

// Decoupled-weight-decay Adam with bias-corrected moments:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// Moments are lazily sized on first use.
void adamw_update(Vec& params, const Vec& grads, AdamMoments& mom, const AdamwConfig& cfg);

}  // namespace embprior
