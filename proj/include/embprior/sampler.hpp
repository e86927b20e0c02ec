#pragma once

#include <optional>

#include "embprior/trainer.hpp"

namespace embprior {

enum class AssignMode { Top1, Mc };

struct SampleConfig {
    int steps = 64;            // strided step count
    double guidance_w = 1.0;   // 1.0 = conditional only, no unconditional pass
    std::optional<double> clamp_z0;  // optional norm bound on predictions
    AssignMode assign_mode = AssignMode::Top1;
    int mc_samples = 64;
    uint64_t seed = 0;
};

// Strictly decreasing timestep subsequence from T down to 1, evenly spaced
// with both endpoints forced. steps = 1 yields {T}.
std::vector<int> stride_schedule(int T, int steps);

// Exact skip-step posterior q(z_{t_prev} | z_t, z0 = zhat0); the effective
// transition beta' = 1 - abar_t / abar_prev plugs into the single-step
// formulas. Adjacent strides reproduce posterior() exactly.
DiagGaussian strided_posterior(const ShiftedProcess& proc, const Vec& z_t, const Vec& zhat0,
                               int t, int t_prev);

struct SampleTrace {
    Vec z0_hat;
    // (t, z_t) at every strided timestep before its denoising step, then the
    // final prediction as (0, z0_hat)
    std::vector<std::pair<int, Vec>> trajectory;
    int cluster = 0;
};

// Algorithm-style inference: select the cluster for cond, draw z_T from its
// Gaussian, walk the strided posterior chain with classifier-free guidance
//   zhat0 = zhat_uncond + w (zhat_cond - zhat_uncond)
// (the unconditional branch uses zeroed cond and the null cluster slot and is
// skipped entirely at w = 1), and return the final prediction directly.
// Deterministic given rng.
SampleTrace sample_prior(const TrainState& state, const Vec& cond, const SampleConfig& cfg, Rng& rng);

// Cosine of every trajectory entry against the ground truth, in step order.
// Zero-norm entries yield NaN.
std::vector<std::pair<int, double>> trajectory_similarity(const std::vector<std::pair<int, Vec>>& trajectory,
                                                          const Vec& z0_true);

}  // namespace embprior
