#include "embprior/sampler.hpp"

#include <cmath>

namespace embprior {

std::vector<int> stride_schedule(int T, int steps) {
    if (T < 1) throw std::invalid_argument("stride_schedule: T must be >= 1");
    if (steps < 1 || steps > T) throw std::invalid_argument("stride_schedule: need 1 <= steps <= T");
    std::vector<int> ts(static_cast<size_t>(steps));
    ts[0] = T;
    double stride = static_cast<double>(T) / steps;
    for (int i = 1; i < steps; ++i) {
        int ideal = static_cast<int>(std::llround(T - stride * i));
        ts[static_cast<size_t>(i)] = std::max(1, std::min(ts[static_cast<size_t>(i - 1)] - 1, ideal));
    }
    if (steps >= 2) ts[static_cast<size_t>(steps - 1)] = 1;
    for (size_t i = 1; i < ts.size(); ++i)
        if (ts[i] >= ts[i - 1]) throw std::logic_error("stride_schedule: not strictly decreasing");
    return ts;
}

DiagGaussian strided_posterior(const ShiftedProcess& proc, const Vec& z_t, const Vec& zhat0,
                               int t, int t_prev) {
    return posterior_between(proc, z_t, zhat0, t, t_prev);
}

SampleTrace sample_prior(const TrainState& state, const Vec& cond, const SampleConfig& cfg, Rng& rng) {
    const TrainConfig& tc = state.cfg;
    if (state.bank.k < 1 || state.cluster_procs.empty()) throw std::invalid_argument("sample_prior: unpopulated bank");
    if (cond.size() != static_cast<size_t>(tc.d)) throw std::invalid_argument("sample_prior: dimension mismatch");
    if (cfg.steps < 1 || cfg.steps > tc.T) throw std::invalid_argument("sample_prior: steps out of range");

    SampleTrace trace;
    if (cfg.assign_mode == AssignMode::Top1) {
        trace.cluster = assign_top1(state.bank, cond).index;
    } else {
        trace.cluster = assign_mc(state.bank, cond, cfg.mc_samples, rng.next_u64()).index;
    }
    const ShiftedProcess& proc = state.proc_for(trace.cluster);
    const size_t d = static_cast<size_t>(tc.d);

    Vec noise(d);
    for (size_t j = 0; j < d; ++j) noise[j] = rng.normal();
    Vec z = sample(state.bank.gaussians[static_cast<size_t>(trace.cluster)], noise);

    std::vector<int> ts = stride_schedule(tc.T, cfg.steps);
    trace.trajectory.reserve(ts.size() + 1);
    trace.trajectory.emplace_back(ts[0], z);

    Vec zhat;
    for (size_t i = 0; i < ts.size(); ++i) {
        int t = ts[i];
        const Vec& tfeat = state.time_table[static_cast<size_t>(t - 1)];
        Vec zhat_c = predict_z0(state.params, z, t, cond, trace.cluster, false, nullptr, &tfeat);
        if (cfg.guidance_w == 1.0) {
            zhat = std::move(zhat_c);
        } else {
            Vec zhat_u = predict_z0(state.params, z, t, cond, std::nullopt, true, nullptr, &tfeat);
            zhat.resize(d);
            for (size_t j = 0; j < d; ++j) zhat[j] = zhat_u[j] + cfg.guidance_w * (zhat_c[j] - zhat_u[j]);
        }
        if (cfg.clamp_z0) {
            double n = norm(zhat);
            if (n > *cfg.clamp_z0 && n > 0.0)
                for (double& v : zhat) v *= *cfg.clamp_z0 / n;
        }
        if (i + 1 < ts.size()) {
            int t_prev = ts[i + 1];
            DiagGaussian post = strided_posterior(proc, z, zhat, t, t_prev);
            for (size_t j = 0; j < d; ++j) noise[j] = rng.normal();
            z = sample(post, noise);
            trace.trajectory.emplace_back(t_prev, z);
        }
    }
    trace.z0_hat = zhat;
    trace.trajectory.emplace_back(0, trace.z0_hat);
    return trace;
}

std::vector<std::pair<int, double>> trajectory_similarity(const std::vector<std::pair<int, Vec>>& trajectory,
                                                          const Vec& z0_true) {
    if (trajectory.empty()) throw std::invalid_argument("trajectory_similarity: empty trajectory");
    std::vector<std::pair<int, double>> out;
    out.reserve(trajectory.size());
    for (const auto& [t, z] : trajectory) out.emplace_back(t, cosine(z, z0_true));
    return out;
}

}  // namespace embprior
