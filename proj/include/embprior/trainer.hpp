#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "embprior/cluster_bank.hpp"
#include "embprior/denoiser.hpp"
#include "embprior/optim.hpp"
#include "embprior/process.hpp"
#include "embprior/rng.hpp"

namespace embprior {

enum class LossMode { Elbo, Simple };

struct TrainConfig {
    int T = 1000;
    int batch = 128;
    int steps = 20000;
    double lr = 1e-3;  // desk-scale default; 1.2e-4 is the large-scale reference
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.96;
    double adam_eps = 1e-6;
    double weight_decay = 0.01;
    double drop_prob = 0.1;
    LossMode loss_mode = LossMode::Elbo;
    int k = 1;
    bool learnable_bank = false;
    double xi = 0.1;
    double kappa = 1.0;
    uint64_t seed = 0;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int d = 16;
    int hidden = 256;
    int depth = 4;
    int time_embed_dim = 64;
    // execution knobs; results never depend on them
    int threads = 0;       // 0 = hardware concurrency
    int grad_chunks = 8;   // fixed reduction chunking within a batch

    DenoiserConfig denoiser_config() const {
        return DenoiserConfig{d, hidden, depth, time_embed_dim, k};
    }
};

void validate(const TrainConfig& cfg);

struct TrainState {
    TrainConfig cfg;
    Schedule schedule;
    ClusterBank bank;
    DenoiserParams params;
    AdamMoments theta_moments;
    AdamMoments bank_moments;
    Vec data_mu, data_sigma;  // per-dimension stats of the image embeddings
    int64_t step = 0;
    Rng rng{0};

    std::vector<Vec> time_table;              // precomputed sinusoidal features, index t-1
    std::vector<ShiftedProcess> cluster_procs;  // one process per cluster

    void rebuild_cluster_procs();
    const ShiftedProcess& proc_for(int cluster) const { return cluster_procs[static_cast<size_t>(cluster)]; }
};

// Fresh state: schedule from the config's beta ramp, denoiser params from
// split_seed(seed, stream 0), training rng from stream 1.
TrainState make_train_state(const TrainConfig& cfg, ClusterBank bank, Vec data_mu, Vec data_sigma);

// Per-term piece of the diffusion loss given the prediction, as a function of
// zhat0 with z_t fixed. t >= 2 is the posterior KL, which reduces to a
// Lambda-weighted squared error because the two posteriors share covariance
// and their means differ only through eta * (z0 - zhat0). t = 1 is the
// Gaussian NLL with variance floored at nll_var_floor * Sigma.
constexpr double kNllVarFloor = 1e-4;

struct ElboTerm {
    double loss = 0.0;
    Vec d_zhat0;
};

ElboTerm elbo_term(const ShiftedProcess& proc, const Vec& z0, const Vec& zhat0, int t);

struct ElboResult {
    double loss = 0.0;
    Vec d_zhat0;
    Vec z_t;
    Vec zhat0;
    DenoiserCache cache;
};

// Draws z_t ~ q(z_t | z0) from the supplied standard-normal noise, runs the
// denoiser, and evaluates the per-term loss.
ElboResult loss_elbo(const ShiftedProcess& proc, const DenoiserParams& params, const Vec& z0,
                     const Vec& cond, std::optional<int> c_idx, int t, const Vec& noise, bool dropped,
                     const Vec* tfeat = nullptr);

struct SimpleLoss {
    double loss = 0.0;
    Vec d_zhat0;
};

// Mean squared error over dimensions; gradient 2 (zhat0 - z0) / d.
SimpleLoss loss_simple(const Vec& z0, const Vec& zhat0);

struct BatchItem {
    Vec z0;
    Vec cond;
};

struct StepMetrics {
    double loss = 0.0;         // mean per-item training loss
    double kl_terminal = 0.0;  // mean theta-free terminal KL (monitoring only)
    double lp_loss = 0.0;      // bank loss when learnable, else 0
    double wall_ms = 0.0;
};

// One optimization step per Algorithm 1: per item select the cluster by top-1
// cosine, draw t and the drop flag, compute the loss and exact gradients,
// average, and apply AdamW to theta. A learnable bank then takes its own
// AdamW step on lp_loss; the two parameter sets never receive gradients from
// each other's loss. Deterministic given the state rng.
StepMetrics train_step(TrainState& state, const std::vector<BatchItem>& batch);

// Assembles batches by uniform index draws from the state rng and runs
// train_step `steps` times. on_step (optional) observes metrics per step.
void run_training(TrainState& state, const Matrix& z0s, const Matrix& conds, int steps,
                  const std::function<void(int64_t, const StepMetrics&)>& on_step = nullptr);

// Checkpoint file: magic "SDCKPT1", u32 version, u32 JSON-header length, the
// UTF-8 JSON header (config, shapes, data stats, step counter, rng state),
// then named little-endian float64 tensor blobs in header order.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace embprior
