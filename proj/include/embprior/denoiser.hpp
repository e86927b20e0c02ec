#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "embprior/vec.hpp"

namespace embprior {

// Residual MLP predicting z0_hat from (z_t, t, condition embedding, cluster
// index, drop flag). Stands in for a full sequence model at small embedding
// dimensions; the conditioning ingredients (time embedding, cluster-index
// embedding, condition vector, drop flag) are kept intact so the swap point
// is the network body only.
struct DenoiserConfig {
    int d = 16;               // embedding dimension
    int hidden = 256;
    int depth = 4;            // residual blocks
    int time_embed_dim = 64;  // sinusoidal feature size, even
    int k = 1;                // cluster slots; the table holds k+1 rows (last = null)

    bool operator==(const DenoiserConfig&) const = default;
};

// Offsets of named tensors inside one flat parameter vector.
struct ParamLayout {
    struct Entry {
        std::string name;
        std::vector<size_t> shape;
        size_t offset = 0;
        size_t size = 0;
    };
    std::vector<Entry> entries;
    size_t total = 0;

    const Entry& find(const std::string& name) const;
};

ParamLayout make_denoiser_layout(const DenoiserConfig& cfg);

struct DenoiserParams {
    DenoiserConfig cfg;
    ParamLayout layout;
    Vec flat;

    double* tensor(const std::string& name) { return flat.data() + layout.find(name).offset; }
    const double* tensor(const std::string& name) const { return flat.data() + layout.find(name).offset; }
};

// Fan-in scaled init; the output head is zero so the initial prediction is an
// input-independent constant. Deterministic given seed.
DenoiserParams init_params(const DenoiserConfig& cfg, uint64_t seed);

// Sinusoidal features of an integer timestep; dim must be even.
Vec time_features(int t, int dim);

// Forward intermediates needed for the exact backward pass.
struct DenoiserCache {
    bool filled = false;
    Vec z_t, tfeat, cond_eff;
    int cluster_row = 0;
    Vec h0;
    struct Block {
        Vec x, xhat, y, a, phi, u, h;
        double rstd = 0.0;
    };
    std::vector<Block> blocks;
    Vec out;
};

// Deterministic forward pass. dropped = true replaces cond with zeros and the
// cluster index with the null embedding slot. A null c_idx also selects the
// null slot. Pass cache to enable backward(); pass tfeat to reuse a
// precomputed time-feature vector.
Vec predict_z0(const DenoiserParams& p, const Vec& z_t, int t, const Vec& cond,
               std::optional<int> c_idx, bool dropped, DenoiserCache* cache = nullptr,
               const Vec* tfeat = nullptr);

// Accumulates exact gradients of <output, d_out> into grad_flat (same layout
// as the parameters). The cache must come from the matching predict_z0 call.
void backward_into(const DenoiserParams& p, const DenoiserCache& cache, const Vec& d_out, Vec& grad_flat);

Vec backward(const DenoiserParams& p, const DenoiserCache& cache, const Vec& d_out);

}  // namespace embprior
