#pragma once

#include <cstdint>

#include "embprior/gaussian.hpp"
#include "embprior/rng.hpp"

namespace embprior {

// Row-major n x d matrix of embeddings.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(size_t i) { return data.data() + i * cols; }
    const double* row(size_t i) const { return data.data() + i * cols; }
    Vec row_vec(size_t i) const { return Vec(row(i), row(i) + cols); }
};

// The collection {N(mu_i, Sigma_i)}_{i=1..k} of candidate initial
// distributions. When learnable, sqrt(Sigma_i) is parameterized as
// exp(log_std) so variances stay positive under unconstrained updates;
// gaussians[i].var is kept in sync with exp(2 log_std).
struct ClusterBank {
    int k = 0;
    bool learnable = false;
    std::vector<DiagGaussian> gaussians;       // k entries, all dimension d
    std::vector<Vec> log_std;                  // k x d, meaningful when learnable
    double xi = 0.1;                           // pairwise-overlap penalty weight
    double kappa = 1.0;

    size_t dim() const { return gaussians.empty() ? 0 : gaussians[0].dim(); }

    // Recomputes gaussians[i].var from log_std (learnable banks only).
    void sync_vars_from_log_std();
    // Initializes log_std from the current variances.
    void init_log_std_from_vars();
};

// Single standard Gaussian N(0, I): the vanilla-baseline bank.
ClusterBank make_standard_bank(size_t d);

struct Assignment {
    int index = 0;        // selected cluster, in [0, k)
    double similarity = 0.0;
};

// k-means with k-means++ seeding, deterministic given seed. Cluster
// covariances are the per-dimension within-cluster sample variance scaled by
// kappa^2, floored at 1e-6.
ClusterBank fit_kmeans(const Matrix& embeddings, int k, int iters, uint64_t seed, double kappa = 1.0);

// Top-1 cosine similarity between cluster means and cond. Ties break to the
// lowest index; zero-norm means are treated as similarity -inf.
Assignment assign_top1(const ClusterBank& bank, const Vec& cond);

// Monte-Carlo assignment: argmax_i (1/M) sum_m cos(eps_i^(m), cond) with
// eps_i^(m) ~ p_i. Deterministic given seed.
Assignment assign_mc(const ClusterBank& bank, const Vec& cond, int M, uint64_t seed);

struct LpItem {
    Vec z0;
    int cluster = 0;
};

// Noise for one lp_loss evaluation: one standard-normal vector per batch item
// (first term) and one per cluster (pairwise term).
struct LpNoise {
    std::vector<Vec> per_item;     // batch.size() x d
    std::vector<Vec> per_cluster;  // k x d
};

LpNoise draw_lp_noise(size_t batch_size, int k, size_t d, Rng& rng);

struct LpResult {
    double loss = 0.0;
    std::vector<Vec> d_mean;     // k x d
    std::vector<Vec> d_log_std;  // k x d
};

// Sampled estimate of the bank loss: pulls reparameterized terminal draws
// toward their assigned z0 (negative mean cosine) and penalizes pairwise
// overlap between clusters with weight xi. Gradients are exact for this
// sampled estimator. k = 1 has no pairs; the second term is 0.
LpResult lp_loss(const ClusterBank& bank, const std::vector<LpItem>& batch, const LpNoise& noise);

}  // namespace embprior
