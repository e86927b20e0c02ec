#include "embprior/cluster_bank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace embprior {

void ClusterBank::sync_vars_from_log_std() {
    for (int i = 0; i < k; ++i)
        for (size_t j = 0; j < dim(); ++j)
            gaussians[static_cast<size_t>(i)].var[j] = std::exp(2.0 * log_std[static_cast<size_t>(i)][j]);
}

void ClusterBank::init_log_std_from_vars() {
    log_std.assign(static_cast<size_t>(k), Vec(dim(), 0.0));
    for (int i = 0; i < k; ++i)
        for (size_t j = 0; j < dim(); ++j)
            log_std[static_cast<size_t>(i)][j] = 0.5 * std::log(gaussians[static_cast<size_t>(i)].var[j]);
}

ClusterBank make_standard_bank(size_t d) {
    ClusterBank bank;
    bank.k = 1;
    bank.gaussians.push_back(DiagGaussian::standard(d));
    bank.init_log_std_from_vars();
    return bank;
}

static double sq_dist(const double* a, const double* b, size_t d) {
    double s = 0.0;
    for (size_t j = 0; j < d; ++j) {
        double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

ClusterBank fit_kmeans(const Matrix& embeddings, int k, int iters, uint64_t seed, double kappa) {
    const size_t n = embeddings.rows, d = embeddings.cols;
    if (n == 0 || d == 0) throw std::invalid_argument("fit_kmeans: empty input");
    if (k < 1) throw std::invalid_argument("fit_kmeans: k must be >= 1");
    if (n < static_cast<size_t>(k)) throw std::invalid_argument("fit_kmeans: fewer rows than clusters");
    if (!(kappa > 0.0)) throw std::invalid_argument("fit_kmeans: kappa must be positive");

    Rng rng(seed);
    std::vector<Vec> centroids;
    centroids.reserve(static_cast<size_t>(k));

    // k-means++ seeding
    centroids.push_back(embeddings.row_vec(static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1))));
    std::vector<double> d2(n, 0.0);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec& ctr : centroids) best = std::min(best, sq_dist(embeddings.row(i), ctr.data(), d));
            d2[i] = best;
            total += best;
        }
        size_t pick = 0;
        if (total > 0.0) {
            double u = rng.uniform01() * total, acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (u < acc) { pick = i; break; }
                pick = i;  // fall through to last row on rounding
            }
        } else {
            pick = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1));
        }
        centroids.push_back(embeddings.row_vec(pick));
    }

    // Lloyd iterations
    std::vector<int> assign(n, 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            int best = 0;
            double bestd = sq_dist(embeddings.row(i), centroids[0].data(), d);
            for (int c = 1; c < k; ++c) {
                double dist = sq_dist(embeddings.row(i), centroids[static_cast<size_t>(c)].data(), d);
                if (dist < bestd) { bestd = dist; best = c; }
            }
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        std::vector<Vec> sums(static_cast<size_t>(k), Vec(d, 0.0));
        std::vector<size_t> counts(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < n; ++i) {
            counts[static_cast<size_t>(assign[i])]++;
            const double* row = embeddings.row(i);
            Vec& s = sums[static_cast<size_t>(assign[i])];
            for (size_t j = 0; j < d; ++j) s[j] += row[j];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) {
                // take over the point farthest from its current centroid
                size_t far_i = 0;
                double far_d = -1.0;
                for (size_t i = 0; i < n; ++i) {
                    double dist = sq_dist(embeddings.row(i), centroids[static_cast<size_t>(assign[i])].data(), d);
                    if (dist > far_d) { far_d = dist; far_i = i; }
                }
                centroids[static_cast<size_t>(c)] = embeddings.row_vec(far_i);
                assign[far_i] = c;
                changed = true;
            } else {
                for (size_t j = 0; j < d; ++j)
                    centroids[static_cast<size_t>(c)][j] = sums[static_cast<size_t>(c)][j] / static_cast<double>(counts[static_cast<size_t>(c)]);
            }
        }
        if (!changed && it > 0) break;
    }

    // final assignment + per-dimension within-cluster sample variance
    std::vector<size_t> counts(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < n; ++i) {
        int best = 0;
        double bestd = sq_dist(embeddings.row(i), centroids[0].data(), d);
        for (int c = 1; c < k; ++c) {
            double dist = sq_dist(embeddings.row(i), centroids[static_cast<size_t>(c)].data(), d);
            if (dist < bestd) { bestd = dist; best = c; }
        }
        assign[i] = best;
        counts[static_cast<size_t>(best)]++;
    }
    std::vector<Vec> var(static_cast<size_t>(k), Vec(d, 0.0));
    for (size_t i = 0; i < n; ++i) {
        const double* row = embeddings.row(i);
        const Vec& ctr = centroids[static_cast<size_t>(assign[i])];
        Vec& v = var[static_cast<size_t>(assign[i])];
        for (size_t j = 0; j < d; ++j) {
            double diff = row[j] - ctr[j];
            v[j] += diff * diff;
        }
    }
    ClusterBank bank;
    bank.k = k;
    bank.kappa = kappa;
    for (int c = 0; c < k; ++c) {
        size_t m = counts[static_cast<size_t>(c)];
        Vec v(d);
        for (size_t j = 0; j < d; ++j) {
            double s2 = m >= 2 ? var[static_cast<size_t>(c)][j] / static_cast<double>(m - 1) : 0.0;
            v[j] = std::max(kappa * kappa * s2, 1e-6);
        }
        bank.gaussians.push_back(make_diag_gaussian(centroids[static_cast<size_t>(c)], std::move(v)));
    }
    bank.init_log_std_from_vars();
    return bank;
}

Assignment assign_top1(const ClusterBank& bank, const Vec& cond) {
    if (bank.k < 1) throw std::invalid_argument("assign_top1: unpopulated bank");
    check_same_dim(cond, bank.gaussians[0].mean, "assign_top1");
    double cond_norm = norm(cond);
    if (cond_norm == 0.0) throw std::invalid_argument("assign_top1: zero-norm cond");
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < bank.k; ++i) {
        const Vec& mu = bank.gaussians[static_cast<size_t>(i)].mean;
        double mu_norm = norm(mu);
        double sim = mu_norm == 0.0 ? -std::numeric_limits<double>::infinity()
                                    : dot(mu, cond) / (mu_norm * cond_norm);
        if (sim > best_sim) { best_sim = sim; best = i; }
    }
    return Assignment{best, best_sim};
}

Assignment assign_mc(const ClusterBank& bank, const Vec& cond, int M, uint64_t seed) {
    if (bank.k < 1) throw std::invalid_argument("assign_mc: unpopulated bank");
    if (M < 1) throw std::invalid_argument("assign_mc: M must be >= 1");
    check_same_dim(cond, bank.gaussians[0].mean, "assign_mc");
    if (norm(cond) == 0.0) throw std::invalid_argument("assign_mc: zero-norm cond");
    const size_t d = bank.dim();
    Rng rng(seed);
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    Vec noise(d);
    for (int i = 0; i < bank.k; ++i) {
        const DiagGaussian& g = bank.gaussians[static_cast<size_t>(i)];
        double acc = 0.0;
        for (int m = 0; m < M; ++m) {
            for (size_t j = 0; j < d; ++j) noise[j] = rng.normal();
            Vec draw = sample(g, noise);
            double nrm = norm(draw);
            acc += nrm == 0.0 ? -1.0 : dot(draw, cond) / (nrm * norm(cond));
        }
        double sim = acc / M;
        if (sim > best_sim) { best_sim = sim; best = i; }
    }
    return Assignment{best, best_sim};
}

LpNoise draw_lp_noise(size_t batch_size, int k, size_t d, Rng& rng) {
    LpNoise ns;
    ns.per_item.assign(batch_size, Vec(d));
    for (auto& v : ns.per_item)
        for (size_t j = 0; j < d; ++j) v[j] = rng.normal();
    ns.per_cluster.assign(static_cast<size_t>(k), Vec(d));
    for (auto& v : ns.per_cluster)
        for (size_t j = 0; j < d; ++j) v[j] = rng.normal();
    return ns;
}

// d cos(a,b) / d a = (b/|b| - cos * a/|a|) / |a|
static void add_dcos_da(const Vec& a, const Vec& b, double weight, Vec& out) {
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return;
    double c = dot(a, b) / (na * nb);
    for (size_t j = 0; j < a.size(); ++j) out[j] += weight * (b[j] / nb - c * a[j] / na) / na;
}

LpResult lp_loss(const ClusterBank& bank, const std::vector<LpItem>& batch, const LpNoise& noise) {
    if (!bank.learnable) throw std::invalid_argument("lp_loss: bank is not learnable");
    if (batch.empty()) throw std::invalid_argument("lp_loss: empty batch");
    if (noise.per_item.size() != batch.size() || noise.per_cluster.size() != static_cast<size_t>(bank.k))
        throw std::invalid_argument("lp_loss: noise shape mismatch");
    const size_t d = bank.dim();
    const int k = bank.k;

    LpResult res;
    res.d_mean.assign(static_cast<size_t>(k), Vec(d, 0.0));
    res.d_log_std.assign(static_cast<size_t>(k), Vec(d, 0.0));

    // alignment term: one reparameterized draw per batch item
    std::vector<Vec> dz_item(batch.size(), Vec(d, 0.0));
    double align = 0.0;
    for (size_t b = 0; b < batch.size(); ++b) {
        int c = batch[b].cluster;
        if (c < 0 || c >= k) throw std::invalid_argument("lp_loss: cluster index out of range");
        const DiagGaussian& g = bank.gaussians[static_cast<size_t>(c)];
        Vec z(d);
        for (size_t j = 0; j < d; ++j)
            z[j] = g.mean[j] + std::exp(bank.log_std[static_cast<size_t>(c)][j]) * noise.per_item[b][j];
        double cz = cosine(z, batch[b].z0);
        if (std::isfinite(cz)) align += cz;
        add_dcos_da(z, batch[b].z0, -1.0 / static_cast<double>(batch.size()), dz_item[b]);
        for (size_t j = 0; j < d; ++j) {
            res.d_mean[static_cast<size_t>(c)][j] += dz_item[b][j];
            res.d_log_std[static_cast<size_t>(c)][j] += dz_item[b][j] * (z[j] - g.mean[j]);
        }
    }
    res.loss = -align / static_cast<double>(batch.size());

    // pairwise-overlap term: one draw per cluster, shared across pairs
    if (k > 1 && bank.xi != 0.0) {
        std::vector<Vec> w(static_cast<size_t>(k), Vec(d));
        for (int i = 0; i < k; ++i)
            for (size_t j = 0; j < d; ++j)
                w[static_cast<size_t>(i)][j] =
                    bank.gaussians[static_cast<size_t>(i)].mean[j] +
                    std::exp(bank.log_std[static_cast<size_t>(i)][j]) * noise.per_cluster[static_cast<size_t>(i)][j];
        double pair_weight = bank.xi / (static_cast<double>(k) * (k - 1));
        double overlap = 0.0;
        std::vector<Vec> dw(static_cast<size_t>(k), Vec(d, 0.0));
        for (int i = 0; i < k; ++i) {
            for (int j = i + 1; j < k; ++j) {
                double c = cosine(w[static_cast<size_t>(i)], w[static_cast<size_t>(j)]);
                if (std::isfinite(c)) overlap += 2.0 * c;  // ordered pairs (i,j) and (j,i)
                add_dcos_da(w[static_cast<size_t>(i)], w[static_cast<size_t>(j)], 2.0 * pair_weight, dw[static_cast<size_t>(i)]);
                add_dcos_da(w[static_cast<size_t>(j)], w[static_cast<size_t>(i)], 2.0 * pair_weight, dw[static_cast<size_t>(j)]);
            }
        }
        res.loss += pair_weight * overlap;
        for (int i = 0; i < k; ++i) {
            for (size_t j = 0; j < d; ++j) {
                res.d_mean[static_cast<size_t>(i)][j] += dw[static_cast<size_t>(i)][j];
                res.d_log_std[static_cast<size_t>(i)][j] +=
                    dw[static_cast<size_t>(i)][j] * (w[static_cast<size_t>(i)][j] - bank.gaussians[static_cast<size_t>(i)].mean[j]);
            }
        }
    }
    return res;
}

}  // namespace embprior
