#include <doctest.h>

#include <algorithm>

#include "embprior/cluster_bank.hpp"
#include "embprior/data.hpp"
#include "embprior/rng.hpp"
#include "oracles.hpp"

using namespace embprior;

namespace {

Matrix two_blobs(int n_per, double spread, uint64_t seed) {
    Matrix m(static_cast<size_t>(2 * n_per), 2);
    Rng rng(seed);
    for (int i = 0; i < 2 * n_per; ++i) {
        double cx = i < n_per ? 5.0 : -5.0;
        m.row(static_cast<size_t>(i))[0] = cx + spread * rng.normal();
        m.row(static_cast<size_t>(i))[1] = spread * rng.normal();
    }
    return m;
}

double kmeans_sse(const Matrix& data, const ClusterBank& bank) {
    double sse = 0.0;
    for (size_t i = 0; i < data.rows; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const DiagGaussian& g : bank.gaussians) {
            double dist = 0.0;
            for (size_t j = 0; j < data.cols; ++j) {
                double diff = data.row(i)[j] - g.mean[j];
                dist += diff * diff;
            }
            best = std::min(best, dist);
        }
        sse += best;
    }
    return sse;
}

ClusterBank random_learnable_bank(Rng& rng, int k, size_t d, double xi) {
    ClusterBank bank;
    bank.k = k;
    bank.learnable = true;
    bank.xi = xi;
    for (int i = 0; i < k; ++i) {
        Vec m(d), v(d);
        for (size_t j = 0; j < d; ++j) {
            m[j] = rng.normal();
            v[j] = 0.2 + rng.uniform01();
        }
        bank.gaussians.push_back(make_diag_gaussian(std::move(m), std::move(v)));
    }
    bank.init_log_std_from_vars();
    return bank;
}

}  // namespace

TEST_SUITE("cluster_bank") {

TEST_CASE("kmeans with k = 1 recovers global stats") {
    Rng rng(5);
    Matrix m(200, 3);
    for (size_t i = 0; i < 200; ++i)
        for (size_t j = 0; j < 3; ++j) m.row(i)[j] = rng.normal() * (1.0 + static_cast<double>(j));
    double kappa = 1.7;
    ClusterBank bank = fit_kmeans(m, 1, 10, 9, kappa);
    DataStats st = data_stats(m);
    for (size_t j = 0; j < 3; ++j) {
        CHECK(bank.gaussians[0].mean[j] == doctest::Approx(st.mu[j]).epsilon(1e-12));
        CHECK(bank.gaussians[0].var[j] ==
              doctest::Approx(kappa * kappa * st.sigma[j] * st.sigma[j]).epsilon(1e-10));
    }
}

TEST_CASE("kmeans separates two blobs") {
    Matrix m = two_blobs(300, 0.3, 77);
    ClusterBank bank = fit_kmeans(m, 2, 25, 13);
    std::vector<Vec> means{bank.gaussians[0].mean, bank.gaussians[1].mean};
    std::sort(means.begin(), means.end(), [](const Vec& a, const Vec& b) { return a[0] < b[0]; });
    CHECK(std::abs(means[0][0] + 5.0) < 0.1);
    CHECK(std::abs(means[0][1]) < 0.1);
    CHECK(std::abs(means[1][0] - 5.0) < 0.1);
    CHECK(std::abs(means[1][1]) < 0.1);
}

TEST_CASE("kmeans objective non-increasing in iterations") {
    Rng rng(6);
    Matrix m(240, 4);
    for (double& v : m.data) v = rng.normal();
    double prev = std::numeric_limits<double>::infinity();
    for (int iters = 1; iters <= 6; ++iters) {
        ClusterBank bank = fit_kmeans(m, 5, iters, 31);
        double sse = kmeans_sse(m, bank);
        CHECK(sse <= prev + 1e-9);
        prev = sse;
    }
}

TEST_CASE("kmeans deterministic given seed, permutation changes labeling only") {
    Matrix m = two_blobs(150, 0.4, 88);
    ClusterBank a = fit_kmeans(m, 2, 25, 4);
    ClusterBank b = fit_kmeans(m, 2, 25, 4);
    for (int i = 0; i < 2; ++i) {
        CHECK(a.gaussians[static_cast<size_t>(i)].mean == b.gaussians[static_cast<size_t>(i)].mean);
        CHECK(a.gaussians[static_cast<size_t>(i)].var == b.gaussians[static_cast<size_t>(i)].var);
    }

    // deterministic row permutation
    Matrix perm(m.rows, m.cols);
    Rng rng(9);
    std::vector<size_t> order(m.rows);
    for (size_t i = 0; i < m.rows; ++i) order[i] = i;
    for (size_t i = m.rows; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    for (size_t i = 0; i < m.rows; ++i)
        std::copy(m.row(order[i]), m.row(order[i]) + m.cols, perm.row(i));
    ClusterBank c = fit_kmeans(perm, 2, 25, 4);
    auto sorted_means = [](const ClusterBank& bank) {
        std::vector<Vec> ms;
        for (const auto& g : bank.gaussians) ms.push_back(g.mean);
        std::sort(ms.begin(), ms.end());
        return ms;
    };
    std::vector<Vec> ma = sorted_means(a), mc = sorted_means(c);
    for (size_t i = 0; i < ma.size(); ++i)
        for (size_t j = 0; j < ma[i].size(); ++j) CHECK(std::abs(ma[i][j] - mc[i][j]) <= 1e-9);
}

TEST_CASE("kmeans input validation") {
    Matrix m(3, 2);
    CHECK_THROWS_AS(fit_kmeans(m, 4, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(fit_kmeans(Matrix{}, 1, 5, 0), std::invalid_argument);
}

TEST_CASE("assign_top1") {
    ClusterBank bank;
    bank.k = 2;
    bank.gaussians.push_back(make_diag_gaussian({1.0, 0.0}, {1.0, 1.0}));
    bank.gaussians.push_back(make_diag_gaussian({0.0, 1.0}, {1.0, 1.0}));
    CHECK(assign_top1(bank, {0.9, 0.1}).index == 0);
    CHECK(assign_top1(bank, {0.1, 0.9}).index == 1);
    CHECK_THROWS_AS(assign_top1(bank, {0.0, 0.0}), std::invalid_argument);

    ClusterBank one = make_standard_bank(2);
    CHECK(assign_top1(one, {0.3, -0.4}).index == 0);  // k = 1, even with a zero-norm mean

    // equals exhaustive argmax on random banks; invariant under positive scaling
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        int k = 1 + static_cast<int>(rng.uniform_int(0, 7));
        ClusterBank rb = random_learnable_bank(rng, k, 5, 0.0);
        Vec cond(5);
        for (double& x : cond) x = rng.normal();
        if (norm(cond) == 0.0) continue;
        Assignment got = assign_top1(rb, cond);
        int want = 0;
        double best = -2.0;
        for (int i = 0; i < k; ++i) {
            double c = cosine(rb.gaussians[static_cast<size_t>(i)].mean, cond);
            if (c > best) { best = c; want = i; }
        }
        CHECK(got.index == want);
        CHECK(got.similarity == doctest::Approx(best).epsilon(1e-12));

        Vec scaled = cond;
        for (double& x : scaled) x *= 7.5;
        CHECK(assign_top1(rb, scaled).index == want);
        ClusterBank rb2 = rb;
        for (double& x : rb2.gaussians[static_cast<size_t>(want)].mean) x *= 3.25;
        CHECK(assign_top1(rb2, cond).index == want);
    }
}

TEST_CASE("assign_mc") {
    // floor-small variances agree with top-1
    ClusterBank bank;
    bank.k = 3;
    Rng rng(23);
    for (int i = 0; i < 3; ++i) {
        Vec m(4);
        for (double& x : m) x = rng.normal();
        bank.gaussians.push_back(make_diag_gaussian(normalized(m), Vec(4, 1e-12)));
    }
    bank.init_log_std_from_vars();
    for (int rep = 0; rep < 20; ++rep) {
        Vec cond(4);
        for (double& x : cond) x = rng.normal();
        CHECK(assign_mc(bank, cond, 8, 99).index == assign_top1(bank, cond).index);
    }

    ClusterBank one = make_standard_bank(3);
    CHECK(assign_mc(one, {1.0, 0.0, 0.0}, 4, 1).index == 0);

    // deterministic given seed
    Vec cond{0.5, -0.2, 0.1, 0.9};
    Assignment a = assign_mc(bank, cond, 64, 1234);
    Assignment b = assign_mc(bank, cond, 64, 1234);
    CHECK(a.index == b.index);
    CHECK(a.similarity == b.similarity);

    // well-separated small-variance means: MC agrees with top-1 nearly always
    ClusterBank sep;
    sep.k = 2;
    sep.gaussians.push_back(make_diag_gaussian({1.0, 0.0, 0.0, 0.0}, Vec(4, 1e-4)));
    sep.gaussians.push_back(make_diag_gaussian({0.0, 1.0, 0.0, 0.0}, Vec(4, 1e-4)));
    sep.init_log_std_from_vars();
    int agree = 0;
    const int trials = 300;
    for (int i = 0; i < trials; ++i) {
        Vec c(4);
        for (double& x : c) x = rng.normal();
        if (norm(c) == 0.0) { ++agree; continue; }
        if (assign_mc(sep, c, 10000, static_cast<uint64_t>(i)).index == assign_top1(sep, c).index) ++agree;
    }
    CHECK(agree >= static_cast<int>(trials * 0.99));
}

TEST_CASE("lp_loss perfect alignment") {
    ClusterBank bank;
    bank.k = 1;
    bank.learnable = true;
    bank.xi = 0.7;
    bank.gaussians.push_back(make_diag_gaussian({0.6, 0.8}, Vec(2, 1e-12)));
    bank.init_log_std_from_vars();
    Rng rng(2);
    LpNoise noise = draw_lp_noise(4, 1, 2, rng);
    std::vector<LpItem> batch(4, LpItem{{0.6, 0.8}, 0});
    LpResult res = lp_loss(bank, batch, noise);
    CHECK(res.loss == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("lp_loss pairwise term grows with xi when clusters coincide") {
    Rng rng(3);
    Vec mean{1.0, 2.0, -1.0};
    double prev = -1e100;
    for (double xi : {0.0, 0.1, 0.5, 2.0}) {
        ClusterBank bank;
        bank.k = 2;
        bank.learnable = true;
        bank.xi = xi;
        bank.gaussians.push_back(make_diag_gaussian(mean, Vec(3, 1e-12)));
        bank.gaussians.push_back(make_diag_gaussian(mean, Vec(3, 1e-12)));
        bank.init_log_std_from_vars();
        Rng noise_rng(8);
        LpNoise noise = draw_lp_noise(2, 2, 3, noise_rng);
        std::vector<LpItem> batch{{mean, 0}, {mean, 1}};
        double loss = lp_loss(bank, batch, noise).loss;
        CHECK(loss > prev);
        prev = loss;
    }
}

TEST_CASE("lp_loss gradients match central finite differences") {
    Rng rng(29);
    for (int rep = 0; rep < 8; ++rep) {
        int k = 1 + static_cast<int>(rng.uniform_int(0, 3));
        size_t d = 2 + static_cast<size_t>(rng.uniform_int(0, 6));
        ClusterBank bank = random_learnable_bank(rng, k, d, 0.3);
        size_t B = 3;
        std::vector<LpItem> batch;
        for (size_t b = 0; b < B; ++b) {
            Vec z0(d);
            for (double& x : z0) x = rng.normal();
            batch.push_back(LpItem{normalized(z0), static_cast<int>(rng.uniform_int(0, k - 1))});
        }
        Rng noise_rng(100 + static_cast<uint64_t>(rep));
        LpNoise noise = draw_lp_noise(B, k, d, noise_rng);
        LpResult res = lp_loss(bank, batch, noise);
        CHECK(res.loss >= -1.0 - bank.xi - 1e-12);  // first term in [-1,1], pair term in [-xi, xi]
        CHECK(std::isfinite(res.loss));

        const double h = 1e-5;
        for (int i = 0; i < k; ++i) {
            for (size_t j = 0; j < d; ++j) {
                auto loss_at_mean = [&](double x) {
                    ClusterBank b2 = bank;
                    b2.gaussians[static_cast<size_t>(i)].mean[j] = x;
                    return lp_loss(b2, batch, noise).loss;
                };
                double fd = oracle::central_diff(loss_at_mean, bank.gaussians[static_cast<size_t>(i)].mean[j], h);
                double an = res.d_mean[static_cast<size_t>(i)][j];
                if (std::abs(fd) > 1e-7 || std::abs(an) > 1e-7) CHECK(oracle::rel_err(an, fd, 1e-6) <= 1e-4);

                auto loss_at_ls = [&](double x) {
                    ClusterBank b2 = bank;
                    b2.log_std[static_cast<size_t>(i)][j] = x;
                    b2.sync_vars_from_log_std();
                    return lp_loss(b2, batch, noise).loss;
                };
                double fd2 = oracle::central_diff(loss_at_ls, bank.log_std[static_cast<size_t>(i)][j], h);
                double an2 = res.d_log_std[static_cast<size_t>(i)][j];
                if (std::abs(fd2) > 1e-7 || std::abs(an2) > 1e-7) CHECK(oracle::rel_err(an2, fd2, 1e-6) <= 1e-4);
            }
        }
    }
}

TEST_CASE("lp_loss requires a learnable bank and a nonempty batch") {
    ClusterBank fixedb = make_standard_bank(2);
    Rng rng(1);
    LpNoise noise = draw_lp_noise(1, 1, 2, rng);
    CHECK_THROWS_AS(lp_loss(fixedb, {{Vec{1.0, 0.0}, 0}}, noise), std::invalid_argument);
    ClusterBank lb = random_learnable_bank(rng, 1, 2, 0.1);
    CHECK_THROWS_AS(lp_loss(lb, {}, noise), std::invalid_argument);
}

}  // TEST_SUITE
