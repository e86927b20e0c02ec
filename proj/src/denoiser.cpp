#include "embprior/denoiser.hpp"

#include <cmath>

#include "embprior/rng.hpp"

namespace embprior {

namespace {

constexpr double kLnEps = 1e-5;

void check_cfg(const DenoiserConfig& cfg) {
    if (cfg.d < 1 || cfg.hidden < 1 || cfg.depth < 0 || cfg.time_embed_dim < 2 || cfg.k < 1)
        throw std::invalid_argument("DenoiserConfig: all sizes must be positive (time_embed_dim >= 2)");
    if (cfg.time_embed_dim % 2 != 0) throw std::invalid_argument("DenoiserConfig: time_embed_dim must be even");
}

// y += W x  with W row-major (rows x cols)
void gemv_acc(const double* w, const double* x, double* y, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        const double* wr = w + i * cols;
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) s += wr[j] * x[j];
        y[i] += s;
    }
}

// y += W^T x  with W row-major (rows x cols), x has rows entries
void gemv_t_acc(const double* w, const double* x, double* y, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        const double* wr = w + i * cols;
        double xi = x[i];
        for (size_t j = 0; j < cols; ++j) y[j] += xi * wr[j];
    }
}

// dW += dy x^T
void outer_acc(const double* dy, const double* x, double* dw, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        double di = dy[i];
        double* wr = dw + i * cols;
        for (size_t j = 0; j < cols; ++j) wr[j] += di * x[j];
    }
}

}  // namespace

const ParamLayout::Entry& ParamLayout::find(const std::string& name) const {
    for (const Entry& e : entries)
        if (e.name == name) return e;
    throw std::invalid_argument("ParamLayout: unknown tensor " + name);
}

ParamLayout make_denoiser_layout(const DenoiserConfig& cfg) {
    check_cfg(cfg);
    const size_t d = static_cast<size_t>(cfg.d), h = static_cast<size_t>(cfg.hidden);
    const size_t te = static_cast<size_t>(cfg.time_embed_dim), k1 = static_cast<size_t>(cfg.k) + 1;
    ParamLayout lay;
    auto add = [&lay](const std::string& name, std::vector<size_t> shape) {
        size_t sz = 1;
        for (size_t s : shape) sz *= s;
        lay.entries.push_back({name, std::move(shape), lay.total, sz});
        lay.total += sz;
    };
    add("w_in", {h, d});
    add("b_in", {h});
    add("w_time", {h, te});
    add("b_time", {h});
    add("w_cond", {h, d});
    add("b_cond", {h});
    add("cluster_embed", {k1, h});
    for (int b = 0; b < cfg.depth; ++b) {
        std::string p = "blk" + std::to_string(b) + ".";
        add(p + "ln_g", {h});
        add(p + "ln_b", {h});
        add(p + "w1", {h, h});
        add(p + "b1", {h});
        add(p + "w2", {h, h});
        add(p + "b2", {h});
    }
    add("w_out", {d, h});
    add("b_out", {d});
    return lay;
}

DenoiserParams init_params(const DenoiserConfig& cfg, uint64_t seed) {
    DenoiserParams p;
    p.cfg = cfg;
    p.layout = make_denoiser_layout(cfg);
    p.flat.assign(p.layout.total, 0.0);
    Rng rng(seed);
    auto fill_uniform = [&](const std::string& name, size_t fan_in) {
        const ParamLayout::Entry& e = p.layout.find(name);
        double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t i = 0; i < e.size; ++i) p.flat[e.offset + i] = (2.0 * rng.uniform01() - 1.0) * s;
    };
    auto fill_normal = [&](const std::string& name, double scale) {
        const ParamLayout::Entry& e = p.layout.find(name);
        for (size_t i = 0; i < e.size; ++i) p.flat[e.offset + i] = scale * rng.normal();
    };
    auto fill_const = [&](const std::string& name, double v) {
        const ParamLayout::Entry& e = p.layout.find(name);
        for (size_t i = 0; i < e.size; ++i) p.flat[e.offset + i] = v;
    };
    fill_uniform("w_in", static_cast<size_t>(cfg.d));
    fill_uniform("w_time", static_cast<size_t>(cfg.time_embed_dim));
    fill_uniform("w_cond", static_cast<size_t>(cfg.d));
    fill_normal("cluster_embed", 0.02);
    for (int b = 0; b < cfg.depth; ++b) {
        std::string pre = "blk" + std::to_string(b) + ".";
        fill_const(pre + "ln_g", 1.0);
        fill_uniform(pre + "w1", static_cast<size_t>(cfg.hidden));
        fill_uniform(pre + "w2", static_cast<size_t>(cfg.hidden));
    }
    // w_out, b_out and all remaining biases stay zero
    return p;
}

Vec time_features(int t, int dim) {
    if (t < 1) throw std::invalid_argument("time_features: t must be >= 1");
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time_features: dim must be even and >= 2");
    int half = dim / 2;
    Vec f(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        double freq = half == 1 ? 1.0 : std::exp(-std::log(10000.0) * i / (half - 1));
        f[static_cast<size_t>(i)] = std::sin(t * freq);
        f[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    return f;
}

Vec predict_z0(const DenoiserParams& p, const Vec& z_t, int t, const Vec& cond,
               std::optional<int> c_idx, bool dropped, DenoiserCache* cache, const Vec* tfeat_in) {
    const DenoiserConfig& cfg = p.cfg;
    const size_t d = static_cast<size_t>(cfg.d), h = static_cast<size_t>(cfg.hidden);
    if (z_t.size() != d || cond.size() != d) throw std::invalid_argument("predict_z0: shape mismatch");
    if (c_idx && (*c_idx < 0 || *c_idx >= cfg.k)) throw std::invalid_argument("predict_z0: cluster index out of range");

    Vec tfeat = tfeat_in ? *tfeat_in : time_features(t, cfg.time_embed_dim);
    if (tfeat.size() != static_cast<size_t>(cfg.time_embed_dim))
        throw std::invalid_argument("predict_z0: time feature size mismatch");
    Vec cond_eff = dropped ? zeros(d) : cond;
    int row = (dropped || !c_idx) ? cfg.k : *c_idx;

    Vec h0(h, 0.0);
    gemv_acc(p.tensor("w_in"), z_t.data(), h0.data(), h, d);
    gemv_acc(p.tensor("w_time"), tfeat.data(), h0.data(), h, static_cast<size_t>(cfg.time_embed_dim));
    gemv_acc(p.tensor("w_cond"), cond_eff.data(), h0.data(), h, d);
    const double* brow = p.tensor("cluster_embed") + static_cast<size_t>(row) * h;
    const double *b_in = p.tensor("b_in"), *b_time = p.tensor("b_time"), *b_cond = p.tensor("b_cond");
    for (size_t i = 0; i < h; ++i) h0[i] += b_in[i] + b_time[i] + b_cond[i] + brow[i];

    if (cache) {
        cache->filled = true;
        cache->z_t = z_t;
        cache->tfeat = tfeat;
        cache->cond_eff = cond_eff;
        cache->cluster_row = row;
        cache->h0 = h0;
        cache->blocks.resize(static_cast<size_t>(cfg.depth));
    }

    Vec hcur = std::move(h0);
    for (int b = 0; b < cfg.depth; ++b) {
        std::string pre = "blk" + std::to_string(b) + ".";
        const double *ln_g = p.tensor(pre + "ln_g"), *ln_b = p.tensor(pre + "ln_b");
        const double *w1 = p.tensor(pre + "w1"), *b1 = p.tensor(pre + "b1");
        const double *w2 = p.tensor(pre + "w2"), *b2 = p.tensor(pre + "b2");

        double mean = 0.0;
        for (size_t i = 0; i < h; ++i) mean += hcur[i];
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (size_t i = 0; i < h; ++i) {
            double c = hcur[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(h);
        double rstd = 1.0 / std::sqrt(var + kLnEps);

        Vec xhat(h), y(h), a(h, 0.0), phi(h), u(h);
        for (size_t i = 0; i < h; ++i) {
            xhat[i] = (hcur[i] - mean) * rstd;
            y[i] = ln_g[i] * xhat[i] + ln_b[i];
        }
        for (size_t i = 0; i < h; ++i) a[i] = b1[i];
        gemv_acc(w1, y.data(), a.data(), h, h);
        for (size_t i = 0; i < h; ++i) {
            phi[i] = 0.5 * (1.0 + std::erf(a[i] * M_SQRT1_2));
            u[i] = a[i] * phi[i];
        }
        Vec hnext(h);
        for (size_t i = 0; i < h; ++i) hnext[i] = hcur[i] + b2[i];
        gemv_acc(w2, u.data(), hnext.data(), h, h);

        if (cache) {
            DenoiserCache::Block& cb = cache->blocks[static_cast<size_t>(b)];
            cb.x = hcur;
            cb.xhat = xhat;
            cb.y = y;
            cb.a = a;
            cb.phi = phi;
            cb.u = u;
            cb.h = hnext;
            cb.rstd = rstd;
        }
        hcur = std::move(hnext);
    }

    Vec out(d, 0.0);
    gemv_acc(p.tensor("w_out"), hcur.data(), out.data(), d, h);
    const double* b_out = p.tensor("b_out");
    for (size_t i = 0; i < d; ++i) out[i] += b_out[i];
    if (cache) cache->out = out;
    return out;
}

void backward_into(const DenoiserParams& p, const DenoiserCache& cache, const Vec& d_out, Vec& grad_flat) {
    const DenoiserConfig& cfg = p.cfg;
    const size_t d = static_cast<size_t>(cfg.d), h = static_cast<size_t>(cfg.hidden);
    if (!cache.filled || cache.blocks.size() != static_cast<size_t>(cfg.depth) || cache.z_t.size() != d)
        throw std::invalid_argument("backward_into: stale or mismatched cache");
    if (d_out.size() != d) throw std::invalid_argument("backward_into: d_out shape mismatch");
    if (grad_flat.size() != p.layout.total) throw std::invalid_argument("backward_into: gradient buffer size mismatch");

    auto g = [&](const std::string& name) { return grad_flat.data() + p.layout.find(name).offset; };

    const Vec& h_last = cfg.depth > 0 ? cache.blocks.back().h : cache.h0;
    outer_acc(d_out.data(), h_last.data(), g("w_out"), d, h);
    {
        double* gb = g("b_out");
        for (size_t i = 0; i < d; ++i) gb[i] += d_out[i];
    }
    Vec dh(h, 0.0);
    gemv_t_acc(p.tensor("w_out"), d_out.data(), dh.data(), d, h);

    for (int b = cfg.depth - 1; b >= 0; --b) {
        const DenoiserCache::Block& cb = cache.blocks[static_cast<size_t>(b)];
        std::string pre = "blk" + std::to_string(b) + ".";
        const double *ln_g = p.tensor(pre + "ln_g"), *w1 = p.tensor(pre + "w1"), *w2 = p.tensor(pre + "w2");

        // h = x + W2 u + b2
        outer_acc(dh.data(), cb.u.data(), g(pre + "w2"), h, h);
        {
            double* gb = g(pre + "b2");
            for (size_t i = 0; i < h; ++i) gb[i] += dh[i];
        }
        Vec du(h, 0.0);
        gemv_t_acc(w2, dh.data(), du.data(), h, h);

        // u = a * Phi(a); du/da = Phi(a) + a * pdf(a)
        Vec da(h);
        for (size_t i = 0; i < h; ++i) {
            double pdf = std::exp(-0.5 * cb.a[i] * cb.a[i]) * (1.0 / std::sqrt(2.0 * M_PI));
            da[i] = du[i] * (cb.phi[i] + cb.a[i] * pdf);
        }

        // a = W1 y + b1
        outer_acc(da.data(), cb.y.data(), g(pre + "w1"), h, h);
        {
            double* gb = g(pre + "b1");
            for (size_t i = 0; i < h; ++i) gb[i] += da[i];
        }
        Vec dy(h, 0.0);
        gemv_t_acc(w1, da.data(), dy.data(), h, h);

        // y = ln_g * xhat + ln_b
        Vec dxhat(h);
        {
            double *gg = g(pre + "ln_g"), *gb = g(pre + "ln_b");
            for (size_t i = 0; i < h; ++i) {
                gg[i] += dy[i] * cb.xhat[i];
                gb[i] += dy[i];
                dxhat[i] = dy[i] * ln_g[i];
            }
        }
        // layer norm backward (population variance over the hidden axis)
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (size_t i = 0; i < h; ++i) {
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * cb.xhat[i];
        }
        mean_dxhat /= static_cast<double>(h);
        mean_dxhat_xhat /= static_cast<double>(h);
        for (size_t i = 0; i < h; ++i)
            dh[i] += cb.rstd * (dxhat[i] - mean_dxhat - cb.xhat[i] * mean_dxhat_xhat);  // += keeps the skip path
    }

    // h0 = W_in z + W_time tf + W_cond c + biases + cluster row
    outer_acc(dh.data(), cache.z_t.data(), g("w_in"), h, d);
    outer_acc(dh.data(), cache.tfeat.data(), g("w_time"), h, static_cast<size_t>(cfg.time_embed_dim));
    outer_acc(dh.data(), cache.cond_eff.data(), g("w_cond"), h, d);
    double *gb_in = g("b_in"), *gb_time = g("b_time"), *gb_cond = g("b_cond");
    double* gtab = g("cluster_embed") + static_cast<size_t>(cache.cluster_row) * h;
    for (size_t i = 0; i < h; ++i) {
        gb_in[i] += dh[i];
        gb_time[i] += dh[i];
        gb_cond[i] += dh[i];
        gtab[i] += dh[i];
    }
}

Vec backward(const DenoiserParams& p, const DenoiserCache& cache, const Vec& d_out) {
    Vec grads(p.layout.total, 0.0);
    backward_into(p, cache, d_out, grads);
    return grads;
}

}  // namespace embprior
