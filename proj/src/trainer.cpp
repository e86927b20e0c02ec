#include "embprior/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "embprior/parallel.hpp"

namespace embprior {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
    if (cfg.T < 1) throw std::invalid_argument("TrainConfig: T must be >= 1");
    if (cfg.batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (cfg.steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (!(cfg.drop_prob >= 0.0 && cfg.drop_prob < 1.0)) throw std::invalid_argument("TrainConfig: drop_prob must be in [0,1)");
    if (cfg.k < 1) throw std::invalid_argument("TrainConfig: k must be >= 1");
    if (cfg.xi < 0.0) throw std::invalid_argument("TrainConfig: xi must be >= 0");
    if (!(cfg.kappa > 0.0)) throw std::invalid_argument("TrainConfig: kappa must be positive");
    if (cfg.grad_chunks < 1) throw std::invalid_argument("TrainConfig: grad_chunks must be >= 1");
    if (!(cfg.beta_start > 0.0 && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0))
        throw std::invalid_argument("TrainConfig: invalid beta range");
}

void TrainState::rebuild_cluster_procs() {
    cluster_procs.clear();
    cluster_procs.reserve(static_cast<size_t>(bank.k));
    for (int c = 0; c < bank.k; ++c) {
        const DiagGaussian& g = bank.gaussians[static_cast<size_t>(c)];
        cluster_procs.push_back(make_shifted_process(schedule, g.mean, g.var, cfg.kappa));
    }
}

TrainState make_train_state(const TrainConfig& cfg, ClusterBank bank, Vec data_mu, Vec data_sigma) {
    validate(cfg);
    if (bank.k != cfg.k) throw std::invalid_argument("make_train_state: bank k does not match config");
    if (bank.dim() != static_cast<size_t>(cfg.d)) throw std::invalid_argument("make_train_state: bank dimension mismatch");
    if (data_mu.size() != static_cast<size_t>(cfg.d) || data_sigma.size() != data_mu.size())
        throw std::invalid_argument("make_train_state: data stats dimension mismatch");
    TrainState st;
    st.cfg = cfg;
    st.schedule = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    st.bank = std::move(bank);
    st.bank.learnable = cfg.learnable_bank;
    st.bank.xi = cfg.xi;
    if (st.bank.log_std.size() != static_cast<size_t>(st.bank.k)) st.bank.init_log_std_from_vars();
    st.params = init_params(cfg.denoiser_config(), split_seed(cfg.seed, 0));
    st.rng = Rng(split_seed(cfg.seed, 1));
    st.data_mu = std::move(data_mu);
    st.data_sigma = std::move(data_sigma);
    st.time_table.reserve(static_cast<size_t>(cfg.T));
    for (int t = 1; t <= cfg.T; ++t) st.time_table.push_back(time_features(t, cfg.time_embed_dim));
    st.rebuild_cluster_procs();
    return st;
}

ElboTerm elbo_term(const ShiftedProcess& proc, const Vec& z0, const Vec& zhat0, int t) {
    check_same_dim(z0, zhat0, "elbo_term");
    check_same_dim(z0, proc.mu, "elbo_term");
    if (t < 1 || t > proc.T()) throw std::invalid_argument("elbo_term: timestep out of range");
    const size_t d = z0.size();
    ElboTerm out;
    out.d_zhat0.assign(d, 0.0);
    if (t >= 2) {
        PosteriorCoeffs c = posterior_coeffs(proc, t);
        double eta2 = c.eta * c.eta;
        for (size_t j = 0; j < d; ++j) {
            double lambda = c.lambda_scale * proc.var[j];
            double diff = z0[j] - zhat0[j];
            out.loss += 0.5 * eta2 * diff * diff / lambda;
            out.d_zhat0[j] = eta2 * (zhat0[j] - z0[j]) / lambda;
        }
    } else {
        for (size_t j = 0; j < d; ++j) {
            double v = kNllVarFloor * proc.var[j];
            double diff = z0[j] - zhat0[j];
            out.loss += 0.5 * (std::log(2.0 * M_PI * v) + diff * diff / v);
            out.d_zhat0[j] = (zhat0[j] - z0[j]) / v;
        }
    }
    return out;
}

ElboResult loss_elbo(const ShiftedProcess& proc, const DenoiserParams& params, const Vec& z0,
                     const Vec& cond, std::optional<int> c_idx, int t, const Vec& noise, bool dropped,
                     const Vec* tfeat) {
    ElboResult res;
    res.z_t = sample(forward_marginal(proc, z0, t), noise);
    res.zhat0 = predict_z0(params, res.z_t, t, cond, c_idx, dropped, &res.cache, tfeat);
    ElboTerm term = elbo_term(proc, z0, res.zhat0, t);
    res.loss = term.loss;
    res.d_zhat0 = std::move(term.d_zhat0);
    return res;
}

SimpleLoss loss_simple(const Vec& z0, const Vec& zhat0) {
    check_same_dim(z0, zhat0, "loss_simple");
    const size_t d = z0.size();
    SimpleLoss out;
    out.d_zhat0.assign(d, 0.0);
    for (size_t j = 0; j < d; ++j) {
        double diff = zhat0[j] - z0[j];
        out.loss += diff * diff / static_cast<double>(d);
        out.d_zhat0[j] = 2.0 * diff / static_cast<double>(d);
    }
    return out;
}

StepMetrics train_step(TrainState& state, const std::vector<BatchItem>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& cfg = state.cfg;
    const size_t B = batch.size();
    const size_t d = static_cast<size_t>(cfg.d);

    // fixed draw order: timesteps, drop flags, per-item noise, then bank noise
    std::vector<int> ts(B);
    std::vector<char> dropped(B);
    std::vector<Vec> noise(B, Vec(d));
    for (size_t i = 0; i < B; ++i) ts[i] = static_cast<int>(state.rng.uniform_int(1, cfg.T));
    for (size_t i = 0; i < B; ++i) dropped[i] = state.rng.bernoulli(cfg.drop_prob) ? 1 : 0;
    for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < d; ++j) noise[i][j] = state.rng.normal();
    LpNoise lp_noise;
    if (cfg.learnable_bank) lp_noise = draw_lp_noise(B, state.bank.k, d, state.rng);

    std::vector<int> clusters(B);
    for (size_t i = 0; i < B; ++i) clusters[i] = assign_top1(state.bank, batch[i].cond).index;

    // per-item losses and gradients, chunked for a reduction order that does
    // not depend on the number of worker threads
    const int nchunks = static_cast<int>(std::min<size_t>(static_cast<size_t>(cfg.grad_chunks), B));
    std::vector<Vec> chunk_grads(static_cast<size_t>(nchunks), Vec(state.params.layout.total, 0.0));
    std::vector<double> chunk_loss(static_cast<size_t>(nchunks), 0.0);
    std::vector<double> chunk_kl(static_cast<size_t>(nchunks), 0.0);
    const double inv_b = 1.0 / static_cast<double>(B);

    parallel_chunks(nchunks, resolve_threads(cfg.threads), [&](int c) {
        size_t begin = B * static_cast<size_t>(c) / static_cast<size_t>(nchunks);
        size_t end = B * (static_cast<size_t>(c) + 1) / static_cast<size_t>(nchunks);
        DenoiserCache cache;
        for (size_t i = begin; i < end; ++i) {
            const ShiftedProcess& proc = state.proc_for(clusters[i]);
            const Vec& tfeat = state.time_table[static_cast<size_t>(ts[i] - 1)];
            Vec z_t = sample(forward_marginal(proc, batch[i].z0, ts[i]), noise[i]);
            Vec zhat0 = predict_z0(state.params, z_t, ts[i], batch[i].cond, clusters[i],
                                   dropped[i] != 0, &cache, &tfeat);
            Vec d_out;
            double item_loss;
            if (cfg.loss_mode == LossMode::Elbo) {
                ElboTerm term = elbo_term(proc, batch[i].z0, zhat0, ts[i]);
                item_loss = term.loss;
                d_out = std::move(term.d_zhat0);
            } else {
                SimpleLoss sl = loss_simple(batch[i].z0, zhat0);
                item_loss = sl.loss;
                d_out = std::move(sl.d_zhat0);
            }
            for (double& v : d_out) v *= inv_b;
            backward_into(state.params, cache, d_out, chunk_grads[static_cast<size_t>(c)]);
            chunk_loss[static_cast<size_t>(c)] += item_loss;
            chunk_kl[static_cast<size_t>(c)] += kl_terminal(proc, batch[i].z0, proc.initial());
        }
    });

    Vec grads(state.params.layout.total, 0.0);
    double loss_sum = 0.0, kl_sum = 0.0;
    for (int c = 0; c < nchunks; ++c) {
        const Vec& g = chunk_grads[static_cast<size_t>(c)];
        for (size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
        loss_sum += chunk_loss[static_cast<size_t>(c)];
        kl_sum += chunk_kl[static_cast<size_t>(c)];
    }

    AdamwConfig theta_opt{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
    adamw_update(state.params.flat, grads, state.theta_moments, theta_opt);

    StepMetrics metrics;
    metrics.loss = loss_sum * inv_b;
    metrics.kl_terminal = kl_sum * inv_b;

    if (cfg.learnable_bank) {
        std::vector<LpItem> lp_batch(B);
        for (size_t i = 0; i < B; ++i) lp_batch[i] = LpItem{batch[i].z0, clusters[i]};
        LpResult lp = lp_loss(state.bank, lp_batch, lp_noise);
        metrics.lp_loss = lp.loss;

        const size_t kd = static_cast<size_t>(state.bank.k) * d;
        Vec bank_flat(2 * kd), bank_grads(2 * kd);
        for (int ci = 0; ci < state.bank.k; ++ci) {
            for (size_t j = 0; j < d; ++j) {
                size_t off = static_cast<size_t>(ci) * d + j;
                bank_flat[off] = state.bank.gaussians[static_cast<size_t>(ci)].mean[j];
                bank_flat[kd + off] = state.bank.log_std[static_cast<size_t>(ci)][j];
                bank_grads[off] = lp.d_mean[static_cast<size_t>(ci)][j];
                bank_grads[kd + off] = lp.d_log_std[static_cast<size_t>(ci)][j];
            }
        }
        // no decay on the bank: Eq-style pull/repel losses are its only
        // objective and decay would drag the means off the data shell
        AdamwConfig bank_opt{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, 0.0};
        adamw_update(bank_flat, bank_grads, state.bank_moments, bank_opt);
        for (int ci = 0; ci < state.bank.k; ++ci) {
            for (size_t j = 0; j < d; ++j) {
                size_t off = static_cast<size_t>(ci) * d + j;
                state.bank.gaussians[static_cast<size_t>(ci)].mean[j] = bank_flat[off];
                state.bank.log_std[static_cast<size_t>(ci)][j] = bank_flat[kd + off];
            }
        }
        state.bank.sync_vars_from_log_std();
        state.rebuild_cluster_procs();
    }

    state.step += 1;
    metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

void run_training(TrainState& state, const Matrix& z0s, const Matrix& conds, int steps,
                  const std::function<void(int64_t, const StepMetrics&)>& on_step) {
    if (z0s.rows == 0 || z0s.rows != conds.rows) throw std::invalid_argument("run_training: bad dataset shape");
    if (z0s.cols != static_cast<size_t>(state.cfg.d) || conds.cols != z0s.cols)
        throw std::invalid_argument("run_training: dataset dimension mismatch");
    std::vector<BatchItem> batch(static_cast<size_t>(state.cfg.batch));
    for (int s = 0; s < steps; ++s) {
        for (auto& item : batch) {
            size_t idx = static_cast<size_t>(state.rng.uniform_int(0, static_cast<int64_t>(z0s.rows) - 1));
            item.z0 = z0s.row_vec(idx);
            item.cond = conds.row_vec(idx);
        }
        StepMetrics m = train_step(state, batch);
        if (on_step) on_step(state.step, m);
    }
}

// ---------------------------------------------------------------------------
// checkpoint I/O

namespace {

constexpr char kMagic[7] = {'S', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_blob(std::ostream& os, const Vec& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vec read_blob(std::istream& is, size_t count) {
    Vec v(count);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

json config_to_json(const TrainConfig& c) {
    return json{{"T", c.T},
                {"batch", c.batch},
                {"steps", c.steps},
                {"lr", c.lr},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"weight_decay", c.weight_decay},
                {"drop_prob", c.drop_prob},
                {"loss_mode", c.loss_mode == LossMode::Elbo ? "elbo" : "simple"},
                {"k", c.k},
                {"learnable_bank", c.learnable_bank},
                {"xi", c.xi},
                {"kappa", c.kappa},
                {"seed", c.seed},
                {"beta_start", c.beta_start},
                {"beta_end", c.beta_end},
                {"d", c.d},
                {"hidden", c.hidden},
                {"depth", c.depth},
                {"time_embed_dim", c.time_embed_dim},
                {"threads", c.threads},
                {"grad_chunks", c.grad_chunks}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.T = j.at("T").get<int>();
    c.batch = j.at("batch").get<int>();
    c.steps = j.at("steps").get<int>();
    c.lr = j.at("lr").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.drop_prob = j.at("drop_prob").get<double>();
    std::string mode = j.at("loss_mode").get<std::string>();
    if (mode == "elbo") c.loss_mode = LossMode::Elbo;
    else if (mode == "simple") c.loss_mode = LossMode::Simple;
    else throw std::runtime_error("checkpoint: unknown loss_mode " + mode);
    c.k = j.at("k").get<int>();
    c.learnable_bank = j.at("learnable_bank").get<bool>();
    c.xi = j.at("xi").get<double>();
    c.kappa = j.at("kappa").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    c.d = j.at("d").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.depth = j.at("depth").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.threads = j.at("threads").get<int>();
    c.grad_chunks = j.at("grad_chunks").get<int>();
    return c;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    const size_t d = static_cast<size_t>(state.cfg.d);
    const size_t kd = static_cast<size_t>(state.bank.k) * d;

    json tensors = json::array();
    std::vector<std::pair<std::string, Vec>> blobs;
    auto add = [&](const std::string& name, std::vector<size_t> shape, Vec data) {
        tensors.push_back(json{{"name", name}, {"shape", shape}});
        blobs.emplace_back(name, std::move(data));
    };
    for (const auto& e : state.params.layout.entries)
        add("denoiser." + e.name, e.shape,
            Vec(state.params.flat.begin() + static_cast<std::ptrdiff_t>(e.offset),
                state.params.flat.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size)));
    {
        Vec means(kd), log_std(kd), vars(kd);
        for (int c = 0; c < state.bank.k; ++c)
            for (size_t j = 0; j < d; ++j) {
                size_t off = static_cast<size_t>(c) * d + j;
                means[off] = state.bank.gaussians[static_cast<size_t>(c)].mean[j];
                log_std[off] = state.bank.log_std[static_cast<size_t>(c)][j];
                vars[off] = state.bank.gaussians[static_cast<size_t>(c)].var[j];
            }
        add("bank.means", {static_cast<size_t>(state.bank.k), d}, std::move(means));
        add("bank.log_std", {static_cast<size_t>(state.bank.k), d}, std::move(log_std));
        add("bank.vars", {static_cast<size_t>(state.bank.k), d}, std::move(vars));
    }
    add("schedule.betas", {static_cast<size_t>(state.schedule.T)}, state.schedule.betas);
    add("adam_theta.m", {state.theta_moments.m.size()}, state.theta_moments.m);
    add("adam_theta.v", {state.theta_moments.v.size()}, state.theta_moments.v);
    add("adam_bank.m", {state.bank_moments.m.size()}, state.bank_moments.m);
    add("adam_bank.v", {state.bank_moments.v.size()}, state.bank_moments.v);

    json header{{"config", config_to_json(state.cfg)},
                {"data_stats", json{{"mu", state.data_mu}, {"sigma", state.data_sigma}}},
                {"step", state.step},
                {"rng_state", state.rng.serialize()},
                {"adam_theta_step", state.theta_moments.step},
                {"adam_bank_step", state.bank_moments.step},
                {"tensors", tensors}};
    std::string header_str = header.dump();

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
        os.write(kMagic, sizeof(kMagic));
        write_u32(os, kVersion);
        write_u32(os, static_cast<uint32_t>(header_str.size()));
        os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
        for (const auto& [name, data] : blobs) write_blob(os, data);
        if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(kMagic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint32_t header_len = read_u32(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), header_len);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: corrupt header: ") + e.what());
    }

    TrainState st;
    st.cfg = config_from_json(header.at("config"));
    validate(st.cfg);
    const size_t d = static_cast<size_t>(st.cfg.d);
    st.data_mu = header.at("data_stats").at("mu").get<Vec>();
    st.data_sigma = header.at("data_stats").at("sigma").get<Vec>();
    st.step = header.at("step").get<int64_t>();
    st.rng = Rng(0);
    st.rng.deserialize(header.at("rng_state").get<std::string>());
    st.theta_moments.step = header.at("adam_theta_step").get<int64_t>();
    st.bank_moments.step = header.at("adam_bank_step").get<int64_t>();

    std::map<std::string, Vec> blobs;
    for (const auto& t : header.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        size_t count = 1;
        for (size_t s : t.at("shape").get<std::vector<size_t>>()) count *= s;
        blobs[name] = read_blob(is, count);
    }

    st.params.cfg = st.cfg.denoiser_config();
    st.params.layout = make_denoiser_layout(st.params.cfg);
    st.params.flat.assign(st.params.layout.total, 0.0);
    for (const auto& e : st.params.layout.entries) {
        auto it = blobs.find("denoiser." + e.name);
        if (it == blobs.end() || it->second.size() != e.size)
            throw std::runtime_error("checkpoint: missing or misshapen tensor denoiser." + e.name);
        std::copy(it->second.begin(), it->second.end(), st.params.flat.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }

    const Vec& means = blobs.at("bank.means");
    const Vec& log_std = blobs.at("bank.log_std");
    const Vec& vars = blobs.at("bank.vars");
    const size_t kd = static_cast<size_t>(st.cfg.k) * d;
    if (means.size() != kd || log_std.size() != kd || vars.size() != kd)
        throw std::runtime_error("checkpoint: bank tensor shape mismatch");
    st.bank.k = st.cfg.k;
    st.bank.learnable = st.cfg.learnable_bank;
    st.bank.xi = st.cfg.xi;
    st.bank.kappa = st.cfg.kappa;
    for (int c = 0; c < st.cfg.k; ++c) {
        Vec m(d), v(d), ls(d);
        for (size_t j = 0; j < d; ++j) {
            m[j] = means[static_cast<size_t>(c) * d + j];
            v[j] = vars[static_cast<size_t>(c) * d + j];
            ls[j] = log_std[static_cast<size_t>(c) * d + j];
        }
        st.bank.gaussians.push_back(make_diag_gaussian(std::move(m), std::move(v)));
        st.bank.log_std.push_back(std::move(ls));
    }

    st.schedule = make_schedule(blobs.at("schedule.betas"));
    if (st.schedule.T != st.cfg.T) throw std::runtime_error("checkpoint: schedule length does not match config");
    st.theta_moments.m = blobs.at("adam_theta.m");
    st.theta_moments.v = blobs.at("adam_theta.v");
    st.bank_moments.m = blobs.at("adam_bank.m");
    st.bank_moments.v = blobs.at("adam_bank.v");
    if (!st.theta_moments.m.empty() && st.theta_moments.m.size() != st.params.flat.size())
        throw std::runtime_error("checkpoint: optimizer state shape mismatch");

    st.time_table.reserve(static_cast<size_t>(st.cfg.T));
    for (int t = 1; t <= st.cfg.T; ++t) st.time_table.push_back(time_features(t, st.cfg.time_embed_dim));
    st.rebuild_cluster_procs();
    return st;
}

}  // namespace embprior
