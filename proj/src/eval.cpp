#include "embprior/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "embprior/parallel.hpp"

namespace embprior {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
        os << content;
        if (!os) throw std::runtime_error("write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

Matrix take_rows(const Matrix& m, size_t begin, size_t end) {
    Matrix out(end - begin, m.cols);
    std::copy(m.row(begin), m.row(begin) + (end - begin) * m.cols, out.data.begin());
    return out;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
    Matrix z0s, conds;
    if (cfg.synthetic) {
        EmbeddingDataset ds = gen_synthetic(*cfg.synthetic);
        z0s = std::move(ds.image_embeddings);
        conds = std::move(ds.cond_embeddings);
    } else {
        std::ifstream is(*cfg.manifest);
        if (!is) throw std::runtime_error("prepare_data: cannot open manifest " + *cfg.manifest);
        json j;
        is >> j;
        fs::path base = fs::path(*cfg.manifest).parent_path();
        auto resolve = [&base](const std::string& p) {
            fs::path fp(p);
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };
        z0s = read_emb(resolve(j.at("image_file").get<std::string>()));
        conds = read_emb(resolve(j.at("cond_file").get<std::string>()));
    }
    if (z0s.rows != conds.rows || z0s.cols != conds.cols)
        throw std::runtime_error("prepare_data: image/cond shape mismatch");
    if (z0s.cols != static_cast<size_t>(cfg.train.d))
        throw std::runtime_error("prepare_data: data dimension does not match train.d");
    size_t n = z0s.rows;
    size_t n_eval = std::max<size_t>(1, static_cast<size_t>(static_cast<double>(n) * cfg.eval_fraction));
    if (n_eval >= n) throw std::runtime_error("prepare_data: eval fraction leaves no training rows");
    size_t n_train = n - n_eval;

    PreparedData out;
    out.train_z0 = take_rows(z0s, 0, n_train);
    out.train_cond = take_rows(conds, 0, n_train);
    out.eval_z0 = take_rows(z0s, n_train, n);
    out.eval_cond = take_rows(conds, n_train, n);
    out.stats = data_stats(out.train_z0);
    return out;
}

ClusterBank build_bank(const ExperimentConfig& cfg, const PreparedData& data) {
    if (cfg.baseline) return make_standard_bank(static_cast<size_t>(cfg.train.d));
    const Matrix& source = cfg.cluster.source == "text" ? data.train_cond : data.train_z0;
    return fit_kmeans(source, cfg.train.k, cfg.cluster.iters, cfg.cluster_seed(), cfg.train.kappa);
}

TrainState build_initial_state(const ExperimentConfig& cfg, const PreparedData& data) {
    ExperimentConfig effective = cfg;
    if (effective.baseline) {
        effective.train.k = 1;
        effective.train.learnable_bank = false;
    }
    ClusterBank bank = build_bank(effective, data);
    return make_train_state(effective.train, std::move(bank), data.stats.mu, data.stats.sigma);
}

void train_model(TrainState& state, const ExperimentConfig& cfg, const PreparedData& data,
                 const std::string& log_path) {
    std::ofstream log;
    if (!log_path.empty()) {
        bool append = state.step > 0 && fs::exists(log_path);
        log.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!log) throw std::runtime_error("train_model: cannot open log " + log_path);
        if (!append) log << "step,loss,kl_terminal,lp_loss,wall_ms\n";
    }
    int remaining = cfg.train.steps - static_cast<int>(state.step);
    run_training(state, data.train_z0, data.train_cond, std::max(0, remaining),
                 [&](int64_t step, const StepMetrics& m) {
                     if (log.is_open())
                         log << step << ',' << fmt_double(m.loss) << ',' << fmt_double(m.kl_terminal) << ','
                             << fmt_double(m.lp_loss) << ',' << fmt_double(m.wall_ms) << '\n';
                 });
}

EvalReport eval_similarity(const TrainState& state, const Matrix& eval_z0, const Matrix& eval_cond,
                           const SampleConfig& cfg, int threads) {
    if (eval_z0.rows == 0 || eval_z0.rows != eval_cond.rows)
        throw std::invalid_argument("eval_similarity: bad eval split");
    if (eval_cond.cols != static_cast<size_t>(state.cfg.d))
        throw std::invalid_argument("eval_similarity: dimension mismatch with checkpoint");
    const size_t n = eval_z0.rows;
    EvalReport report;
    report.cosines.assign(n, 0.0);
    report.cluster_counts.assign(static_cast<size_t>(state.bank.k), 0);

    std::vector<int> ts = stride_schedule(state.cfg.T, cfg.steps);
    const size_t n_steps = ts.size();

    const int nchunks = static_cast<int>(std::min<size_t>(64, n));
    std::vector<std::vector<int64_t>> chunk_counts(static_cast<size_t>(nchunks),
                                                   std::vector<int64_t>(static_cast<size_t>(state.bank.k), 0));
    std::vector<Vec> chunk_step_sums(static_cast<size_t>(nchunks), Vec(n_steps, 0.0));

    parallel_chunks(nchunks, resolve_threads(threads), [&](int c) {
        size_t begin = n * static_cast<size_t>(c) / static_cast<size_t>(nchunks);
        size_t end = n * (static_cast<size_t>(c) + 1) / static_cast<size_t>(nchunks);
        for (size_t i = begin; i < end; ++i) {
            Rng rng(split_seed(cfg.seed, i));
            SampleTrace trace = sample_prior(state, eval_cond.row_vec(i), cfg, rng);
            Vec z0 = eval_z0.row_vec(i);
            report.cosines[i] = cosine(trace.z0_hat, z0);
            chunk_counts[static_cast<size_t>(c)][static_cast<size_t>(trace.cluster)] += 1;
            auto sims = trajectory_similarity(trace.trajectory, z0);
            for (size_t s = 0; s < n_steps; ++s) chunk_step_sums[static_cast<size_t>(c)][s] += sims[s].second;
        }
    });

    Vec step_sums(n_steps, 0.0);
    for (int c = 0; c < nchunks; ++c) {
        for (size_t s = 0; s < n_steps; ++s) step_sums[s] += chunk_step_sums[static_cast<size_t>(c)][s];
        for (int k = 0; k < state.bank.k; ++k)
            report.cluster_counts[static_cast<size_t>(k)] += chunk_counts[static_cast<size_t>(c)][static_cast<size_t>(k)];
    }
    report.step_mean_cos.reserve(n_steps);
    for (size_t s = 0; s < n_steps; ++s)
        report.step_mean_cos.emplace_back(ts[s], step_sums[s] / static_cast<double>(n));

    Vec finite;
    finite.reserve(n);
    for (double v : report.cosines)
        if (std::isfinite(v)) finite.push_back(v);
    if (finite.empty()) {
        report.mean = report.median = report.stddev = std::numeric_limits<double>::quiet_NaN();
    } else {
        double sum = 0.0;
        for (double v : finite) sum += v;
        report.mean = sum / static_cast<double>(finite.size());
        double var = 0.0;
        for (double v : finite) var += (v - report.mean) * (v - report.mean);
        report.stddev = finite.size() > 1 ? std::sqrt(var / static_cast<double>(finite.size() - 1)) : 0.0;
        std::sort(finite.begin(), finite.end());
        size_t m = finite.size() / 2;
        report.median = finite.size() % 2 == 1 ? finite[m] : 0.5 * (finite[m - 1] + finite[m]);
    }
    return report;
}

std::vector<int64_t> cluster_freq(const TrainState& state, const Matrix& eval_cond) {
    if (eval_cond.rows == 0) throw std::invalid_argument("cluster_freq: empty eval set");
    std::vector<int64_t> counts(static_cast<size_t>(state.bank.k), 0);
    for (size_t i = 0; i < eval_cond.rows; ++i)
        counts[static_cast<size_t>(assign_top1(state.bank, eval_cond.row_vec(i)).index)] += 1;
    return counts;
}

void write_cosines_csv(const EvalReport& report, const std::string& path) {
    std::string out = "index,cosine\n";
    for (size_t i = 0; i < report.cosines.size(); ++i)
        out += std::to_string(i) + "," + fmt_double(report.cosines[i]) + "\n";
    write_text_atomic(path, out);
}

void write_eval_report_json(const EvalReport& report, const std::string& path) {
    json steps = json::array();
    for (const auto& [t, c] : report.step_mean_cos) steps.push_back(json{{"t", t}, {"mean_cos", c}});
    json j{{"count", report.cosines.size()}, {"mean", report.mean},
           {"median", report.median},       {"stddev", report.stddev},
           {"cluster_counts", report.cluster_counts}, {"step_mean_cos", steps}};
    write_text_atomic(path, j.dump(2) + "\n");
}

void write_step_trace_csv(const EvalReport& report, const std::string& path) {
    std::string out = "t,mean_cos\n";
    for (const auto& [t, c] : report.step_mean_cos) out += std::to_string(t) + "," + fmt_double(c) + "\n";
    write_text_atomic(path, out);
}

void write_cluster_freq_csv(const std::vector<int64_t>& counts, const std::string& path) {
    std::vector<size_t> order(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (counts[a] != counts[b]) return counts[a] > counts[b];
        return a < b;
    });
    std::string out = "rank,cluster_index,count\n";
    for (size_t r = 0; r < order.size(); ++r)
        out += std::to_string(r) + "," + std::to_string(order[r]) + "," + std::to_string(counts[order[r]]) + "\n";
    write_text_atomic(path, out);
}

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("fnv1a_file: cannot open " + path);
    char buf[65536];
    uint64_t h = 14695981039346656037ULL;
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a(buf, static_cast<size_t>(is.gcount()), h);
    }
    return h;
}

void write_run_manifest(const ExperimentConfig& cfg, const std::string& path, double wall_ms) {
    json echoed = experiment_config_to_json(cfg);
    std::string cfg_dump = echoed.dump();
    uint64_t h = fnv1a(cfg_dump.data(), cfg_dump.size());
    if (cfg.manifest) {
        h = fnv1a_file(*cfg.manifest) ^ h;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    int64_t unix_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
    json j{{"config", echoed},
           {"inputs_hash", std::string(hex)},
           {"timestamp", json{{"unix_ms", unix_ms}, {"wall_ms", wall_ms}}}};
    write_text_atomic(path, j.dump(2) + "\n");
}

std::vector<SweepCell> sweep_k(const ExperimentConfig& base, const std::vector<int>& k_list,
                               const std::vector<bool>& learnable_flags) {
    std::vector<SweepCell> cells;
    for (int k : k_list) {
        for (bool learnable : learnable_flags) {
            SweepCell cell;
            cell.k = k;
            cell.learnable = learnable;
            try {
                ExperimentConfig cfg = base;
                cfg.baseline = false;
                cfg.train.k = k;
                cfg.train.learnable_bank = learnable;
                cfg.out_dir = (fs::path(base.out_dir) /
                               ("k" + std::to_string(k) + (learnable ? "_learnable" : "_fixed")))
                                  .string();
                RunOutputs out = run_experiment(cfg);
                cell.status = "ok";
                cell.mean_cos = out.report.mean;
                cell.median_cos = out.report.median;
                cell.std_cos = out.report.stddev;
            } catch (const std::exception& e) {
                cell.status = std::string("error: ") + e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path) {
    std::string out = "k,learnable,status,mean_cos,median_cos,std_cos\n";
    for (const SweepCell& c : cells) {
        std::string status = c.status;
        std::replace(status.begin(), status.end(), ',', ';');
        out += std::to_string(c.k) + "," + (c.learnable ? "true" : "false") + "," + status + "," +
               fmt_double(c.mean_cos) + "," + fmt_double(c.median_cos) + "," + fmt_double(c.std_cos) + "\n";
    }
    write_text_atomic(path, out);
}

RunOutputs run_experiment(const ExperimentConfig& cfg_in) {
    auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = cfg_in;
    if (cfg.baseline) {
        cfg.train.k = 1;
        cfg.train.learnable_bank = false;
    }
    fs::create_directories(cfg.out_dir);
    PreparedData data = prepare_data(cfg);
    RunOutputs out{build_initial_state(cfg, data), {}};
    train_model(out.state, cfg, data, (fs::path(cfg.out_dir) / "train_log.csv").string());
    save_checkpoint(out.state, (fs::path(cfg.out_dir) / "model.ckpt").string());
    out.report = eval_similarity(out.state, data.eval_z0, data.eval_cond, cfg.sample, cfg.train.threads);
    write_cosines_csv(out.report, (fs::path(cfg.out_dir) / "cosines.csv").string());
    write_eval_report_json(out.report, (fs::path(cfg.out_dir) / "eval_report.json").string());
    write_step_trace_csv(out.report, (fs::path(cfg.out_dir) / "step_trace.csv").string());
    write_cluster_freq_csv(cluster_freq(out.state, data.eval_cond),
                           (fs::path(cfg.out_dir) / "cluster_freq.csv").string());
    double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(cfg, (fs::path(cfg.out_dir) / "run_manifest.json").string(), wall_ms);
    return out;
}

}  // namespace embprior
