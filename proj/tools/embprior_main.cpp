// Experiment CLI: data generation, cluster fitting, training, sampling and
// the evaluation reports, all seedable and config-driven.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "embprior/eval.hpp"

namespace fs = std::filesystem;
using namespace embprior;

namespace {

struct Overrides {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed;
    std::optional<int> steps;
    std::optional<double> guidance;
    std::optional<int> k;
    std::optional<bool> learnable;
    bool baseline = false;
    std::string ckpt;
};

void add_common(CLI::App* cmd, Overrides& ov, bool config_required = true) {
    auto* opt = cmd->add_option("--config", ov.config_path, "experiment config JSON");
    if (config_required) opt->required();
    cmd->add_option("--out", ov.out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("--seed", ov.seed, "master seed; re-derives data/cluster/train/sample seeds");
    cmd->add_option("--steps", ov.steps, "strided sampling steps");
    cmd->add_option("--guidance", ov.guidance, "classifier-free guidance weight");
    cmd->add_option("--k", ov.k, "number of cluster Gaussians");
    cmd->add_option("--learnable", ov.learnable, "train the bank parameters");
    cmd->add_flag("--baseline", ov.baseline, "force mu=0, Sigma=I, k=1");
}

ExperimentConfig load_with_overrides(const Overrides& ov) {
    ExperimentConfig cfg = load_experiment_config(ov.config_path);
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    if (ov.seed) apply_master_seed(cfg, *ov.seed);
    if (ov.steps) cfg.sample.steps = *ov.steps;
    if (ov.guidance) cfg.sample.guidance_w = *ov.guidance;
    if (ov.k) cfg.train.k = *ov.k;
    if (ov.learnable) cfg.train.learnable_bank = *ov.learnable;
    if (ov.baseline) cfg.baseline = true;
    validate(cfg.train);
    if (cfg.sample.steps < 1 || cfg.sample.steps > cfg.train.T)
        throw std::invalid_argument("config: sample.steps must be in [1, T]");
    return cfg;
}

std::string ckpt_path(const ExperimentConfig& cfg, const Overrides& ov, const char* name) {
    if (!ov.ckpt.empty()) return ov.ckpt;
    return (fs::path(cfg.out_dir) / name).string();
}

int cmd_gen_data(const Overrides& ov) {
    ExperimentConfig cfg = load_with_overrides(ov);
    if (!cfg.synthetic) throw std::invalid_argument("gen-data: config has no data.synthetic section");
    fs::create_directories(cfg.out_dir);
    EmbeddingDataset ds = gen_synthetic(*cfg.synthetic);
    write_emb((fs::path(cfg.out_dir) / "images.emb").string(), ds.image_embeddings);
    write_emb((fs::path(cfg.out_dir) / "conds.emb").string(), ds.cond_embeddings);
    {
        std::string labels = "index,label\n";
        for (size_t i = 0; i < ds.labels.size(); ++i)
            labels += std::to_string(i) + "," + std::to_string(ds.labels[i]) + "\n";
        std::ofstream os((fs::path(cfg.out_dir) / "labels.csv").string(), std::ios::trunc);
        os << labels;
    }
    nlohmann::json manifest{{"image_file", "images.emb"}, {"cond_file", "conds.emb"}, {"labels_file", "labels.csv"}};
    std::ofstream os((fs::path(cfg.out_dir) / "manifest.json").string(), std::ios::trunc);
    os << manifest.dump(2) << "\n";
    std::printf("wrote %d pairs of dimension %d under %s\n", cfg.synthetic->n, cfg.synthetic->d,
                cfg.out_dir.c_str());
    return 0;
}

int cmd_fit_clusters(const Overrides& ov) {
    ExperimentConfig cfg = load_with_overrides(ov);
    fs::create_directories(cfg.out_dir);
    PreparedData data = prepare_data(cfg);
    TrainState state = build_initial_state(cfg, data);
    std::string path = (fs::path(cfg.out_dir) / "init.ckpt").string();
    save_checkpoint(state, path);
    std::printf("fit %d clusters on %zu rows -> %s\n", state.bank.k, data.train_z0.rows, path.c_str());
    return 0;
}

int cmd_train(const Overrides& ov, const std::string& resume) {
    ExperimentConfig cfg = load_with_overrides(ov);
    fs::create_directories(cfg.out_dir);
    PreparedData data = prepare_data(cfg);
    TrainState state = [&] {
        if (!resume.empty()) return load_checkpoint(resume);
        std::string init = (fs::path(cfg.out_dir) / "init.ckpt").string();
        if (fs::exists(init)) {
            TrainState st = load_checkpoint(init);
            if (st.cfg.d == cfg.train.d && st.cfg.k == (cfg.baseline ? 1 : cfg.train.k)) return st;
        }
        return build_initial_state(cfg, data);
    }();
    train_model(state, cfg, data, (fs::path(cfg.out_dir) / "train_log.csv").string());
    std::string path = (fs::path(cfg.out_dir) / "model.ckpt").string();
    save_checkpoint(state, path);
    std::printf("trained to step %lld -> %s\n", static_cast<long long>(state.step), path.c_str());
    return 0;
}

int cmd_sample(const Overrides& ov, int count, bool dump_traj) {
    ExperimentConfig cfg = load_with_overrides(ov);
    TrainState state = load_checkpoint(ckpt_path(cfg, ov, "model.ckpt"));
    PreparedData data = prepare_data(cfg);
    size_t n = count > 0 ? std::min<size_t>(static_cast<size_t>(count), data.eval_cond.rows)
                         : data.eval_cond.rows;
    Matrix samples(n, static_cast<size_t>(state.cfg.d));
    for (size_t i = 0; i < n; ++i) {
        Rng rng(split_seed(cfg.sample.seed, i));
        SampleTrace trace = sample_prior(state, data.eval_cond.row_vec(i), cfg.sample, rng);
        std::copy(trace.z0_hat.begin(), trace.z0_hat.end(), samples.row(i));
        if (dump_traj) {
            auto sims = trajectory_similarity(trace.trajectory, data.eval_z0.row_vec(i));
            std::string csv = "t,cos\n";
            for (const auto& [t, c] : sims) {
                char buf[48];
                std::snprintf(buf, sizeof(buf), "%d,%.17g\n", t, c);
                csv += buf;
            }
            std::ofstream os((fs::path(cfg.out_dir) / ("traj_" + std::to_string(i) + ".csv")).string(),
                             std::ios::trunc);
            os << csv;
        }
    }
    fs::create_directories(cfg.out_dir);
    write_emb((fs::path(cfg.out_dir) / "samples.emb").string(), samples);
    std::printf("sampled %zu embeddings -> %s/samples.emb\n", n, cfg.out_dir.c_str());
    return 0;
}

int cmd_eval(const Overrides& ov) {
    auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = load_with_overrides(ov);
    TrainState state = load_checkpoint(ckpt_path(cfg, ov, "model.ckpt"));
    PreparedData data = prepare_data(cfg);
    EvalReport report = eval_similarity(state, data.eval_z0, data.eval_cond, cfg.sample, cfg.train.threads);
    fs::create_directories(cfg.out_dir);
    write_cosines_csv(report, (fs::path(cfg.out_dir) / "cosines.csv").string());
    write_eval_report_json(report, (fs::path(cfg.out_dir) / "eval_report.json").string());
    double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(cfg, (fs::path(cfg.out_dir) / "run_manifest.json").string(), wall);
    std::printf("eval over %zu conds: mean=%.4f median=%.4f std=%.4f\n", report.cosines.size(), report.mean,
                report.median, report.stddev);
    return 0;
}

int cmd_trace(const Overrides& ov) {
    ExperimentConfig cfg = load_with_overrides(ov);
    TrainState state = load_checkpoint(ckpt_path(cfg, ov, "model.ckpt"));
    PreparedData data = prepare_data(cfg);
    EvalReport report = eval_similarity(state, data.eval_z0, data.eval_cond, cfg.sample, cfg.train.threads);
    fs::create_directories(cfg.out_dir);
    write_step_trace_csv(report, (fs::path(cfg.out_dir) / "step_trace.csv").string());
    std::printf("trace over %zu conds at %zu strided steps -> %s/step_trace.csv\n", report.cosines.size(),
                report.step_mean_cos.size(), cfg.out_dir.c_str());
    return 0;
}

int cmd_sweep_k(const Overrides& ov, std::vector<int> k_list, std::vector<int> learnable_list) {
    ExperimentConfig cfg = load_with_overrides(ov);
    if (k_list.empty()) k_list = {1, 8};
    std::vector<bool> flags;
    if (learnable_list.empty()) flags = {false};
    else for (int v : learnable_list) flags.push_back(v != 0);
    std::vector<SweepCell> cells = sweep_k(cfg, k_list, flags);
    fs::create_directories(cfg.out_dir);
    write_sweep_csv(cells, (fs::path(cfg.out_dir) / "sweep.csv").string());
    for (const SweepCell& c : cells)
        std::printf("k=%d learnable=%d status=%s mean_cos=%.4f\n", c.k, c.learnable ? 1 : 0, c.status.c_str(),
                    c.mean_cos);
    return 0;
}

int cmd_cluster_freq(const Overrides& ov) {
    ExperimentConfig cfg = load_with_overrides(ov);
    TrainState state = load_checkpoint(ckpt_path(cfg, ov, "model.ckpt"));
    PreparedData data = prepare_data(cfg);
    std::vector<int64_t> counts = cluster_freq(state, data.eval_cond);
    fs::create_directories(cfg.out_dir);
    write_cluster_freq_csv(counts, (fs::path(cfg.out_dir) / "cluster_freq.csv").string());
    int64_t zero_bins = 0;
    for (int64_t c : counts)
        if (c == 0) ++zero_bins;
    std::printf("%zu conds over k=%d clusters, %lld never selected -> %s/cluster_freq.csv\n",
                data.eval_cond.rows, state.bank.k, static_cast<long long>(zero_bins), cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shifted-diffusion embedding prior: train and evaluate"};
    app.require_subcommand(1);

    Overrides ov;
    std::string resume;
    int sample_count = 0;
    bool dump_traj = false;
    std::vector<int> k_list, learnable_list;

    add_common(app.add_subcommand("gen-data", "generate synthetic paired embeddings"), ov);
    add_common(app.add_subcommand("fit-clusters", "fit the cluster bank and write init.ckpt"), ov);
    auto* train = app.add_subcommand("train", "train the prior and write model.ckpt");
    add_common(train, ov);
    train->add_option("--resume", resume, "checkpoint to continue from");
    auto* sample = app.add_subcommand("sample", "sample embeddings for eval conds");
    add_common(sample, ov);
    sample->add_option("--ckpt", ov.ckpt, "checkpoint path (default <out>/model.ckpt)");
    sample->add_option("--count", sample_count, "number of conds to sample (default: all eval)");
    sample->add_flag("--dump-traj", dump_traj, "write per-sample trajectory CSVs");
    auto* eval = app.add_subcommand("eval", "similarity report against ground truth");
    add_common(eval, ov);
    eval->add_option("--ckpt", ov.ckpt, "checkpoint path (default <out>/model.ckpt)");
    auto* trace = app.add_subcommand("trace", "per-timestep mean similarity CSV");
    add_common(trace, ov);
    trace->add_option("--ckpt", ov.ckpt, "checkpoint path (default <out>/model.ckpt)");
    auto* sweep = app.add_subcommand("sweep-k", "train one model per (k, learnable) cell");
    add_common(sweep, ov);
    sweep->add_option("--k-list", k_list, "cluster counts to sweep");
    sweep->add_option("--learnable-list", learnable_list, "0/1 flags to sweep");
    auto* freq = app.add_subcommand("cluster-freq", "selection counts over eval conds");
    add_common(freq, ov);
    freq->add_option("--ckpt", ov.ckpt, "checkpoint path (default <out>/model.ckpt)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("gen-data")) return cmd_gen_data(ov);
        if (app.got_subcommand("fit-clusters")) return cmd_fit_clusters(ov);
        if (app.got_subcommand("train")) return cmd_train(ov, resume);
        if (app.got_subcommand("sample")) return cmd_sample(ov, sample_count, dump_traj);
        if (app.got_subcommand("eval")) return cmd_eval(ov);
        if (app.got_subcommand("trace")) return cmd_trace(ov);
        if (app.got_subcommand("sweep-k")) return cmd_sweep_k(ov, k_list, learnable_list);
        if (app.got_subcommand("cluster-freq")) return cmd_cluster_freq(ov);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
