#pragma once

#include <nlohmann/json.hpp>

#include "embprior/data.hpp"
#include "embprior/sampler.hpp"
#include "embprior/trainer.hpp"

namespace embprior {

struct ClusterFitConfig {
    int iters = 25;
    std::string source = "image";  // embeddings the bank is fit on: image | text
};

// One experiment: data source, cluster fitting, training, sampling and the
// eval split, all under a master seed so paired comparisons share their
// draws. Parsed strictly from JSON; unknown keys are rejected.
struct ExperimentConfig {
    std::optional<SyntheticSpec> synthetic;
    std::optional<std::string> manifest;  // path to {image_file, cond_file, labels_file?}
    TrainConfig train;
    SampleConfig sample;
    ClusterFitConfig cluster;
    double eval_fraction = 0.1;
    std::string out_dir = "out";
    uint64_t seed = 1;       // master seed; sub-seeds derive from it
    bool baseline = false;   // force mu = 0, Sigma = I, k = 1

    uint64_t cluster_seed() const { return split_seed(seed, 12); }
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

// Re-derives every sub-seed from the master seed (data, clustering, training,
// sampling). Arms of a paired comparison call this with the same value.
void apply_master_seed(ExperimentConfig& cfg, uint64_t master);

struct PreparedData {
    Matrix train_z0, train_cond;
    Matrix eval_z0, eval_cond;
    DataStats stats;  // of the train image embeddings
};

// Generates or ingests embeddings and splits off the last eval_fraction rows.
PreparedData prepare_data(const ExperimentConfig& cfg);

// Baseline configs get the single standard Gaussian; otherwise k-means on the
// configured source embeddings.
ClusterBank build_bank(const ExperimentConfig& cfg, const PreparedData& data);

TrainState build_initial_state(const ExperimentConfig& cfg, const PreparedData& data);

// Trains in place, appending "step,loss,kl_terminal,lp_loss,wall_ms" rows to
// log_path when nonempty.
void train_model(TrainState& state, const ExperimentConfig& cfg, const PreparedData& data,
                 const std::string& log_path = "");

struct EvalReport {
    std::vector<double> cosines;              // one per eval cond
    double mean = 0.0, median = 0.0, stddev = 0.0;
    std::vector<int64_t> cluster_counts;      // top-1 selections observed at sampling
    std::vector<std::pair<int, double>> step_mean_cos;  // per strided timestep
};

// Samples one embedding per eval cond (per-item rng split from cfg.seed) and
// reports the cosine distribution against the ground-truth z0, selection
// counts, and per-timestep mean similarity.
EvalReport eval_similarity(const TrainState& state, const Matrix& eval_z0, const Matrix& eval_cond,
                           const SampleConfig& cfg, int threads = 0);

// Counts of top-1 selections over the eval conds (no sampling involved).
std::vector<int64_t> cluster_freq(const TrainState& state, const Matrix& eval_cond);

// CSV/JSON artifacts; all writes are temp-then-rename.
void write_cosines_csv(const EvalReport& report, const std::string& path);
void write_eval_report_json(const EvalReport& report, const std::string& path);
void write_step_trace_csv(const EvalReport& report, const std::string& path);
void write_cluster_freq_csv(const std::vector<int64_t>& counts, const std::string& path);
void write_run_manifest(const ExperimentConfig& cfg, const std::string& path, double wall_ms);

struct SweepCell {
    int k = 0;
    bool learnable = false;
    std::string status;  // "ok" or the error message
    double mean_cos = 0.0, median_cos = 0.0, std_cos = 0.0;
};

// Trains one model per (k, learnable) cell with shared seeds and budget.
// Per-cell failures are recorded and the sweep continues.
std::vector<SweepCell> sweep_k(const ExperimentConfig& base, const std::vector<int>& k_list,
                               const std::vector<bool>& learnable_flags);
void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path);

struct RunOutputs {
    TrainState state;
    EvalReport report;
};

// Full pipeline for one config: prepare data, fit the bank, train (with log),
// checkpoint, evaluate, and write all artifacts under cfg.out_dir.
RunOutputs run_experiment(const ExperimentConfig& cfg);

uint64_t fnv1a(const void* data, size_t len, uint64_t h = 14695981039346656037ULL);
uint64_t fnv1a_file(const std::string& path);

}  // namespace embprior
