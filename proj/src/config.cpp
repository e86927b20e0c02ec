#include <fstream>
#include <set>

#include "embprior/eval.hpp"

namespace embprior {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

SyntheticSpec synthetic_from_json(const json& j) {
    reject_unknown(j, {"d", "k_true", "n", "sigma_img", "sigma_txt", "gap", "cone_deg", "seed"}, "data.synthetic");
    SyntheticSpec s;
    get_if(j, "d", s.d);
    get_if(j, "k_true", s.k_true);
    get_if(j, "n", s.n);
    get_if(j, "sigma_img", s.sigma_img);
    get_if(j, "sigma_txt", s.sigma_txt);
    get_if(j, "gap", s.gap);
    get_if(j, "cone_deg", s.cone_deg);
    get_if(j, "seed", s.seed);
    return s;
}

json synthetic_to_json(const SyntheticSpec& s) {
    return json{{"d", s.d},       {"k_true", s.k_true},       {"n", s.n},
                {"sigma_img", s.sigma_img}, {"sigma_txt", s.sigma_txt}, {"gap", s.gap},
                {"cone_deg", s.cone_deg},   {"seed", s.seed}};
}

TrainConfig train_from_json(const json& j) {
    reject_unknown(j,
                   {"T", "batch", "steps", "lr", "adam_beta1", "adam_beta2", "adam_eps", "weight_decay",
                    "drop_prob", "loss_mode", "k", "learnable_bank", "xi", "kappa", "seed", "beta_start",
                    "beta_end", "d", "hidden", "depth", "time_embed_dim", "threads", "grad_chunks"},
                   "train");
    TrainConfig c;
    get_if(j, "T", c.T);
    get_if(j, "batch", c.batch);
    get_if(j, "steps", c.steps);
    get_if(j, "lr", c.lr);
    get_if(j, "adam_beta1", c.adam_beta1);
    get_if(j, "adam_beta2", c.adam_beta2);
    get_if(j, "adam_eps", c.adam_eps);
    get_if(j, "weight_decay", c.weight_decay);
    get_if(j, "drop_prob", c.drop_prob);
    if (j.contains("loss_mode")) {
        std::string m = j.at("loss_mode").get<std::string>();
        if (m == "elbo") c.loss_mode = LossMode::Elbo;
        else if (m == "simple") c.loss_mode = LossMode::Simple;
        else throw std::invalid_argument("config: loss_mode must be \"elbo\" or \"simple\"");
    }
    get_if(j, "k", c.k);
    get_if(j, "learnable_bank", c.learnable_bank);
    get_if(j, "xi", c.xi);
    get_if(j, "kappa", c.kappa);
    get_if(j, "seed", c.seed);
    get_if(j, "beta_start", c.beta_start);
    get_if(j, "beta_end", c.beta_end);
    get_if(j, "d", c.d);
    get_if(j, "hidden", c.hidden);
    get_if(j, "depth", c.depth);
    get_if(j, "time_embed_dim", c.time_embed_dim);
    get_if(j, "threads", c.threads);
    get_if(j, "grad_chunks", c.grad_chunks);
    return c;
}

json train_to_json(const TrainConfig& c) {
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

SampleConfig sample_from_json(const json& j) {
    reject_unknown(j, {"steps", "guidance_w", "clamp_z0", "assign_mode", "mc_samples", "seed"}, "sample");
    SampleConfig c;
    get_if(j, "steps", c.steps);
    get_if(j, "guidance_w", c.guidance_w);
    if (j.contains("clamp_z0") && !j.at("clamp_z0").is_null()) c.clamp_z0 = j.at("clamp_z0").get<double>();
    if (j.contains("assign_mode")) {
        std::string m = j.at("assign_mode").get<std::string>();
        if (m == "top1") c.assign_mode = AssignMode::Top1;
        else if (m == "mc") c.assign_mode = AssignMode::Mc;
        else throw std::invalid_argument("config: assign_mode must be \"top1\" or \"mc\"");
    }
    get_if(j, "mc_samples", c.mc_samples);
    get_if(j, "seed", c.seed);
    return c;
}

json sample_to_json(const SampleConfig& c) {
    json j{{"steps", c.steps},
           {"guidance_w", c.guidance_w},
           {"assign_mode", c.assign_mode == AssignMode::Top1 ? "top1" : "mc"},
           {"mc_samples", c.mc_samples},
           {"seed", c.seed}};
    j["clamp_z0"] = c.clamp_z0 ? json(*c.clamp_z0) : json(nullptr);
    return j;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
    reject_unknown(j, {"data", "train", "sample", "cluster", "eval_fraction", "out_dir", "seed", "baseline"},
                   "config");
    ExperimentConfig cfg;
    if (!j.contains("data")) throw std::invalid_argument("config: missing \"data\" section");
    const json& data = j.at("data");
    reject_unknown(data, {"synthetic", "manifest"}, "data");
    if (data.contains("synthetic") == data.contains("manifest"))
        throw std::invalid_argument("config: data needs exactly one of \"synthetic\" or \"manifest\"");
    if (data.contains("synthetic")) cfg.synthetic = synthetic_from_json(data.at("synthetic"));
    else cfg.manifest = data.at("manifest").get<std::string>();
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("sample")) cfg.sample = sample_from_json(j.at("sample"));
    if (j.contains("cluster")) {
        const json& cj = j.at("cluster");
        reject_unknown(cj, {"iters", "source"}, "cluster");
        get_if(cj, "iters", cfg.cluster.iters);
        get_if(cj, "source", cfg.cluster.source);
        if (cfg.cluster.source != "image" && cfg.cluster.source != "text")
            throw std::invalid_argument("config: cluster.source must be \"image\" or \"text\"");
    }
    get_if(j, "eval_fraction", cfg.eval_fraction);
    if (!(cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0))
        throw std::invalid_argument("config: eval_fraction must be in (0,1)");
    get_if(j, "out_dir", cfg.out_dir);
    get_if(j, "seed", cfg.seed);
    get_if(j, "baseline", cfg.baseline);
    if (cfg.synthetic && cfg.synthetic->d != cfg.train.d)
        throw std::invalid_argument("config: train.d must match data.synthetic.d");
    validate(cfg.train);
    if (cfg.sample.steps < 1 || cfg.sample.steps > cfg.train.T)
        throw std::invalid_argument("config: sample.steps must be in [1, T]");
    if (cfg.sample.guidance_w < 0.0) throw std::invalid_argument("config: guidance_w must be >= 0");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open config file " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    json data;
    if (cfg.synthetic) data["synthetic"] = synthetic_to_json(*cfg.synthetic);
    if (cfg.manifest) data["manifest"] = *cfg.manifest;
    return json{{"data", data},
                {"train", train_to_json(cfg.train)},
                {"sample", sample_to_json(cfg.sample)},
                {"cluster", json{{"iters", cfg.cluster.iters}, {"source", cfg.cluster.source}}},
                {"eval_fraction", cfg.eval_fraction},
                {"out_dir", cfg.out_dir},
                {"seed", cfg.seed},
                {"baseline", cfg.baseline}};
}

void apply_master_seed(ExperimentConfig& cfg, uint64_t master) {
    cfg.seed = master;
    if (cfg.synthetic) cfg.synthetic->seed = split_seed(master, 11);
    cfg.train.seed = split_seed(master, 13);
    cfg.sample.seed = split_seed(master, 14);
}

}  // namespace embprior
