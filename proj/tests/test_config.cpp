#include <doctest.h>

#include "embprior/eval.hpp"

using namespace embprior;
using nlohmann::json;

namespace {

json valid_config() {
    return json{{"data", json{{"synthetic", json{{"d", 8}, {"k_true", 3}, {"n", 200}, {"seed", 1}}}}},
                {"train", json{{"d", 8}, {"T", 100}, {"batch", 16}, {"steps", 50}, {"hidden", 16},
                               {"depth", 1}, {"time_embed_dim", 8}, {"k", 2}}},
                {"sample", json{{"steps", 10}}},
                {"eval_fraction", 0.2},
                {"out_dir", "/tmp/embprior_cfg_test"},
                {"seed", 3}};
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("valid config parses") {
    ExperimentConfig cfg = experiment_config_from_json(valid_config());
    CHECK(cfg.synthetic.has_value());
    CHECK(cfg.synthetic->d == 8);
    CHECK(cfg.train.T == 100);
    CHECK(cfg.train.k == 2);
    CHECK(cfg.sample.steps == 10);
    CHECK(cfg.eval_fraction == 0.2);
    CHECK_FALSE(cfg.baseline);
}

TEST_CASE("unknown keys rejected at every level") {
    json top = valid_config();
    top["bogus"] = 1;
    CHECK_THROWS_WITH_AS(experiment_config_from_json(top), doctest::Contains("bogus"), std::invalid_argument);

    json nested = valid_config();
    nested["train"]["learning_rate"] = 0.1;  // wrong name
    CHECK_THROWS_AS(experiment_config_from_json(nested), std::invalid_argument);

    json synth = valid_config();
    synth["data"]["synthetic"]["dims"] = 3;
    CHECK_THROWS_AS(experiment_config_from_json(synth), std::invalid_argument);
}

TEST_CASE("data section needs exactly one source") {
    json none = valid_config();
    none["data"] = json::object();
    CHECK_THROWS_AS(experiment_config_from_json(none), std::invalid_argument);
    json both = valid_config();
    both["data"]["manifest"] = "x.json";
    CHECK_THROWS_AS(experiment_config_from_json(both), std::invalid_argument);
}

TEST_CASE("field validation") {
    json bad_mode = valid_config();
    bad_mode["train"]["loss_mode"] = "elbow";
    CHECK_THROWS_AS(experiment_config_from_json(bad_mode), std::invalid_argument);

    json bad_frac = valid_config();
    bad_frac["eval_fraction"] = 1.5;
    CHECK_THROWS_AS(experiment_config_from_json(bad_frac), std::invalid_argument);

    json bad_steps = valid_config();
    bad_steps["sample"]["steps"] = 1000;  // > T
    CHECK_THROWS_AS(experiment_config_from_json(bad_steps), std::invalid_argument);

    json d_mismatch = valid_config();
    d_mismatch["train"]["d"] = 4;
    CHECK_THROWS_AS(experiment_config_from_json(d_mismatch), std::invalid_argument);
}

TEST_CASE("missing config file error names the path") {
    CHECK_THROWS_WITH_AS(load_experiment_config("/nonexistent/embprior.json"),
                         doctest::Contains("/nonexistent/embprior.json"), std::invalid_argument);
}

TEST_CASE("master seed re-derives sub-seeds deterministically") {
    ExperimentConfig a = experiment_config_from_json(valid_config());
    ExperimentConfig b = experiment_config_from_json(valid_config());
    apply_master_seed(a, 42);
    apply_master_seed(b, 42);
    CHECK(a.synthetic->seed == b.synthetic->seed);
    CHECK(a.train.seed == b.train.seed);
    CHECK(a.sample.seed == b.sample.seed);
    apply_master_seed(b, 43);
    CHECK(a.train.seed != b.train.seed);
    CHECK(a.synthetic->seed != b.synthetic->seed);
}

TEST_CASE("config echo round-trips") {
    ExperimentConfig cfg = experiment_config_from_json(valid_config());
    apply_master_seed(cfg, 7);
    json echoed = experiment_config_to_json(cfg);
    ExperimentConfig again = experiment_config_from_json(echoed);
    CHECK(experiment_config_to_json(again) == echoed);
}

}  // TEST_SUITE
