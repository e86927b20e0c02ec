// End-to-end checks of the installed CLI binary (path injected by CMake).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args, const std::string& capture_path = "") {
    std::string cmd = std::string(EMBPRIOR_CLI_PATH) + " " + args;
    if (!capture_path.empty()) cmd += " >" + capture_path + " 2>&1";
    else cmd += " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path make_workdir() {
    fs::path dir = fs::temp_directory_path() / "embprior_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string small_config(const fs::path& dir) {
    json cfg{{"data", json{{"synthetic", json{{"d", 8}, {"k_true", 4}, {"n", 600}, {"seed", 2}}}}},
             {"train", json{{"d", 8}, {"T", 100}, {"batch", 32}, {"steps", 200}, {"hidden", 32},
                            {"depth", 1}, {"time_embed_dim", 8}, {"k", 4}, {"threads", 2},
                            {"loss_mode", "elbo"}}},
             {"sample", json{{"steps", 16}}},
             {"eval_fraction", 0.1},
             {"out_dir", (dir / "out").string()},
             {"seed", 5}};
    std::string path = (dir / "config.json").string();
    std::ofstream os(path);
    os << cfg.dump(2);
    return path;
}

}  // namespace

TEST_CASE("help exits 0 and prints usage") {
    fs::path dir = make_workdir();
    std::string cap = (dir / "help.txt").string();
    CHECK(run("--help", cap) == 0);
    CHECK(slurp(cap).find("Usage") != std::string::npos);
    CHECK(run("eval --help") == 0);
}

TEST_CASE("unknown flags and missing config are usage errors") {
    fs::path dir = make_workdir();
    CHECK(run("train --config /does/not/exist.json --definitely-not-a-flag") == 1);
    std::string cap = (dir / "missing.txt").string();
    CHECK(run("train --config /does/not/exist.json", cap) == 1);
    CHECK(slurp(cap).find("/does/not/exist.json") != std::string::npos);
    CHECK(run("") == 1);  // subcommand required
}

TEST_CASE("full pipeline smoke: gen-data, fit-clusters, train, eval") {
    fs::path dir = make_workdir();
    std::string cfg = small_config(dir);
    std::string out = (dir / "out").string();

    CHECK(run("gen-data --config " + cfg) == 0);
    CHECK(fs::exists(out + "/images.emb"));
    CHECK(fs::exists(out + "/conds.emb"));
    CHECK(fs::exists(out + "/manifest.json"));

    CHECK(run("fit-clusters --config " + cfg) == 0);
    CHECK(fs::exists(out + "/init.ckpt"));

    CHECK(run("train --config " + cfg) == 0);
    CHECK(fs::exists(out + "/model.ckpt"));
    CHECK(fs::exists(out + "/train_log.csv"));
    {
        std::string log = slurp(out + "/train_log.csv");
        CHECK(log.rfind("step,loss,kl_terminal,lp_loss,wall_ms\n", 0) == 0);
        CHECK(std::count(log.begin(), log.end(), '\n') == 201);  // header + 200 steps
    }

    CHECK(run("eval --config " + cfg) == 0);
    CHECK(fs::exists(out + "/cosines.csv"));
    CHECK(fs::exists(out + "/eval_report.json"));
    CHECK(fs::exists(out + "/run_manifest.json"));
    {
        json report = json::parse(slurp(out + "/eval_report.json"));
        CHECK(report.at("count").get<int>() == 60);
        double mean = report.at("mean").get<double>();
        CHECK(mean >= -1.0);
        CHECK(mean <= 1.0);
        int64_t total = 0;
        for (int64_t c : report.at("cluster_counts").get<std::vector<int64_t>>()) total += c;
        CHECK(total == 60);
    }

    // eval CSVs reproduce byte-identically on a second run
    std::string first = slurp(out + "/cosines.csv");
    CHECK(run("eval --config " + cfg) == 0);
    CHECK(slurp(out + "/cosines.csv") == first);

    CHECK(run("trace --config " + cfg) == 0);
    {
        std::string trace = slurp(out + "/step_trace.csv");
        CHECK(trace.rfind("t,mean_cos\n", 0) == 0);
        CHECK(std::count(trace.begin(), trace.end(), '\n') == 17);  // header + 16 strided steps
    }

    CHECK(run("cluster-freq --config " + cfg) == 0);
    {
        std::string freq = slurp(out + "/cluster_freq.csv");
        CHECK(freq.rfind("rank,cluster_index,count\n", 0) == 0);
        // counts sum to eval size
        int64_t total = 0;
        std::istringstream is(freq);
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) total += std::stoll(line.substr(line.rfind(',') + 1));
        CHECK(total == 60);
    }

    CHECK(run("sample --config " + cfg + " --count 5 --dump-traj") == 0);
    CHECK(fs::exists(out + "/samples.emb"));
    CHECK(fs::exists(out + "/traj_0.csv"));
}

TEST_CASE("baseline flag and overrides") {
    fs::path dir = make_workdir();
    std::string cfg = small_config(dir);
    std::string out2 = (dir / "baseline_out").string();
    CHECK(run("train --config " + cfg + " --baseline --out " + out2) == 0);
    CHECK(run("eval --config " + cfg + " --baseline --out " + out2 + " --steps 8 --guidance 2.0") == 0);
    CHECK(fs::exists(out2 + "/eval_report.json"));
}

TEST_CASE("sweep over two cells emits a summary CSV") {
    fs::path dir = make_workdir();
    std::string cfg = small_config(dir);
    std::string out3 = (dir / "sweep_out").string();
    CHECK(run("sweep-k --config " + cfg + " --out " + out3 + " --k-list 1 --k-list 2") == 0);
    std::string csv = slurp(out3 + "/sweep.csv");
    CHECK(csv.rfind("k,learnable,status,mean_cos,median_cos,std_cos\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("ok") != std::string::npos);
}
