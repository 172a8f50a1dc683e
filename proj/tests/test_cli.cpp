#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "sscsr/dataio.hpp"
#include "sscsr/netcore.hpp"

using Catch::Approx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path test_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "sscsr_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path case_dir(const std::string& name) {
    fs::path d = test_root() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    out << body;
    REQUIRE(out.good());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct RunResult {
    int code = -1;
    std::string output;
};

// Runs the installed binary with a scrubbed SSCSR_SEED; `env` may re-set it.
RunResult run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const fs::path log = test_root() / ("log_" + std::to_string(counter++) + ".txt");
    std::string cmd = "env -u SSCSR_SEED ";
    if (!env.empty()) cmd += env + " ";
    cmd += std::string(SSCSR_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.output = slurp(log);
    return r;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Small shared fixtures: one simulated dataset plus a config that trains on it.
const char* kSimJson = R"({ "sim": { "num_devices": 2, "samples_per_class": 15,
  "sample_len": 64, "seed": 3 } })";

std::string train_json(const fs::path& dataset, const std::string& ckpt_dir = "",
                       int n_unlabeled = 3) {
    json j;
    j["dataset"] = dataset.string();
    j["arch"] = {{"input_len", 64}, {"stem_kernels", 4}, {"channels_per_stage", {4, 6}},
                 {"num_classes", 2}};
    j["train"] = {{"epochs", 2}, {"batch_labeled", 4}, {"batch_unlabeled", 8}, {"seed", 5}};
    j["condition"] = {{"m", 4}, {"n", n_unlabeled}, {"seed", 2}};
    if (!ckpt_dir.empty()) {
        j["eval"] = {{"checkpoint", ckpt_dir + "/checkpoint.bin"}};
    }
    return j.dump(2);
}

fs::path shared_dataset() {
    static fs::path file = [] {
        const fs::path d = case_dir("shared_sim");
        write_file(d / "sim.json", kSimJson);
        auto r = run_cli("simulate --config " + (d / "sim.json").string() + " --out " +
                         (d / "out").string());
        REQUIRE(r.code == 0);
        return d / "out" / "dataset.bin";
    }();
    return file;
}

} // namespace

TEST_CASE("plot-loss emits anchored, idempotent curves") {
    const fs::path d = case_dir("plot");
    write_file(d / "cfg.json",
               R"({ "plot": { "alphas": [0, 2], "num_classes": 2, "points": 101 } })");
    auto r = run_cli("plot-loss --config " + (d / "cfg.json").string() + " --out " +
                     (d / "a").string());
    REQUIRE(r.code == 0);

    const std::string csv_text = slurp(d / "a" / "loss_curves.csv");
    auto rows = parse_csv(csv_text);
    REQUIRE(rows[0] == std::vector<std::string>{"max_prob", "alpha=0", "alpha=2"});
    REQUIRE(rows.size() == 102);

    // First grid point is p = 1/C = 0.5 where the alpha = 0 curve is ln 2.
    REQUIRE(std::stod(rows[1][0]) == Approx(0.5).margin(1e-12));
    REQUIRE(std::stod(rows[1][1]) == Approx(std::log(2.0)).margin(1e-9));
    // One-hot endpoint annihilates for alpha > 0 and is never above alpha = 0.
    REQUIRE(std::stod(rows.back()[0]) == Approx(1.0).margin(1e-12));
    REQUIRE(std::stod(rows.back()[2]) == Approx(0.0).margin(1e-12));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(std::stod(rows[i][2]) <= std::stod(rows[i][1]) + 1e-12);
    }

    const std::string svg = slurp(d / "a" / "loss_curves.svg");
    REQUIRE(svg.find("<svg") != std::string::npos);
    REQUIRE(svg.find("polyline") != std::string::npos);

    auto r2 = run_cli("plot-loss --config " + (d / "cfg.json").string() + " --out " +
                      (d / "b").string());
    REQUIRE(r2.code == 0);
    REQUIRE(slurp(d / "b" / "loss_curves.csv") == csv_text);
    REQUIRE(slurp(d / "b" / "loss_curves.svg") == svg);
}

TEST_CASE("config strictness exits 2 before any output") {
    const fs::path d = case_dir("strict");
    write_file(d / "unknown_top.json", R"({ "plot": {}, "bogus": 1 })");
    auto r = run_cli("plot-loss --config " + (d / "unknown_top.json").string() + " --out " +
                     (d / "o1").string());
    REQUIRE(r.code == 2);
    REQUIRE(r.output.find("bogus") != std::string::npos);
    REQUIRE_FALSE(fs::exists(d / "o1"));

    write_file(d / "unknown_sim.json", R"({ "sim": { "num_devices": 2, "snr": 10 } })");
    r = run_cli("simulate --config " + (d / "unknown_sim.json").string() + " --out " +
                (d / "o2").string());
    REQUIRE(r.code == 2);
    REQUIRE(r.output.find("snr") != std::string::npos);
    REQUIRE_FALSE(fs::exists(d / "o2"));

    write_file(d / "broken.json", "{ not json");
    r = run_cli("plot-loss --config " + (d / "broken.json").string() + " --out " +
                (d / "o3").string());
    REQUIRE(r.code == 2);

    r = run_cli("plot-loss --config " + (d / "missing.json").string() + " --out " +
                (d / "o4").string());
    REQUIRE(r.code == 2);

    // Right file, wrong section for the command.
    write_file(d / "simonly.json", R"({ "sim": { "num_devices": 2 } })");
    r = run_cli("plot-loss --config " + (d / "simonly.json").string() + " --out " +
                (d / "o5").string());
    REQUIRE(r.code == 2);

    // Invalid values caught by section validation, not mid-run.
    write_file(d / "badsim.json", R"({ "sim": { "num_devices": 0 } })");
    r = run_cli("simulate --config " + (d / "badsim.json").string() + " --out " +
                (d / "o6").string());
    REQUIRE(r.code == 2);
    REQUIRE_FALSE(fs::exists(d / "o6"));
}

TEST_CASE("simulate writes a reproducible dataset with a manifest") {
    const fs::path d = case_dir("simulate");
    write_file(d / "sim.json", kSimJson);
    auto r = run_cli("simulate --config " + (d / "sim.json").string() + " --out " +
                     (d / "a").string());
    REQUIRE(r.code == 0);
    REQUIRE(r.output.find("class 0") != std::string::npos);

    auto ds = sscsr::read_dataset((d / "a" / "dataset.bin").string());
    REQUIRE(ds.num_classes == 2);
    REQUIRE(ds.sample_len == 64);
    REQUIRE(ds.labeled.size() == 18); // 15 -> 9/3/3 per class
    REQUIRE(ds.unlabeled.empty());
    REQUIRE(ds.val.size() == 6);
    REQUIRE(ds.test.size() == 6);

    auto manifest = json::parse(slurp(d / "a" / "manifest.json"));
    REQUIRE(manifest.at("per_class").at("train").get<int>() == 9);
    REQUIRE(manifest.at("totals").at("train").get<int>() == 18);
    REQUIRE(manifest.at("seed").get<std::uint64_t>() == 3);

    auto r2 = run_cli("simulate --config " + (d / "sim.json").string() + " --out " +
                      (d / "b").string());
    REQUIRE(r2.code == 0);
    REQUIRE(slurp(d / "b" / "dataset.bin") == slurp(d / "a" / "dataset.bin"));
}

TEST_CASE("train then eval reproduces the reported accuracy") {
    const fs::path d = case_dir("train_eval");
    const fs::path dataset = shared_dataset();
    write_file(d / "cfg.json", train_json(dataset, (d / "t").string()));

    auto r = run_cli("train --config " + (d / "cfg.json").string() + " --out " +
                     (d / "t").string() + " --deterministic");
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(d / "t" / "checkpoint.bin"));

    auto report = json::parse(slurp(d / "t" / "report.json"));
    REQUIRE(report.at("steps").get<int>() == 2); // |U| = 6, batch 8 -> 1 step x 2 epochs
    REQUIRE(report.at("val_accuracy").size() == 2);
    REQUIRE(report.at("wall_seconds").get<double>() == 0.0);

    auto ckpt = sscsr::load_checkpoint((d / "t" / "checkpoint.bin").string());
    REQUIRE(ckpt.arch.num_classes == 2);
    REQUIRE(ckpt.arch.input_len == 64);
    REQUIRE(ckpt.opt.step == 2);

    auto re = run_cli("eval --config " + (d / "cfg.json").string() + " --out " +
                      (d / "e").string());
    REQUIRE(re.code == 0);
    const auto pos = re.output.find("accuracy ");
    REQUIRE(pos != std::string::npos);
    const double eval_acc = std::stod(re.output.substr(pos + 9));
    REQUIRE(eval_acc == Approx(report.at("test_accuracy").get<double>()).margin(1e-6));

    auto conf = parse_csv(slurp(d / "e" / "confusion.csv"));
    REQUIRE(conf[0] == std::vector<std::string>{"class", "pred_0", "pred_1"});
    REQUIRE(conf.size() == 3);
    for (int c = 1; c <= 2; ++c) {
        REQUIRE(std::stoi(conf[c][1]) + std::stoi(conf[c][2]) == 3); // test split: 3 per class
    }
}

TEST_CASE("eval rejects mismatched checkpoints with exit 3") {
    const fs::path d = case_dir("eval_mismatch");
    const fs::path dataset = shared_dataset();
    write_file(d / "cfg.json", train_json(dataset, (d / "t").string()));
    REQUIRE(run_cli("train --config " + (d / "cfg.json").string() + " --out " +
                    (d / "t").string())
                .code == 0);

    // Class-count mismatch.
    write_file(d / "sim3.json", R"({ "sim": { "num_devices": 3, "samples_per_class": 10,
      "sample_len": 64, "seed": 4 } })");
    REQUIRE(run_cli("simulate --config " + (d / "sim3.json").string() + " --out " +
                    (d / "d3").string())
                .code == 0);
    json j3 = json::parse(train_json(d / "d3" / "dataset.bin", (d / "t").string()));
    write_file(d / "eval3.json", j3.dump());
    auto r = run_cli("eval --config " + (d / "eval3.json").string() + " --out " +
                     (d / "e3").string());
    REQUIRE(r.code == 3);
    REQUIRE(r.output.find("classes") != std::string::npos);

    // Sample-length mismatch.
    write_file(d / "sim128.json", R"({ "sim": { "num_devices": 2, "samples_per_class": 10,
      "sample_len": 128, "seed": 4 } })");
    REQUIRE(run_cli("simulate --config " + (d / "sim128.json").string() + " --out " +
                    (d / "d128").string())
                .code == 0);
    json j128 = json::parse(train_json(d / "d128" / "dataset.bin", (d / "t").string()));
    write_file(d / "eval128.json", j128.dump());
    r = run_cli("eval --config " + (d / "eval128.json").string() + " --out " +
                (d / "e128").string());
    REQUIRE(r.code == 3);

    // Corrupted checkpoint magic.
    std::string bytes = slurp(d / "t" / "checkpoint.bin");
    bytes[0] = 'X';
    write_file(d / "t" / "bad.bin", bytes);
    json jb = json::parse(train_json(dataset));
    jb["eval"] = {{"checkpoint", (d / "t" / "bad.bin").string()}};
    write_file(d / "evalbad.json", jb.dump());
    r = run_cli("eval --config " + (d / "evalbad.json").string() + " --out " +
                (d / "eb").string());
    REQUIRE(r.code == 3);
    REQUIRE(r.output.find("byte") != std::string::npos);
}

TEST_CASE("missing inputs exit 2") {
    const fs::path d = case_dir("missing_inputs");
    write_file(d / "cfg.json", train_json(d / "nope.bin"));
    REQUIRE(run_cli("train --config " + (d / "cfg.json").string() + " --out " +
                    (d / "t").string())
                .code == 2);

    // No condition section.
    json j = json::parse(train_json(shared_dataset()));
    j.erase("condition");
    write_file(d / "nocond.json", j.dump());
    REQUIRE(run_cli("train --config " + (d / "nocond.json").string() + " --out " +
                    (d / "t2").string())
                .code == 2);

    // Eval without its section.
    write_file(d / "noeval.json", train_json(shared_dataset()));
    REQUIRE(run_cli("eval --config " + (d / "noeval.json").string() + " --out " +
                    (d / "e").string())
                .code == 2);
}

TEST_CASE("datasets that already carry an unlabeled partition are rejected") {
    const fs::path d = case_dir("pre_split");
    auto ds = sscsr::read_dataset(shared_dataset().string());
    auto conditioned = sscsr::assign_condition(ds, {4, 3}, 2);
    sscsr::write_dataset(conditioned, (d / "split.bin").string());

    write_file(d / "cfg.json", train_json(d / "split.bin"));
    auto r = run_cli("train --config " + (d / "cfg.json").string() + " --out " +
                     (d / "t").string());
    REQUIRE(r.code == 2);
    REQUIRE(r.output.find("unlabeled") != std::string::npos);
}

TEST_CASE("--supervised-only is exactly condition n = 0") {
    const fs::path d = case_dir("sup_only");
    const fs::path dataset = shared_dataset();
    write_file(d / "n0.json", train_json(dataset, "", 0));
    write_file(d / "n3.json", train_json(dataset, "", 3));

    REQUIRE(run_cli("train --config " + (d / "n0.json").string() + " --out " +
                    (d / "a").string() + " --deterministic")
                .code == 0);
    REQUIRE(run_cli("train --config " + (d / "n3.json").string() + " --out " +
                    (d / "b").string() + " --deterministic --supervised-only")
                .code == 0);

    auto ra = json::parse(slurp(d / "a" / "report.json"));
    auto rb = json::parse(slurp(d / "b" / "report.json"));
    REQUIRE(ra.at("step_loss_total") == rb.at("step_loss_total"));
    REQUIRE(ra.at("val_accuracy") == rb.at("val_accuracy"));
    REQUIRE(slurp(d / "a" / "checkpoint.bin") == slurp(d / "b" / "checkpoint.bin"));
}

TEST_CASE("seed precedence: --seed beats SSCSR_SEED beats config") {
    const fs::path d = case_dir("seeds");
    write_file(d / "seed3.json", R"({ "sim": { "num_devices": 2, "samples_per_class": 6,
      "sample_len": 64, "seed": 3 } })");
    write_file(d / "seed4.json", R"({ "sim": { "num_devices": 2, "samples_per_class": 6,
      "sample_len": 64, "seed": 4 } })");

    auto base = run_cli("simulate --config " + (d / "seed3.json").string() + " --out " +
                        (d / "base").string());
    REQUIRE(base.code == 0);
    const std::string want = slurp(d / "base" / "dataset.bin");

    REQUIRE(run_cli("simulate --config " + (d / "seed4.json").string() + " --out " +
                    (d / "env").string(),
                    "SSCSR_SEED=3")
                .code == 0);
    REQUIRE(slurp(d / "env" / "dataset.bin") == want);

    REQUIRE(run_cli("simulate --config " + (d / "seed4.json").string() + " --out " +
                    (d / "flag").string() + " --seed 3",
                    "SSCSR_SEED=9")
                .code == 0);
    REQUIRE(slurp(d / "flag" / "dataset.bin") == want);

    REQUIRE(run_cli("simulate --config " + (d / "seed4.json").string() + " --out " +
                    (d / "diff").string(),
                    "SSCSR_SEED=9")
                .code == 0);
    REQUIRE(slurp(d / "diff" / "dataset.bin") != want);

    auto bad = run_cli("simulate --config " + (d / "seed3.json").string() + " --out " +
                       (d / "bad").string(),
                       "SSCSR_SEED=x9");
    REQUIRE(bad.code == 2);

    // Empty env value counts as unset.
    REQUIRE(run_cli("simulate --config " + (d / "seed3.json").string() + " --out " +
                    (d / "empty").string(),
                    "SSCSR_SEED=")
                .code == 0);
    REQUIRE(slurp(d / "empty" / "dataset.bin") == want);
}

TEST_CASE("bench sweeps the grid and is stable under --jobs") {
    const fs::path d = case_dir("bench");
    const fs::path dataset = shared_dataset();
    json j = json::parse(train_json(dataset));
    j["bench"] = {{"forms", {"swapped", "ce"}},
                  {"gammas", {"off", 0.9}},
                  {"trials", 1},
                  {"good_threshold", 0.8}};
    write_file(d / "cfg.json", j.dump(2));

    auto r = run_cli("bench --config " + (d / "cfg.json").string() + " --out " +
                     (d / "a").string() + " --deterministic");
    REQUIRE(r.code == 0);
    const std::string csv_text = slurp(d / "a" / "bench.csv");
    auto rows = parse_csv(csv_text);
    REQUIRE(rows[0] == std::vector<std::string>{"form", "condition", "gamma", "best_accuracy",
                                                "m", "n", "trials"});
    REQUIRE(rows.size() == 5); // 2 forms x 1 condition x 2 gammas
    std::vector<std::string> forms, gammas;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 7);
        forms.push_back(rows[i][0]);
        gammas.push_back(rows[i][2]);
        REQUIRE(rows[i][1] == "4+3");
        const int m = std::stoi(rows[i][4]);
        const int n = std::stoi(rows[i][5]);
        const int trials = std::stoi(rows[i][6]);
        REQUIRE(trials == 1);
        REQUIRE(m >= 0);
        REQUIRE(n >= 0);
        REQUIRE(m + n <= trials);
        const double best = std::stod(rows[i][3]);
        REQUIRE(best >= 0.0);
        REQUIRE(best <= 1.0);
    }
    REQUIRE(forms == std::vector<std::string>{"swapped", "swapped", "ce", "ce"});
    REQUIRE(gammas == std::vector<std::string>{"off", "0.9", "off", "0.9"});

    auto r2 = run_cli("bench --config " + (d / "cfg.json").string() + " --out " +
                      (d / "b").string() + " --deterministic --jobs 2");
    REQUIRE(r2.code == 0);
    REQUIRE(slurp(d / "b" / "bench.csv") == csv_text);
}

TEST_CASE("command-line misuse exits 2, help exits 0") {
    REQUIRE(run_cli("").code == 2);
    REQUIRE(run_cli("bogus --config x --out y").code == 2);
    REQUIRE(run_cli("train --out justout").code == 2); // missing --config
    auto h = run_cli("--help");
    REQUIRE(h.code == 0);
    REQUIRE(h.output.find("simulate") != std::string::npos);
}
