#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sscsr/dataio.hpp"
#include "sscsr/losses.hpp"
#include "sscsr/netcore.hpp"
#include "sscsr/run_config.hpp"
#include "sscsr/sigsim.hpp"
#include "sscsr/svgplot.hpp"
#include "sscsr/trainer.hpp"

namespace sscsr {

struct CliOptions {
    std::string command;
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed; // --seed
    int jobs = 1;
    bool deterministic = false;
    bool supervised_only = false;
};

namespace cli {

namespace fs = std::filesystem;

inline std::string fmt_acc(double v) {
    if (!std::isfinite(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

/// Seed precedence: --seed beats SSCSR_SEED beats the config file.
inline std::optional<std::uint64_t> seed_override(const CliOptions& opts) {
    if (opts.seed) return opts.seed;
    const char* env = std::getenv("SSCSR_SEED");
    if (env == nullptr || *env == '\0') return std::nullopt;
    std::uint64_t v = 0;
    const char* end = env + std::string_view(env).size();
    auto [ptr, ec] = std::from_chars(env, end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(std::string("SSCSR_SEED is not a non-negative integer: \"") + env +
                          "\"");
    }
    return v;
}

inline void require_section(bool present, const std::string& cmd, const std::string& section) {
    if (!present) {
        throw ConfigError(cmd + " requires a \"" + section + "\" config section");
    }
}

inline std::string require_dataset(const RunConfig& rc, const std::string& cmd) {
    if (rc.dataset_path.empty()) {
        throw ConfigError(cmd + " requires a top-level \"dataset\" path in the config");
    }
    const std::string path = resolve_config_path(rc, rc.dataset_path);
    if (!fs::exists(path)) throw ConfigError("dataset file not found: \"" + path + "\"");
    return path;
}

inline void write_text(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open \"" + path.string() + "\" for writing");
    out << body;
    if (!out.good()) throw Error("write to \"" + path.string() + "\" failed");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline SignalDataset load_raw_dataset(const std::string& path) {
    SignalDataset ds = read_dataset(path);
    if (!ds.unlabeled.empty()) {
        throw ConfigError("dataset \"" + path +
                          "\" already carries an unlabeled partition; expected a raw "
                          "simulator output (labeled/val/test only)");
    }
    return ds;
}

inline nlohmann::json report_to_json(const RunReport& r, bool deterministic) {
    nlohmann::json j;
    j["steps"] = r.steps;
    j["best_epoch"] = r.best_epoch;
    j["best_val_accuracy"] = r.best_val_accuracy;
    j["test_accuracy"] = r.test_accuracy;
    j["retention_rate"] = r.retention_rate;
    j["ema_swap_count"] = r.ema_swap_count;
    j["wall_seconds"] = deterministic ? 0.0 : r.wall_seconds;
    j["epoch_loss_s"] = r.epoch_loss_s;
    j["epoch_loss_u"] = r.epoch_loss_u;
    j["val_accuracy"] = r.val_accuracy;
    j["step_loss_s"] = r.step_loss_s;
    j["step_loss_u"] = r.step_loss_u;
    j["step_loss_total"] = r.step_loss_total;
    j["confusion"] = r.confusion;
    return j;
}

inline void cmd_simulate(const RunConfig& rc, const CliOptions& opts) {
    require_section(rc.sim.has_value(), "simulate", "sim");
    SimConfig sim = *rc.sim;
    if (auto s = seed_override(opts)) sim.seed = *s;
    sim.validate();

    auto profiles = make_device_profiles(sim.num_devices, sim.seed);
    SignalDataset ds = simulate_dataset(sim, profiles);

    fs::create_directories(opts.out_dir);
    const fs::path file = fs::path(opts.out_dir) / "dataset.bin";
    write_dataset(ds, file.string());

    int n_train = 0, n_val = 0, n_test = 0;
    detail::split_counts(sim.samples_per_class, n_train, n_val, n_test);
    nlohmann::json manifest;
    manifest["file"] = "dataset.bin";
    manifest["num_classes"] = ds.num_classes;
    manifest["sample_len"] = ds.sample_len;
    manifest["modulation"] = "qpsk";
    manifest["oversample"] = sim.oversample;
    manifest["rolloff"] = sim.rolloff;
    if (std::isinf(sim.snr_db)) {
        manifest["snr_db"] = "inf";
    } else {
        manifest["snr_db"] = sim.snr_db;
    }
    manifest["seed"] = sim.seed;
    manifest["per_class"] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
    manifest["totals"] = {{"train", static_cast<int>(ds.labeled.size())},
                          {"val", static_cast<int>(ds.val.size())},
                          {"test", static_cast<int>(ds.test.size())}};
    write_json(fs::path(opts.out_dir) / "manifest.json", manifest);

    for (int c = 0; c < ds.num_classes; ++c) {
        std::cout << "class " << c << ": train " << n_train << " val " << n_val << " test "
                  << n_test << "\n";
    }
    std::cout << "wrote " << file.string() << " (" << ds.labeled.size() << "/" << ds.val.size()
              << "/" << ds.test.size() << " train/val/test)\n";
}

inline void cmd_train(const RunConfig& rc, const CliOptions& opts) {
    require_section(rc.arch.has_value(), "train", "arch");
    require_section(rc.train.has_value(), "train", "train");
    require_section(rc.condition.has_value(), "train", "condition");
    const std::string data_path = require_dataset(rc, "train");

    TrainConfig tcfg = *rc.train;
    if (auto s = seed_override(opts)) tcfg.seed = *s;
    ConditionConfig cc = *rc.condition;
    if (opts.supervised_only) cc.cond.n_unlabeled_per_class = 0;

    SignalDataset raw = load_raw_dataset(data_path);
    SignalDataset ds = assign_condition(raw, cc.cond, cc.seed);

    TrainResult res = train(ds, *rc.arch, tcfg);

    fs::create_directories(opts.out_dir);
    Checkpoint ckpt{*rc.arch, std::move(res.params), std::move(res.opt)};
    save_checkpoint(ckpt, (fs::path(opts.out_dir) / "checkpoint.bin").string());
    write_json(fs::path(opts.out_dir) / "report.json",
               report_to_json(res.report, opts.deterministic));

    std::cout << "condition " << cc.cond.m_labeled_per_class << "+"
              << cc.cond.n_unlabeled_per_class << ", form " << to_string(tcfg.form) << ", "
              << res.report.steps << " steps\n";
    std::cout << "best val accuracy " << fmt_acc(res.report.best_val_accuracy) << " (epoch "
              << res.report.best_epoch << ")\n";
    std::cout << "test accuracy " << fmt_acc(res.report.test_accuracy) << "\n";
}

inline void cmd_eval(const RunConfig& rc, const CliOptions& opts) {
    require_section(rc.eval.has_value(), "eval", "eval");
    const std::string data_path = require_dataset(rc, "eval");
    const std::string ckpt_path = resolve_config_path(rc, rc.eval->checkpoint);
    if (!fs::exists(ckpt_path)) {
        throw ConfigError("checkpoint file not found: \"" + ckpt_path + "\"");
    }

    Checkpoint ckpt = load_checkpoint(ckpt_path);
    SignalDataset ds = read_dataset(data_path);
    if (ckpt.arch.num_classes != ds.num_classes) {
        throw ShapeError("checkpoint expects " + std::to_string(ckpt.arch.num_classes) +
                         " classes, dataset has " + std::to_string(ds.num_classes));
    }
    if (ckpt.arch.input_len != ds.sample_len) {
        throw ShapeError("checkpoint expects input length " +
                         std::to_string(ckpt.arch.input_len) + ", dataset has " +
                         std::to_string(ds.sample_len));
    }

    const std::vector<LabeledSample>* split = &ds.test;
    if (rc.eval->split == "val") split = &ds.val;
    if (rc.eval->split == "train") split = &ds.labeled;

    Model model(ckpt.arch);
    WeightMap weights =
        (rc.eval->weights == "live") ? ckpt.params.theta : ckpt.params.theta_ema;
    EvalResult er = evaluate(model, weights, *split, ds.num_classes);

    fs::create_directories(opts.out_dir);
    std::string csv = "class";
    for (int p = 0; p < ds.num_classes; ++p) csv += ",pred_" + std::to_string(p);
    csv += "\n";
    for (int c = 0; c < ds.num_classes; ++c) {
        csv += std::to_string(c);
        for (int p = 0; p < ds.num_classes; ++p) {
            csv += "," + std::to_string(er.confusion[c][p]);
        }
        csv += "\n";
    }
    const fs::path csv_path = fs::path(opts.out_dir) / "confusion.csv";
    write_text(csv_path, csv);

    std::cout << "accuracy " << fmt_acc(er.accuracy) << " on " << rc.eval->split << " ("
              << split->size() << " samples)\n";
    std::cout << "wrote " << csv_path.string() << "\n";
}

struct BenchRow {
    std::string form;
    std::string condition;
    std::string gamma;
    double best_accuracy = std::numeric_limits<double>::quiet_NaN();
    int m = -1, n = -1;
    int trials = 0;
    bool failed = false;
    std::string error;
};

inline void cmd_bench(const RunConfig& rc, const CliOptions& opts) {
    require_section(rc.arch.has_value(), "bench", "arch");
    require_section(rc.train.has_value(), "bench", "train");
    require_section(rc.bench.has_value(), "bench", "bench");
    const std::string data_path = require_dataset(rc, "bench");
    const BenchConfig& bench = *rc.bench;

    TrainConfig base = *rc.train;
    if (auto s = seed_override(opts)) base.seed = *s;

    std::vector<DataCondition> conditions = bench.conditions;
    if (conditions.empty()) {
        conditions.push_back(rc.condition ? rc.condition->cond : DataCondition{});
    }
    if (opts.supervised_only) {
        for (auto& c : conditions) c.n_unlabeled_per_class = 0;
    }
    std::vector<GammaSetting> gammas = bench.gammas;
    if (gammas.empty()) {
        GammaSetting g;
        g.off = (base.ema_mode == EmaMode::OFF);
        g.value = base.gamma;
        gammas.push_back(g);
    }

    SignalDataset raw = load_raw_dataset(data_path);

    struct Cell {
        ConsistencyForm form;
        DataCondition cond;
        GammaSetting gamma;
    };
    std::vector<Cell> cells;
    for (auto f : bench.forms) {
        for (const auto& c : conditions) {
            for (const auto& g : gammas) cells.push_back({f, c, g});
        }
    }

    fs::create_directories(opts.out_dir);
    std::vector<BenchRow> rows(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            BenchRow row;
            row.form = to_string(cell.form);
            row.condition = std::to_string(cell.cond.m_labeled_per_class) + "+" +
                            std::to_string(cell.cond.n_unlabeled_per_class);
            row.gamma = cell.gamma.off ? "off" : fmt_g(cell.gamma.value);
            row.trials = bench.trials;
            try {
                TrainConfig ccfg = base;
                ccfg.form = cell.form;
                if (cell.gamma.off) {
                    ccfg.ema_mode = EmaMode::OFF;
                } else {
                    if (ccfg.ema_mode == EmaMode::OFF) ccfg.ema_mode = EmaMode::SHADOW_ONLY;
                    ccfg.gamma = cell.gamma.value;
                }
                SignalDataset ds = assign_condition(raw, cell.cond, bench.condition_seed);
                StabilityResult sr =
                    stability_trials(ds, *rc.arch, ccfg, bench.trials, bench.good_threshold);
                row.best_accuracy = sr.best_accuracy;
                row.m = sr.m;
                row.n = sr.n;
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                if (row.failed) {
                    std::cout << "cell " << row.form << " " << row.condition << " gamma "
                              << row.gamma << ": FAILED (" << row.error << ")\n";
                } else {
                    std::cout << "cell " << row.form << " " << row.condition << " gamma "
                              << row.gamma << ": best " << fmt_acc(row.best_accuracy) << " m "
                              << row.m << " n " << row.n << "\n";
                }
                std::cout.flush();
            }
            rows[i] = std::move(row);
        }
    };

    const int jobs = std::max(1, opts.jobs);
    if (jobs == 1 || cells.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const int n_threads = std::min<std::size_t>(jobs, cells.size());
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Single writer, fixed cell order: output bytes do not depend on --jobs.
    std::string csv = "form,condition,gamma,best_accuracy,m,n,trials\n";
    for (const auto& row : rows) {
        csv += row.form + "," + row.condition + "," + row.gamma + "," +
               fmt_acc(row.best_accuracy) + "," + std::to_string(row.m) + "," +
               std::to_string(row.n) + "," + std::to_string(row.trials) + "\n";
    }
    const fs::path csv_path = fs::path(opts.out_dir) / "bench.csv";
    write_text(csv_path, csv);
    std::cout << "wrote " << csv_path.string() << " (" << rows.size() << " cells)\n";
}

inline void cmd_plot_loss(const RunConfig& rc, const CliOptions& opts) {
    require_section(rc.plot.has_value(), "plot-loss", "plot");
    const PlotConfig& plot = *rc.plot;
    const int C = plot.num_classes;
    const int N = plot.points;

    std::vector<double> xs(N);
    for (int i = 0; i < N; ++i) {
        xs[i] = 1.0 / C + (1.0 - 1.0 / C) * static_cast<double>(i) / (N - 1);
    }
    auto spread = [&](double p) {
        ProbVector v(static_cast<std::size_t>(C), (1.0 - p) / (C - 1));
        v[0] = p;
        return v;
    };

    std::vector<Series> series;
    std::string csv = "max_prob";
    for (double a : plot.alphas) csv += ",alpha=" + fmt_g(a);
    csv += "\n";
    for (double a : plot.alphas) {
        Series s;
        s.label = "alpha = " + fmt_g(a);
        s.x = xs;
        s.y.resize(xs.size());
        for (int i = 0; i < N; ++i) {
            const ProbVector p = spread(xs[i]);
            s.y[i] = scaled_cross_entropy(p, p, a);
        }
        series.push_back(std::move(s));
    }
    for (int i = 0; i < N; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9g", xs[i]);
        csv += buf;
        for (const auto& s : series) {
            std::snprintf(buf, sizeof(buf), "%.9g", s.y[i]);
            csv += ",";
            csv += buf;
        }
        csv += "\n";
    }

    fs::create_directories(opts.out_dir);
    const fs::path csv_path = fs::path(opts.out_dir) / "loss_curves.csv";
    const fs::path svg_path = fs::path(opts.out_dir) / "loss_curves.svg";
    write_text(csv_path, csv);
    write_line_chart(svg_path.string(), "Scaled cross-entropy, target = prediction",
                     "max probability", "H_alpha(p, p)", series);
    std::cout << "wrote " << csv_path.string() << "\n";
    std::cout << "wrote " << svg_path.string() << "\n";
}

inline void dispatch(const CliOptions& opts) {
    if (opts.config_path.empty()) throw ConfigError("a --config file is required");
    if (opts.out_dir.empty()) throw ConfigError("an --out directory is required");
    if (opts.jobs < 1) throw ConfigError("--jobs must be >= 1");
    RunConfig rc = load_run_config(opts.config_path);
    if (opts.command == "simulate") {
        cmd_simulate(rc, opts);
    } else if (opts.command == "train") {
        cmd_train(rc, opts);
    } else if (opts.command == "eval") {
        cmd_eval(rc, opts);
    } else if (opts.command == "bench") {
        cmd_bench(rc, opts);
    } else if (opts.command == "plot-loss") {
        cmd_plot_loss(rc, opts);
    } else {
        throw ConfigError("unknown command \"" + opts.command + "\"");
    }
}

} // namespace cli

/// Exit codes: 0 success, 2 config, 3 data format, 4 divergence, 1 anything else.
inline int run_cli(const CliOptions& opts) noexcept {
    try {
        cli::dispatch(opts);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DegenerateInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace sscsr
