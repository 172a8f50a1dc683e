#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sscsr/augment.hpp"
#include "sscsr/dataset.hpp"
#include "sscsr/errors.hpp"
#include "sscsr/losses.hpp"
#include "sscsr/netcore.hpp"
#include "sscsr/sigsim.hpp"
#include "sscsr/trainer.hpp"

namespace sscsr {

struct ConditionConfig {
    DataCondition cond;
    std::uint64_t seed = 1;
};

/// EMA setting for one bench cell: either disabled or a concrete decay value.
struct GammaSetting {
    bool off = false;
    double value = 0.9;
};

struct BenchConfig {
    std::vector<ConsistencyForm> forms = {ConsistencyForm::SWAPPED};
    std::vector<DataCondition> conditions; // empty: fall back to the condition section
    std::vector<GammaSetting> gammas;      // empty: fall back to the train section
    int trials = 5;
    double good_threshold = 0.8;
    std::uint64_t condition_seed = 1;

    void validate() const {
        if (forms.empty()) throw ConfigError("bench: forms must be non-empty");
        if (trials < 1) throw ConfigError("bench: trials must be >= 1");
        if (!(good_threshold > 0.0 && good_threshold < 1.0)) {
            throw ConfigError("bench: good_threshold must be in (0, 1)");
        }
        for (const auto& g : gammas) {
            if (!g.off && !(g.value >= 0.0 && g.value <= 1.0)) {
                throw ConfigError("bench: gamma values must be in [0, 1]");
            }
        }
        for (const auto& c : conditions) {
            if (c.m_labeled_per_class < 1) throw ConfigError("bench: condition m must be >= 1");
            if (c.n_unlabeled_per_class < 0) throw ConfigError("bench: condition n must be >= 0");
        }
    }
};

struct PlotConfig {
    std::vector<double> alphas = {0.0, 1.0, 2.0, 3.0, 4.0};
    int num_classes = 10;
    int points = 1000;

    void validate() const {
        if (alphas.empty()) throw ConfigError("plot: alphas must be non-empty");
        for (double a : alphas) {
            if (a < 0.0) throw ConfigError("plot: alphas must be >= 0");
        }
        if (num_classes < 2) throw ConfigError("plot: num_classes must be >= 2");
        if (points < 2) throw ConfigError("plot: points must be >= 2");
    }
};

struct EvalConfig {
    std::string checkpoint;
    std::string split = "test";    // test | val | train
    std::string weights = "ema";   // ema | live

    void validate() const {
        if (checkpoint.empty()) throw ConfigError("eval: checkpoint path is required");
        if (split != "test" && split != "val" && split != "train") {
            throw ConfigError("eval: split must be one of test, val, train");
        }
        if (weights != "ema" && weights != "live") {
            throw ConfigError("eval: weights must be ema or live");
        }
    }
};

struct RunConfig {
    std::optional<SimConfig> sim;
    std::optional<ArchConfig> arch;
    std::optional<TrainConfig> train;
    std::optional<ConditionConfig> condition;
    std::optional<BenchConfig> bench;
    std::optional<PlotConfig> plot;
    std::optional<EvalConfig> eval;
    std::string dataset_path; // empty when absent
    std::string base_dir;     // config file directory; relative paths resolve against it
};

namespace cfgjson {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& ctx) {
    if (!obj.is_object()) throw ConfigError(ctx + ": expected a JSON object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError(ctx + ": unknown key \"" + key + "\"");
    }
}

inline double get_double(const json& obj, const char* key, double def, const std::string& ctx) {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_number()) throw ConfigError(ctx + "." + key + ": expected a number");
    return obj.at(key).get<double>();
}

inline int get_int(const json& obj, const char* key, int def, const std::string& ctx) {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_number_integer()) {
        throw ConfigError(ctx + "." + key + ": expected an integer");
    }
    return obj.at(key).get<int>();
}

inline std::uint64_t get_seed(const json& obj, const char* key, std::uint64_t def,
                              const std::string& ctx) {
    if (!obj.contains(key)) return def;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0)) {
        throw ConfigError(ctx + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

inline bool get_bool(const json& obj, const char* key, bool def, const std::string& ctx) {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_boolean()) throw ConfigError(ctx + "." + key + ": expected a boolean");
    return obj.at(key).get<bool>();
}

inline std::string get_string(const json& obj, const char* key, const std::string& def,
                              const std::string& ctx) {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_string()) throw ConfigError(ctx + "." + key + ": expected a string");
    return obj.at(key).get<std::string>();
}

// SNR accepts a number or the string "inf" (noise-free sentinel).
inline double get_snr(const json& obj, const char* key, double def, const std::string& ctx) {
    if (!obj.contains(key)) return def;
    const json& v = obj.at(key);
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        throw ConfigError(ctx + "." + key + ": expected a number or \"inf\"");
    }
    if (!v.is_number()) throw ConfigError(ctx + "." + key + ": expected a number or \"inf\"");
    return v.get<double>();
}

inline SimConfig parse_sim(const json& j) {
    const std::string ctx = "sim";
    check_keys(j,
               {"num_devices", "samples_per_class", "sample_len", "oversample", "rolloff",
                "snr_db", "modulation", "seed", "rrc_span_symbols"},
               ctx);
    SimConfig s;
    s.num_devices = get_int(j, "num_devices", s.num_devices, ctx);
    s.samples_per_class = get_int(j, "samples_per_class", s.samples_per_class, ctx);
    s.sample_len = get_int(j, "sample_len", s.sample_len, ctx);
    s.oversample = get_int(j, "oversample", s.oversample, ctx);
    s.rolloff = get_double(j, "rolloff", s.rolloff, ctx);
    s.snr_db = get_snr(j, "snr_db", s.snr_db, ctx);
    s.modulation = modulation_from_string(get_string(j, "modulation", "qpsk", ctx));
    s.seed = get_seed(j, "seed", s.seed, ctx);
    s.rrc_span_symbols = get_int(j, "rrc_span_symbols", s.rrc_span_symbols, ctx);
    return s;
}

inline ArchConfig parse_arch(const json& j) {
    const std::string ctx = "arch";
    check_keys(j,
               {"input_len", "input_channels", "stem_kernels", "stem_size", "stem_stride",
                "num_res_blocks", "channels_per_stage", "num_classes"},
               ctx);
    ArchConfig a;
    a.input_len = get_int(j, "input_len", a.input_len, ctx);
    a.input_channels = get_int(j, "input_channels", a.input_channels, ctx);
    a.stem_kernels = get_int(j, "stem_kernels", a.stem_kernels, ctx);
    a.stem_size = get_int(j, "stem_size", a.stem_size, ctx);
    a.stem_stride = get_int(j, "stem_stride", a.stem_stride, ctx);
    a.num_res_blocks = get_int(j, "num_res_blocks", a.num_res_blocks, ctx);
    if (j.contains("channels_per_stage")) {
        const json& arr = j.at("channels_per_stage");
        if (!arr.is_array()) throw ConfigError("arch.channels_per_stage: expected an array");
        a.channels_per_stage.clear();
        for (const auto& v : arr) {
            if (!v.is_number_integer()) {
                throw ConfigError("arch.channels_per_stage: expected integers");
            }
            a.channels_per_stage.push_back(v.get<int>());
        }
    }
    a.num_classes = get_int(j, "num_classes", a.num_classes, ctx);
    return a;
}

inline AugmentConfig parse_augment(const json& j) {
    const std::string ctx = "train.augment";
    check_keys(j, {"transforms", "k_segments", "exclude_identity"}, ctx);
    AugmentConfig a;
    if (j.contains("transforms")) {
        const json& arr = j.at("transforms");
        if (!arr.is_array()) throw ConfigError(ctx + ".transforms: expected an array");
        a.transforms.clear();
        for (const auto& v : arr) {
            if (!v.is_string()) throw ConfigError(ctx + ".transforms: expected strings");
            a.transforms.push_back(transform_from_string(v.get<std::string>()));
        }
    }
    a.k_segments = get_int(j, "k_segments", a.k_segments, ctx);
    a.exclude_identity = get_bool(j, "exclude_identity", a.exclude_identity, ctx);
    return a;
}

inline StopGradTarget stop_grad_from_string(const std::string& s) {
    if (s == "default") return StopGradTarget::PerFormDefault;
    if (s == "on") return StopGradTarget::On;
    if (s == "off") return StopGradTarget::Off;
    throw ConfigError("train.stop_grad: expected default, on or off, got \"" + s + "\"");
}

inline TrainConfig parse_train(const json& j) {
    const std::string ctx = "train";
    check_keys(j,
               {"form", "alpha", "gamma", "tau", "lambda", "batch_labeled", "batch_unlabeled",
                "epochs", "lr", "seed", "ema_mode", "augment", "stop_grad", "verbose"},
               ctx);
    TrainConfig t;
    t.form = consistency_form_from_string(get_string(j, "form", "swapped", ctx));
    t.alpha = get_double(j, "alpha", t.alpha, ctx);
    t.gamma = get_double(j, "gamma", t.gamma, ctx);
    t.tau = get_double(j, "tau", t.tau, ctx);
    t.lambda = get_double(j, "lambda", t.lambda, ctx);
    t.batch_labeled = get_int(j, "batch_labeled", t.batch_labeled, ctx);
    t.batch_unlabeled = get_int(j, "batch_unlabeled", t.batch_unlabeled, ctx);
    t.epochs = get_int(j, "epochs", t.epochs, ctx);
    t.lr = get_double(j, "lr", t.lr, ctx);
    t.seed = get_seed(j, "seed", t.seed, ctx);
    t.ema_mode = ema_mode_from_string(get_string(j, "ema_mode", "shadow", ctx));
    if (j.contains("augment")) t.augment = parse_augment(j.at("augment"));
    t.stop_grad = stop_grad_from_string(get_string(j, "stop_grad", "default", ctx));
    t.verbose = get_bool(j, "verbose", t.verbose, ctx);
    return t;
}

inline ConditionConfig parse_condition(const json& j) {
    const std::string ctx = "condition";
    check_keys(j, {"m", "n", "seed"}, ctx);
    ConditionConfig c;
    c.cond.m_labeled_per_class = get_int(j, "m", c.cond.m_labeled_per_class, ctx);
    c.cond.n_unlabeled_per_class = get_int(j, "n", c.cond.n_unlabeled_per_class, ctx);
    c.seed = get_seed(j, "seed", c.seed, ctx);
    return c;
}

inline BenchConfig parse_bench(const json& j) {
    const std::string ctx = "bench";
    check_keys(j, {"forms", "conditions", "gammas", "trials", "good_threshold", "condition_seed"},
               ctx);
    BenchConfig b;
    if (j.contains("forms")) {
        const json& arr = j.at("forms");
        if (!arr.is_array()) throw ConfigError("bench.forms: expected an array");
        b.forms.clear();
        for (const auto& v : arr) {
            if (!v.is_string()) throw ConfigError("bench.forms: expected strings");
            b.forms.push_back(consistency_form_from_string(v.get<std::string>()));
        }
    }
    if (j.contains("conditions")) {
        const json& arr = j.at("conditions");
        if (!arr.is_array()) throw ConfigError("bench.conditions: expected an array");
        for (const auto& v : arr) {
            check_keys(v, {"m", "n"}, "bench.conditions[]");
            DataCondition c;
            c.m_labeled_per_class = get_int(v, "m", c.m_labeled_per_class, "bench.conditions[]");
            c.n_unlabeled_per_class =
                get_int(v, "n", c.n_unlabeled_per_class, "bench.conditions[]");
            b.conditions.push_back(c);
        }
    }
    if (j.contains("gammas")) {
        const json& arr = j.at("gammas");
        if (!arr.is_array()) throw ConfigError("bench.gammas: expected an array");
        for (const auto& v : arr) {
            GammaSetting g;
            if (v.is_string()) {
                if (v.get<std::string>() != "off") {
                    throw ConfigError("bench.gammas: expected numbers or \"off\"");
                }
                g.off = true;
            } else if (v.is_number()) {
                g.value = v.get<double>();
            } else {
                throw ConfigError("bench.gammas: expected numbers or \"off\"");
            }
            b.gammas.push_back(g);
        }
    }
    b.trials = get_int(j, "trials", b.trials, ctx);
    b.good_threshold = get_double(j, "good_threshold", b.good_threshold, ctx);
    b.condition_seed = get_seed(j, "condition_seed", b.condition_seed, ctx);
    return b;
}

inline PlotConfig parse_plot(const json& j) {
    const std::string ctx = "plot";
    check_keys(j, {"alphas", "num_classes", "points"}, ctx);
    PlotConfig p;
    if (j.contains("alphas")) {
        const json& arr = j.at("alphas");
        if (!arr.is_array()) throw ConfigError("plot.alphas: expected an array");
        p.alphas.clear();
        for (const auto& v : arr) {
            if (!v.is_number()) throw ConfigError("plot.alphas: expected numbers");
            p.alphas.push_back(v.get<double>());
        }
    }
    p.num_classes = get_int(j, "num_classes", p.num_classes, ctx);
    p.points = get_int(j, "points", p.points, ctx);
    return p;
}

inline EvalConfig parse_eval(const json& j) {
    const std::string ctx = "eval";
    check_keys(j, {"checkpoint", "split", "weights"}, ctx);
    EvalConfig e;
    e.checkpoint = get_string(j, "checkpoint", e.checkpoint, ctx);
    e.split = get_string(j, "split", e.split, ctx);
    e.weights = get_string(j, "weights", e.weights, ctx);
    return e;
}

} // namespace cfgjson

inline RunConfig parse_run_config(const nlohmann::json& root, const std::string& base_dir) {
    cfgjson::check_keys(root, {"sim", "arch", "train", "condition", "bench", "plot", "eval",
                               "dataset"},
                        "config");
    RunConfig rc;
    rc.base_dir = base_dir;
    if (root.contains("sim")) rc.sim = cfgjson::parse_sim(root.at("sim"));
    if (root.contains("arch")) rc.arch = cfgjson::parse_arch(root.at("arch"));
    if (root.contains("train")) rc.train = cfgjson::parse_train(root.at("train"));
    if (root.contains("condition")) rc.condition = cfgjson::parse_condition(root.at("condition"));
    if (root.contains("bench")) rc.bench = cfgjson::parse_bench(root.at("bench"));
    if (root.contains("plot")) rc.plot = cfgjson::parse_plot(root.at("plot"));
    if (root.contains("eval")) rc.eval = cfgjson::parse_eval(root.at("eval"));
    if (root.contains("dataset")) {
        if (!root.at("dataset").is_string()) {
            throw ConfigError("config.dataset: expected a path string");
        }
        rc.dataset_path = root.at("dataset").get<std::string>();
    }

    // Every present section validates up front, used or not.
    if (rc.sim) rc.sim->validate();
    if (rc.arch) rc.arch->validate();
    if (rc.train) rc.train->validate();
    if (rc.condition) {
        if (rc.condition->cond.m_labeled_per_class < 1) {
            throw ConfigError("condition: m must be >= 1");
        }
        if (rc.condition->cond.n_unlabeled_per_class < 0) {
            throw ConfigError("condition: n must be >= 0");
        }
    }
    if (rc.bench) rc.bench->validate();
    if (rc.plot) rc.plot->validate();
    if (rc.eval) rc.eval->validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file \"" + path + "\"");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_run_config(root, std::filesystem::path(path).parent_path().string());
}

/// Resolves a config-referenced path against the config file's directory.
inline std::string resolve_config_path(const RunConfig& rc, const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || rc.base_dir.empty()) return p;
    return (std::filesystem::path(rc.base_dir) / fp).string();
}

} // namespace sscsr
