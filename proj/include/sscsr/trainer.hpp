// sscsr - the semi-supervised training loop: interleaved labeled/unlabeled
// batches, combined loss L_s + L_u, Adam updates, per-step EMA shadow
// maintenance, and the train-on-EMA epoch swap. Plus evaluation and the
// repeated-trial stability tally.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sscsr/augment.hpp"
#include "sscsr/dataset.hpp"
#include "sscsr/errors.hpp"
#include "sscsr/iq.hpp"
#include "sscsr/losses.hpp"
#include "sscsr/netcore.hpp"
#include "sscsr/rng.hpp"

namespace sscsr {

enum class EmaMode { OFF, SHADOW_ONLY, TRAIN_ON_EMA };

inline EmaMode ema_mode_from_string(const std::string& s) {
    if (s == "off") return EmaMode::OFF;
    if (s == "shadow") return EmaMode::SHADOW_ONLY;
    if (s == "train_on_ema") return EmaMode::TRAIN_ON_EMA;
    throw ConfigError("unknown ema mode \"" + s + "\"");
}

inline std::string to_string(EmaMode m) {
    switch (m) {
        case EmaMode::OFF: return "off";
        case EmaMode::SHADOW_ONLY: return "shadow";
        case EmaMode::TRAIN_ON_EMA: return "train_on_ema";
    }
    return "?";
}

struct TrainConfig {
    ConsistencyForm form = ConsistencyForm::SWAPPED;
    double alpha = 0.0;
    double gamma = 0.9;
    double tau = 0.95;
    double lambda = 1.0;
    int batch_labeled = 32;
    int batch_unlabeled = 128;
    int epochs = 60;
    double lr = 0.001;
    std::uint64_t seed = 1;
    EmaMode ema_mode = EmaMode::SHADOW_ONLY;
    AugmentConfig augment;
    StopGradTarget stop_grad = StopGradTarget::PerFormDefault;
    bool verbose = false;

    void validate() const {
        if (alpha < 0.0) throw ConfigError("train: alpha must be >= 0");
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("train: gamma must be in [0, 1]");
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("train: tau must be in (0, 1]");
        if (lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
        if (batch_labeled < 1) throw ConfigError("train: batch_labeled must be >= 1");
        if (batch_unlabeled < 1) throw ConfigError("train: batch_unlabeled must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    }
};

struct RunReport {
    std::vector<double> epoch_loss_s, epoch_loss_u; // per-epoch means
    std::vector<double> val_accuracy;               // per epoch
    std::vector<double> step_loss_s, step_loss_u, step_loss_total;
    double test_accuracy = 0.0;
    std::vector<std::vector<int>> confusion; // [true][predicted]
    double retention_rate = -1.0;            // pseudo-label form only
    double wall_seconds = 0.0;
    int ema_swap_count = 0;
    int steps = 0;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
};

/// shadow <- gamma * shadow + (1 - gamma) * live, every entry including the
/// batch-norm running statistics.
inline void ema_update(WeightMap& shadow, const WeightMap& live, double gamma) {
    if (shadow.size() != live.size()) throw ShapeError("ema_update: weight map mismatch");
    for (auto& [name, t] : shadow) {
        const auto it = live.find(name);
        if (it == live.end() || !it->second.same_shape(t)) {
            throw ShapeError("ema_update: mismatch at " + name);
        }
        const Tensor& lv = it->second;
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            t.data[i] = gamma * t.data[i] + (1.0 - gamma) * lv.data[i];
        }
    }
}

namespace detail {

// [B, 2, L] tensor from complex rows: channel 0 = I, channel 1 = Q.
inline Tensor batch_tensor(const std::vector<const IqVector*>& rows) {
    const int B = static_cast<int>(rows.size());
    const int L = static_cast<int>(rows[0]->size());
    Tensor x({B, 2, L});
    for (int b = 0; b < B; ++b) {
        const IqVector& iq = *rows[static_cast<std::size_t>(b)];
        double* re = &x.data[static_cast<std::size_t>(b) * 2 * L];
        double* im = re + L;
        for (int t = 0; t < L; ++t) {
            re[t] = iq[static_cast<std::size_t>(t)].real();
            im[t] = iq[static_cast<std::size_t>(t)].imag();
        }
    }
    return x;
}

inline std::vector<ProbVector> prob_rows(const Tensor& probs) {
    const int B = probs.dim(0), C = probs.dim(1);
    std::vector<ProbVector> rows(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        rows[static_cast<std::size_t>(b)].assign(
            probs.data.begin() + static_cast<std::ptrdiff_t>(b) * C,
            probs.data.begin() + static_cast<std::ptrdiff_t>(b + 1) * C);
    }
    return rows;
}

inline Tensor grad_tensor(const std::vector<ProbVector>& rows) {
    const int B = static_cast<int>(rows.size());
    const int C = static_cast<int>(rows[0].size());
    Tensor g({B, C});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            g.data[static_cast<std::size_t>(b) * C + c] = rows[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)];
        }
    }
    return g;
}

inline void accumulate(GradMap& into, const GradMap& from) {
    for (auto& [name, t] : into) {
        const Tensor& f = from.at(name);
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += f.data[i];
    }
}

inline void ensure_finite_loss(double loss, int epoch, int step) {
    if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss " + std::to_string(loss) + " at epoch " +
                              std::to_string(epoch) + " step " + std::to_string(step));
    }
}

// RNG stream tags (arbitrary distinct constants, fixed forever).
inline constexpr std::uint64_t kTagInit = 0x696e6974ULL;     // model init
inline constexpr std::uint64_t kTagLabOrder = 0x6c6f7264ULL; // labeled cycler
inline constexpr std::uint64_t kTagUnlOrder = 0x756f7264ULL; // unlabeled epoch order
inline constexpr std::uint64_t kTagLabAug = 0x6c617567ULL;   // labeled augmentation
inline constexpr std::uint64_t kTagUnlAug = 0x75617567ULL;   // unlabeled augmentation

} // namespace detail

/// One resolved training step: augmented labeled batch plus (optionally) the
/// original/augmented views of an unlabeled batch.
struct StepBatch {
    Tensor labeled_x;
    std::vector<OneHotLabel> labels;
    bool has_unlabeled = false;
    Tensor unl_orig_x;
    Tensor unl_aug_x;
};

struct StepResult {
    double loss_s = 0.0;
    double loss_u = 0.0;
    double loss_total = 0.0;
    int retained = 0;
    int retained_total = 0;
    GradMap grads;
};

/// Combined loss L = L_s + L_u and its parameter gradients for one step.
/// Runs three TRAIN-mode forward passes (labeled, unlabeled original,
/// unlabeled augmented); each computes its own batch statistics.
inline StepResult combined_step(const Model& model, WeightMap& theta, const StepBatch& batch,
                                const TrainConfig& cfg) {
    StepResult out;

    auto fs = model.forward(theta, batch.labeled_x, Mode::TRAIN);
    auto sup = supervised_loss_grad(detail::prob_rows(fs.probs), batch.labels);
    out.loss_s = sup.value;
    out.grads = model.backward(theta, fs.cache, detail::grad_tensor(sup.grad));

    if (batch.has_unlabeled) {
        auto fo = model.forward(theta, batch.unl_orig_x, Mode::TRAIN);
        auto fa = model.forward(theta, batch.unl_aug_x, Mode::TRAIN);
        const UnsupParams up{cfg.alpha, cfg.tau, cfg.lambda};
        auto uns = unsupervised_loss_grad(detail::prob_rows(fo.probs),
                                          detail::prob_rows(fa.probs), cfg.form, up,
                                          cfg.stop_grad);
        out.loss_u = uns.result.value;
        out.retained = uns.result.retained;
        out.retained_total = uns.result.total;
        detail::accumulate(out.grads,
                           model.backward(theta, fo.cache, detail::grad_tensor(uns.grad_orig)));
        detail::accumulate(out.grads,
                           model.backward(theta, fa.cache, detail::grad_tensor(uns.grad_aug)));
    }

    out.loss_total = out.loss_s + out.loss_u;
    return out;
}

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::vector<int>> confusion;
};

/// EVAL-mode accuracy and confusion counts over a labeled split.
/// Argmax prediction with lowest-index tie-break.
inline EvalResult evaluate(const Model& model, WeightMap& weights,
                           const std::vector<LabeledSample>& split, int num_classes,
                           int batch_size = 64) {
    if (split.empty()) throw DegenerateInputError("evaluate: empty split");
    if (batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");
    EvalResult out;
    out.confusion.assign(static_cast<std::size_t>(num_classes),
                         std::vector<int>(static_cast<std::size_t>(num_classes), 0));
    std::size_t correct = 0;
    for (std::size_t at = 0; at < split.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(split.size(), at + static_cast<std::size_t>(batch_size));
        std::vector<const IqVector*> rows;
        rows.reserve(end - at);
        for (std::size_t i = at; i < end; ++i) rows.push_back(&split[i].iq);
        auto r = model.forward(weights, detail::batch_tensor(rows), Mode::EVAL);
        const int C = r.probs.dim(1);
        for (std::size_t i = at; i < end; ++i) {
            const double* p = &r.probs.data[(i - at) * static_cast<std::size_t>(C)];
            int pred = 0;
            for (int c = 1; c < C; ++c) {
                if (p[c] > p[pred]) pred = c;
            }
            const int truth = split[i].label;
            out.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]++;
            if (pred == truth) ++correct;
        }
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    return out;
}

struct TrainResult {
    ParamSet params; // best-validation snapshot
    AdamState opt;   // final-step optimizer state
    RunReport report;
};

/// Algorithm: per step, draw a labeled batch (strongly augmented) and an
/// unlabeled batch; L = L_s + L_u; Adam step; EMA shadow update. One epoch
/// traverses the unlabeled pool once (or, with no unlabeled data, the labeled
/// pool). TRAIN_ON_EMA copies the shadow into the live weights at each epoch
/// end. Returns the parameters of the best-validation epoch.
inline TrainResult train(const SignalDataset& ds, const ArchConfig& arch,
                         const TrainConfig& cfg) {
    cfg.validate();
    arch.validate();
    if (ds.num_classes != arch.num_classes) {
        throw ConfigError("train: dataset has " + std::to_string(ds.num_classes) +
                          " classes, arch expects " + std::to_string(arch.num_classes));
    }
    if (ds.sample_len != arch.input_len) {
        throw ConfigError("train: dataset sample_len " + std::to_string(ds.sample_len) +
                          " != arch input_len " + std::to_string(arch.input_len));
    }
    if (ds.labeled.empty()) throw ConfigError("train: labeled set is empty");
    std::vector<int> class_counts(static_cast<std::size_t>(ds.num_classes), 0);
    for (const auto& s : ds.labeled) {
        if (s.label < 0 || s.label >= ds.num_classes) {
            throw ConfigError("train: label out of range in labeled set");
        }
        class_counts[static_cast<std::size_t>(s.label)]++;
    }
    for (int c = 0; c < ds.num_classes; ++c) {
        if (class_counts[static_cast<std::size_t>(c)] == 0) {
            throw ConfigError("train: class " + std::to_string(c) + " has no labeled samples");
        }
    }
    cfg.augment.validate(static_cast<std::size_t>(ds.sample_len));

    const auto t0 = std::chrono::steady_clock::now();
    Model model(arch);
    RngStream init_rng(hash_seed(cfg.seed, detail::kTagInit));
    ParamSet params = model.init_params(init_rng);
    AdamState opt;

    std::vector<std::size_t> lab_order(ds.labeled.size());
    std::iota(lab_order.begin(), lab_order.end(), std::size_t{0});
    RngStream lab_rng(hash_seed(cfg.seed, detail::kTagLabOrder));
    lab_rng.shuffle(lab_order);
    std::size_t lab_pos = 0;
    auto next_labeled = [&]() {
        if (lab_pos == lab_order.size()) {
            lab_rng.shuffle(lab_order);
            lab_pos = 0;
        }
        return lab_order[lab_pos++];
    };

    const bool has_u = !ds.unlabeled.empty();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_labeled);
    const std::size_t bu = static_cast<std::size_t>(cfg.batch_unlabeled);
    const std::size_t steps_per_epoch =
        has_u ? (ds.unlabeled.size() + bu - 1) / bu : (ds.labeled.size() + bs - 1) / bs;

    RunReport report;
    ParamSet best_params = params;
    double best_val = -1.0;
    long long retained_sum = 0, retained_total_sum = 0;
    int global_step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> u_order;
        if (has_u) {
            RngStream uo(hash_seed(cfg.seed, detail::kTagUnlOrder,
                                   static_cast<std::uint64_t>(epoch)));
            u_order = uo.permutation(ds.unlabeled.size());
        }
        double epoch_s = 0.0, epoch_u = 0.0;

        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            StepBatch batch;
            std::vector<IqVector> lab_aug(bs);
            std::vector<const IqVector*> lab_rows(bs);
            batch.labels.resize(bs);
            for (std::size_t slot = 0; slot < bs; ++slot) {
                const std::size_t idx = next_labeled();
                RngStream arng(hash_seed(cfg.seed, detail::kTagLabAug,
                                         static_cast<std::uint64_t>(global_step), slot));
                lab_aug[slot] = composite_augment(ds.labeled[idx].iq, cfg.augment, arng);
                lab_rows[slot] = &lab_aug[slot];
                batch.labels[slot] = OneHotLabel{ds.labeled[idx].label};
            }
            batch.labeled_x = detail::batch_tensor(lab_rows);

            std::vector<IqVector> unl_aug;
            if (has_u) {
                const std::size_t from = step * bu;
                const std::size_t to = std::min(ds.unlabeled.size(), from + bu);
                std::vector<const IqVector*> orig_rows, aug_rows;
                orig_rows.reserve(to - from);
                aug_rows.reserve(to - from);
                unl_aug.resize(to - from);
                for (std::size_t i = from; i < to; ++i) {
                    const IqVector& raw = ds.unlabeled[u_order[i]];
                    orig_rows.push_back(&raw);
                    RngStream arng(hash_seed(cfg.seed, detail::kTagUnlAug,
                                             static_cast<std::uint64_t>(global_step),
                                             i - from));
                    unl_aug[i - from] = composite_augment(raw, cfg.augment, arng);
                    aug_rows.push_back(&unl_aug[i - from]);
                }
                batch.has_unlabeled = true;
                batch.unl_orig_x = detail::batch_tensor(orig_rows);
                batch.unl_aug_x = detail::batch_tensor(aug_rows);
            }

            StepResult sr = combined_step(model, params.theta, batch, cfg);
            detail::ensure_finite_loss(sr.loss_total, epoch, step);
            adam_step(params, sr.grads, opt, cfg.lr);
            if (cfg.ema_mode != EmaMode::OFF) {
                ema_update(params.theta_ema, params.theta, cfg.gamma);
            }

            report.step_loss_s.push_back(sr.loss_s);
            report.step_loss_u.push_back(sr.loss_u);
            report.step_loss_total.push_back(sr.loss_total);
            epoch_s += sr.loss_s;
            epoch_u += sr.loss_u;
            retained_sum += sr.retained;
            retained_total_sum += sr.retained_total;
            ++global_step;
        }

        if (cfg.ema_mode == EmaMode::TRAIN_ON_EMA) {
            params.theta = params.theta_ema;
            ++report.ema_swap_count;
        }

        report.epoch_loss_s.push_back(epoch_s / static_cast<double>(steps_per_epoch));
        report.epoch_loss_u.push_back(epoch_u / static_cast<double>(steps_per_epoch));

        double vacc = 0.0;
        if (!ds.val.empty()) {
            WeightMap& eval_w =
                (cfg.ema_mode == EmaMode::OFF) ? params.theta : params.theta_ema;
            vacc = evaluate(model, eval_w, ds.val, ds.num_classes).accuracy;
            if (vacc > best_val) {
                best_val = vacc;
                best_params = params;
                report.best_epoch = epoch;
            }
        }
        report.val_accuracy.push_back(vacc);
        if (cfg.verbose) {
            std::printf("epoch %4d  loss_s %.6f  loss_u %.6f  val_acc %.4f\n", epoch,
                        report.epoch_loss_s.back(), report.epoch_loss_u.back(), vacc);
            std::fflush(stdout);
        }
    }

    if (ds.val.empty()) best_params = params;
    // With EMA off the shadow never updates; mirror it so downstream consumers
    // (checkpoints, eval) see one consistent set of weights.
    if (cfg.ema_mode == EmaMode::OFF) best_params.theta_ema = best_params.theta;
    report.best_val_accuracy = std::max(best_val, 0.0);
    report.steps = global_step;
    if (cfg.form == ConsistencyForm::CE_PSEUDO && retained_total_sum > 0) {
        report.retention_rate =
            static_cast<double>(retained_sum) / static_cast<double>(retained_total_sum);
    }

    if (!ds.test.empty()) {
        WeightMap& test_w =
            (cfg.ema_mode == EmaMode::OFF) ? best_params.theta : best_params.theta_ema;
        auto er = evaluate(model, test_w, ds.test, ds.num_classes);
        report.test_accuracy = er.accuracy;
        report.confusion = std::move(er.confusion);
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best_params), std::move(opt), std::move(report)};
}

// ------------------------- repeated-trial stability -------------------------

struct StabilityResult {
    int m = 0; // runs at or above the good threshold
    int n = 0; // runs stuck at chance level
    double best_accuracy = 0.0;
    std::vector<double> accuracies;
    int diverged = 0;
};

/// Pure tally: m counts accuracies >= good_threshold, n counts accuracies at
/// chance level (<= 1/C + 0.05). The threshold must sit above the chance band
/// so the two categories stay disjoint.
inline void tally_stability(const std::vector<double>& accuracies, double good_threshold,
                            int num_classes, int& m, int& n) {
    const double chance_band = 1.0 / static_cast<double>(num_classes) + 0.05;
    if (good_threshold <= chance_band) {
        throw ConfigError("stability: good_threshold must exceed 1/C + 0.05");
    }
    m = 0;
    n = 0;
    for (double a : accuracies) {
        if (a >= good_threshold) ++m;
        if (a <= chance_band) ++n;
    }
}

/// Re-runs `train` with seeds seed+0 .. seed+trials-1. A diverged run counts
/// as a chance-level outcome rather than aborting the sweep.
inline StabilityResult stability_trials(const SignalDataset& ds, const ArchConfig& arch,
                                        const TrainConfig& cfg, int trials,
                                        double good_threshold) {
    if (trials < 1) throw ConfigError("stability: trials must be >= 1");
    StabilityResult out;
    out.accuracies.reserve(static_cast<std::size_t>(trials));
    for (int t = 0; t < trials; ++t) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + static_cast<std::uint64_t>(t);
        double acc;
        try {
            acc = train(ds, arch, c).report.test_accuracy;
        } catch (const DivergenceError&) {
            acc = 1.0 / static_cast<double>(arch.num_classes);
            ++out.diverged;
        }
        out.accuracies.push_back(acc);
    }
    tally_stability(out.accuracies, good_threshold, arch.num_classes, out.m, out.n);
    out.best_accuracy = *std::max_element(out.accuracies.begin(), out.accuracies.end());
    return out;
}

} // namespace sscsr
