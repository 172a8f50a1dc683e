// sscsr - consistency and supervised losses over probability vectors.
//
// All losses operate on points of the probability simplex. Predictions are
// clamped to [1e-7, 1] inside every log so no loss or gradient can produce
// non-finite values from a valid softmax output.
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sscsr/errors.hpp"

namespace sscsr {

using ProbVector = std::vector<double>;

// Hard class label; stands for the one-hot vector with a 1 at class_index.
struct OneHotLabel {
    int class_index = 0;
};

enum class ConsistencyForm { SWAPPED, CE, KL, MSE, CE_PSEUDO };

inline std::string to_string(ConsistencyForm f) {
    switch (f) {
        case ConsistencyForm::SWAPPED: return "swapped";
        case ConsistencyForm::CE: return "ce";
        case ConsistencyForm::KL: return "kl";
        case ConsistencyForm::MSE: return "mse";
        case ConsistencyForm::CE_PSEUDO: return "ce_pseudo";
    }
    throw ConfigError("unknown consistency form");
}

inline ConsistencyForm consistency_form_from_string(const std::string& s) {
    if (s == "swapped") return ConsistencyForm::SWAPPED;
    if (s == "ce") return ConsistencyForm::CE;
    if (s == "kl") return ConsistencyForm::KL;
    if (s == "mse") return ConsistencyForm::MSE;
    if (s == "ce_pseudo") return ConsistencyForm::CE_PSEUDO;
    throw ConfigError("unknown consistency form \"" + s + "\"");
}

constexpr double kProbFloor = 1e-7;

inline double clamp_prob(double p) {
    if (p < kProbFloor) return kProbFloor;
    if (p > 1.0) return 1.0;
    return p;
}

// 1 where the clamp is inactive, 0 where it flattens the function.
inline double clamp_pass(double p) { return (p >= kProbFloor && p <= 1.0) ? 1.0 : 0.0; }

namespace detail {

inline void check_same_size(const ProbVector& a, const ProbVector& b, const char* op) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": dimension mismatch " +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

// Per-class scaling weight w(t) = (1-t)^a * t and its derivative.
inline double focal_weight(double t, double alpha) {
    if (alpha == 0.0) return t;
    return std::pow(std::max(1.0 - t, 0.0), alpha) * t;
}

inline double focal_weight_deriv(double t, double alpha) {
    if (alpha == 0.0) return 1.0;
    const double om = std::max(1.0 - t, 0.0);
    if (om == 0.0) return alpha > 1.0 ? 0.0 : (alpha == 1.0 ? -1.0 : 0.0);
    return std::pow(om, alpha) - alpha * t * std::pow(om, alpha - 1.0);
}

} // namespace detail

/// H(target, pred) = -sum_k target_k log pred_k
inline double cross_entropy(const ProbVector& target, const ProbVector& pred) {
    detail::check_same_size(target, pred, "cross_entropy");
    double acc = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) {
        if (target[k] <= 0.0) continue;
        acc -= target[k] * std::log(clamp_prob(pred[k]));
    }
    return acc;
}

/// KL(p || q) = -sum_k p_k log(q_k / p_k); terms with p_k = 0 contribute 0.
inline double kl_div(const ProbVector& p, const ProbVector& q) {
    detail::check_same_size(p, q, "kl_div");
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= 0.0) continue;
        acc += p[k] * (std::log(clamp_prob(p[k])) - std::log(clamp_prob(q[k])));
    }
    return acc;
}

/// Squared Euclidean distance ||p - q||^2.
inline double mse_consistency(const ProbVector& p, const ProbVector& q) {
    detail::check_same_size(p, q, "mse_consistency");
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double d = p[k] - q[k];
        acc += d * d;
    }
    return acc;
}

/// H_a(target, pred) = -sum_k (1 - target_k)^a target_k log pred_k.
/// a = 0 recovers standard cross-entropy exactly.
inline double scaled_cross_entropy(const ProbVector& target, const ProbVector& pred,
                                   double alpha) {
    if (alpha < 0.0) throw ConfigError("scaled_cross_entropy: alpha must be >= 0");
    detail::check_same_size(target, pred, "scaled_cross_entropy");
    if (alpha == 0.0) return cross_entropy(target, pred);
    double acc = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) {
        if (target[k] <= 0.0) continue;
        acc -= detail::focal_weight(target[k], alpha) * std::log(clamp_prob(pred[k]));
    }
    return acc;
}

/// Symmetric consistency loss: (H_a(p, q) + H_a(q, p)) / 2.
inline double swapped_prediction_loss(const ProbVector& p, const ProbVector& q,
                                      double alpha) {
    return 0.5 * (scaled_cross_entropy(p, q, alpha) + scaled_cross_entropy(q, p, alpha));
}

/// Hard label at argmax(p) when max(p) >= tau, otherwise absent.
/// Ties break toward the lowest index.
inline std::optional<OneHotLabel> pseudo_label(const ProbVector& p, double tau) {
    int best = 0;
    for (std::size_t k = 1; k < p.size(); ++k) {
        if (p[k] > p[best]) best = static_cast<int>(k);
    }
    if (p.empty() || p[static_cast<std::size_t>(best)] < tau) return std::nullopt;
    return OneHotLabel{best};
}

// ---------------------------------------------------------------------------
// Gradients. Every d/dx below matches central finite differences of the value
// functions above on clamp-interior inputs.
// ---------------------------------------------------------------------------

struct PairGrad {
    ProbVector d_first;  // d(loss)/d(first argument)
    ProbVector d_second; // d(loss)/d(second argument)
};

inline PairGrad scaled_cross_entropy_grads(const ProbVector& target, const ProbVector& pred,
                                           double alpha) {
    if (alpha < 0.0) throw ConfigError("scaled_cross_entropy: alpha must be >= 0");
    detail::check_same_size(target, pred, "scaled_cross_entropy");
    const std::size_t c = target.size();
    PairGrad g{ProbVector(c, 0.0), ProbVector(c, 0.0)};
    for (std::size_t k = 0; k < c; ++k) {
        const double logq = std::log(clamp_prob(pred[k]));
        g.d_first[k] = -detail::focal_weight_deriv(target[k], alpha) * logq;
        const double w = target[k] <= 0.0 ? 0.0 : detail::focal_weight(target[k], alpha);
        g.d_second[k] = -w / clamp_prob(pred[k]) * clamp_pass(pred[k]);
    }
    return g;
}

inline PairGrad swapped_prediction_grads(const ProbVector& p, const ProbVector& q,
                                         double alpha) {
    PairGrad a = scaled_cross_entropy_grads(p, q, alpha); // H_a(p, q)
    PairGrad b = scaled_cross_entropy_grads(q, p, alpha); // H_a(q, p)
    const std::size_t c = p.size();
    PairGrad g{ProbVector(c, 0.0), ProbVector(c, 0.0)};
    for (std::size_t k = 0; k < c; ++k) {
        g.d_first[k] = 0.5 * (a.d_first[k] + b.d_second[k]);
        g.d_second[k] = 0.5 * (a.d_second[k] + b.d_first[k]);
    }
    return g;
}

inline PairGrad kl_grads(const ProbVector& p, const ProbVector& q) {
    detail::check_same_size(p, q, "kl_div");
    const std::size_t c = p.size();
    PairGrad g{ProbVector(c, 0.0), ProbVector(c, 0.0)};
    for (std::size_t k = 0; k < c; ++k) {
        const double lp = std::log(clamp_prob(p[k]));
        const double lq = std::log(clamp_prob(q[k]));
        double dp = lp - lq;
        if (p[k] > 0.0) dp += p[k] / clamp_prob(p[k]) * clamp_pass(p[k]);
        g.d_first[k] = dp;
        g.d_second[k] = (p[k] <= 0.0) ? 0.0 : -p[k] / clamp_prob(q[k]) * clamp_pass(q[k]);
    }
    return g;
}

inline PairGrad mse_grads(const ProbVector& p, const ProbVector& q) {
    detail::check_same_size(p, q, "mse_consistency");
    const std::size_t c = p.size();
    PairGrad g{ProbVector(c, 0.0), ProbVector(c, 0.0)};
    for (std::size_t k = 0; k < c; ++k) {
        const double d = 2.0 * (p[k] - q[k]);
        g.d_first[k] = d;
        g.d_second[k] = -d;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch losses
// ---------------------------------------------------------------------------

/// Mean of H(label, pred) over the batch.
inline double supervised_loss(const std::vector<ProbVector>& preds,
                              const std::vector<OneHotLabel>& labels) {
    if (preds.empty()) throw DegenerateInputError("supervised_loss: empty batch");
    if (preds.size() != labels.size()) {
        throw ShapeError("supervised_loss: batch size mismatch");
    }
    double acc = 0.0;
    for (std::size_t b = 0; b < preds.size(); ++b) {
        const auto k = static_cast<std::size_t>(labels[b].class_index);
        if (k >= preds[b].size()) throw ShapeError("supervised_loss: label out of range");
        acc -= std::log(clamp_prob(preds[b][k]));
    }
    return acc / static_cast<double>(preds.size());
}

struct BatchLossGrad {
    double value = 0.0;
    std::vector<ProbVector> grad; // dL/dpred per batch element
};

inline BatchLossGrad supervised_loss_grad(const std::vector<ProbVector>& preds,
                                          const std::vector<OneHotLabel>& labels) {
    BatchLossGrad out;
    out.value = supervised_loss(preds, labels);
    const double inv_b = 1.0 / static_cast<double>(preds.size());
    out.grad.reserve(preds.size());
    for (std::size_t b = 0; b < preds.size(); ++b) {
        ProbVector g(preds[b].size(), 0.0);
        const auto k = static_cast<std::size_t>(labels[b].class_index);
        g[k] = -inv_b / clamp_prob(preds[b][k]) * clamp_pass(preds[b][k]);
        out.grad.push_back(std::move(g));
    }
    return out;
}

struct UnsupParams {
    double alpha = 0.0;  // scaling exponent for the swapped form
    double tau = 0.95;   // pseudo-label confidence threshold
    double lambda = 1.0; // consistency weight, folded into the returned value
};

// Whether the consistency target receives gradient. PerFormDefault stops the
// target for CE and CE_PSEUDO and lets it flow for SWAPPED, KL, and MSE.
enum class StopGradTarget { PerFormDefault, On, Off };

struct UnsupResult {
    double value = 0.0;
    int retained = 0; // pseudo-labeled samples kept (CE_PSEUDO only)
    int total = 0;
};

namespace detail {

inline bool stop_grad_effective(ConsistencyForm form, StopGradTarget sg) {
    if (sg == StopGradTarget::On) return true;
    if (sg == StopGradTarget::Off) return false;
    return form == ConsistencyForm::CE || form == ConsistencyForm::CE_PSEUDO;
}

} // namespace detail

struct UnsupLossGrad {
    UnsupResult result;
    std::vector<ProbVector> grad_orig; // dL/d f(x)
    std::vector<ProbVector> grad_aug;  // dL/d f(g(x))
};

/// Batch consistency loss between predictions on original and augmented
/// samples, with gradients w.r.t. both prediction sets. The returned value
/// already includes the lambda factor.
inline UnsupLossGrad unsupervised_loss_grad(const std::vector<ProbVector>& preds_orig,
                                            const std::vector<ProbVector>& preds_aug,
                                            ConsistencyForm form, const UnsupParams& params,
                                            StopGradTarget sg = StopGradTarget::PerFormDefault) {
    if (preds_orig.size() != preds_aug.size()) {
        throw ShapeError("unsupervised_loss: batch size mismatch");
    }
    UnsupLossGrad out;
    const std::size_t n = preds_orig.size();
    out.result.total = static_cast<int>(n);
    out.grad_orig.assign(n, {});
    out.grad_aug.assign(n, {});
    for (std::size_t b = 0; b < n; ++b) {
        out.grad_orig[b].assign(preds_orig[b].size(), 0.0);
        out.grad_aug[b].assign(preds_aug[b].size(), 0.0);
    }
    if (n == 0) return out;

    const bool stop_target = detail::stop_grad_effective(form, sg);
    double acc = 0.0;
    int retained = 0;

    // Per-sample terms; the mean (and lambda) are applied afterwards.
    for (std::size_t b = 0; b < n; ++b) {
        const ProbVector& p = preds_orig[b];
        const ProbVector& q = preds_aug[b];
        switch (form) {
            case ConsistencyForm::SWAPPED: {
                acc += swapped_prediction_loss(p, q, params.alpha);
                PairGrad g = swapped_prediction_grads(p, q, params.alpha);
                out.grad_orig[b] = std::move(g.d_first);
                out.grad_aug[b] = std::move(g.d_second);
                break;
            }
            case ConsistencyForm::CE: {
                acc += cross_entropy(p, q);
                PairGrad g = scaled_cross_entropy_grads(p, q, 0.0);
                if (!stop_target) out.grad_orig[b] = std::move(g.d_first);
                out.grad_aug[b] = std::move(g.d_second);
                break;
            }
            case ConsistencyForm::KL: {
                acc += kl_div(p, q);
                PairGrad g = kl_grads(p, q);
                if (!stop_target) out.grad_orig[b] = std::move(g.d_first);
                out.grad_aug[b] = std::move(g.d_second);
                break;
            }
            case ConsistencyForm::MSE: {
                acc += mse_consistency(p, q);
                PairGrad g = mse_grads(p, q);
                if (!stop_target) out.grad_orig[b] = std::move(g.d_first);
                out.grad_aug[b] = std::move(g.d_second);
                break;
            }
            case ConsistencyForm::CE_PSEUDO: {
                auto label = pseudo_label(p, params.tau);
                if (!label) break;
                ++retained;
                const auto k = static_cast<std::size_t>(label->class_index);
                acc -= std::log(clamp_prob(q[k]));
                out.grad_aug[b][k] = -1.0 / clamp_prob(q[k]) * clamp_pass(q[k]);
                break;
            }
        }
    }

    const double denom = (form == ConsistencyForm::CE_PSEUDO)
                             ? static_cast<double>(retained)
                             : static_cast<double>(n);
    const double scale = denom > 0.0 ? params.lambda / denom : 0.0;
    out.result.value = acc * scale;
    out.result.retained = retained;
    for (std::size_t b = 0; b < n; ++b) {
        for (double& v : out.grad_orig[b]) v *= scale;
        for (double& v : out.grad_aug[b]) v *= scale;
    }
    return out;
}

/// Value-only variant.
inline UnsupResult unsupervised_loss(const std::vector<ProbVector>& preds_orig,
                                     const std::vector<ProbVector>& preds_aug,
                                     ConsistencyForm form, const UnsupParams& params) {
    return unsupervised_loss_grad(preds_orig, preds_aug, form, params).result;
}

} // namespace sscsr
