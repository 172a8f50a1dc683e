// sscsr - composite strong augmentation for complex baseband samples:
// one signal transformation drawn at random, then a k-segmented stochastic
// permutation.
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "sscsr/errors.hpp"
#include "sscsr/iq.hpp"
#include "sscsr/rng.hpp"

namespace sscsr {

struct Transform {
    enum class Kind { Rotate, FlipH, FlipV };
    Kind kind = Kind::Rotate;
    double theta = 0.0; // radians, Rotate only

    bool is_identity() const { return kind == Kind::Rotate && theta == 0.0; }
};

inline Transform transform_from_string(const std::string& s) {
    if (s == "rot0") return {Transform::Kind::Rotate, 0.0};
    if (s == "rot90") return {Transform::Kind::Rotate, M_PI / 2.0};
    if (s == "rot180") return {Transform::Kind::Rotate, M_PI};
    if (s == "rot270") return {Transform::Kind::Rotate, 3.0 * M_PI / 2.0};
    if (s == "fliph") return {Transform::Kind::FlipH, 0.0};
    if (s == "flipv") return {Transform::Kind::FlipV, 0.0};
    throw ConfigError("unknown transform \"" + s + "\"");
}

inline std::string to_string(const Transform& t) {
    switch (t.kind) {
        case Transform::Kind::FlipH: return "fliph";
        case Transform::Kind::FlipV: return "flipv";
        case Transform::Kind::Rotate: {
            const int deg = static_cast<int>(std::lround(t.theta * 180.0 / M_PI)) % 360;
            return "rot" + std::to_string(deg < 0 ? deg + 360 : deg);
        }
    }
    return "?";
}

struct AugmentConfig {
    std::vector<Transform> transforms = {
        {Transform::Kind::Rotate, 0.0},
        {Transform::Kind::Rotate, M_PI / 2.0},
        {Transform::Kind::Rotate, M_PI},
        {Transform::Kind::Rotate, 3.0 * M_PI / 2.0},
    };
    int k_segments = 2;
    bool exclude_identity = false;

    // The draw set after the exclude_identity rule (drops rot0 and nothing else).
    std::vector<Transform> effective_transforms() const {
        std::vector<Transform> out;
        for (const auto& t : transforms) {
            if (exclude_identity && t.is_identity()) continue;
            out.push_back(t);
        }
        return out;
    }

    void validate(std::size_t sample_len) const {
        if (transforms.empty()) throw ConfigError("augment: transform set is empty");
        if (effective_transforms().empty()) {
            throw ConfigError("augment: transform set is empty after excluding rot0");
        }
        if (k_segments < 1) throw ConfigError("augment: k_segments must be >= 1");
        if (sample_len > 0 && static_cast<std::size_t>(k_segments) > sample_len) {
            throw ConfigError("augment: k_segments exceeds sample length");
        }
    }
};

/// Multiply every entry by e^{j theta}.
inline IqVector rotate(const IqVector& sample, double theta) {
    if (theta == 0.0) return sample;
    const std::complex<float> phasor(static_cast<float>(std::cos(theta)),
                                     static_cast<float>(std::sin(theta)));
    IqVector out(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) out[i] = sample[i] * phasor;
    return out;
}

/// (i, q) -> (-i, q)
inline IqVector flip_h(const IqVector& sample) {
    IqVector out(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
        out[i] = {-sample[i].real(), sample[i].imag()};
    }
    return out;
}

/// (i, q) -> (i, -q)
inline IqVector flip_v(const IqVector& sample) {
    IqVector out(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
        out[i] = {sample[i].real(), -sample[i].imag()};
    }
    return out;
}

inline IqVector apply_transform(const IqVector& sample, const Transform& t) {
    switch (t.kind) {
        case Transform::Kind::Rotate: return rotate(sample, t.theta);
        case Transform::Kind::FlipH: return flip_h(sample);
        case Transform::Kind::FlipV: return flip_v(sample);
    }
    throw ConfigError("unknown transform kind");
}

/// Split into k contiguous segments, shuffle them uniformly, re-concatenate.
/// When k does not divide the length, the first (len mod k) segments carry one
/// extra element.
inline IqVector permute_segments(const IqVector& sample, int k, RngStream& rng) {
    const std::size_t len = sample.size();
    if (k < 1 || static_cast<std::size_t>(k) > len) {
        throw ConfigError("permute_segments: k must be in [1, sample length]");
    }
    if (k == 1) return sample;

    const std::size_t base = len / static_cast<std::size_t>(k);
    const std::size_t extra = len % static_cast<std::size_t>(k);
    std::vector<std::size_t> starts(static_cast<std::size_t>(k)),
        lens(static_cast<std::size_t>(k));
    std::size_t at = 0;
    for (std::size_t s = 0; s < static_cast<std::size_t>(k); ++s) {
        starts[s] = at;
        lens[s] = base + (s < extra ? 1 : 0);
        at += lens[s];
    }

    const auto order = rng.permutation(static_cast<std::size_t>(k));
    IqVector out;
    out.reserve(len);
    for (std::size_t s : order) {
        out.insert(out.end(), sample.begin() + static_cast<std::ptrdiff_t>(starts[s]),
                   sample.begin() + static_cast<std::ptrdiff_t>(starts[s] + lens[s]));
    }
    return out;
}

/// One transform drawn uniformly from the effective set, then the k-segmented
/// stochastic permutation. Each call consumes fresh draws from rng.
inline IqVector composite_augment(const IqVector& sample, const AugmentConfig& config,
                                  RngStream& rng) {
    config.validate(sample.size());
    const auto set = config.effective_transforms();
    const auto& pick = set[static_cast<std::size_t>(rng.uniform_index(set.size()))];
    IqVector transformed = apply_transform(sample, pick);
    return permute_segments(transformed, config.k_segments, rng);
}

} // namespace sscsr
