// sscsr - deterministic simulation of pulse-shaped QPSK bursts with
// device-specific power-amplifier distortion and calibrated channel noise.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "sscsr/dataset.hpp"
#include "sscsr/errors.hpp"
#include "sscsr/iq.hpp"
#include "sscsr/rng.hpp"

namespace sscsr {

enum class Modulation { QPSK };

inline Modulation modulation_from_string(const std::string& s) {
    if (s == "qpsk") return Modulation::QPSK;
    throw ConfigError("unsupported modulation \"" + s + "\"");
}

// Saleh-model amplifier fingerprint: AM/AM gain alpha_a / (1 + beta_a r^2),
// AM/PM phase shift alpha_p r^2 / (1 + beta_p r^2).
struct DeviceProfile {
    int device_id = 0;
    double alpha_a = 1.0;
    double beta_a = 0.0;
    double alpha_p = 0.0;
    double beta_p = 0.0;
};

struct SimConfig {
    int num_devices = 4;
    int samples_per_class = 2000;
    int sample_len = 1024;
    int oversample = 8;
    double rolloff = 0.35;
    double snr_db = 18.0; // +inf disables noise
    Modulation modulation = Modulation::QPSK;
    std::uint64_t seed = 1;
    int rrc_span_symbols = 8;

    void validate() const {
        if (num_devices < 2) throw ConfigError("sim: num_devices must be >= 2");
        if (samples_per_class < 1) throw ConfigError("sim: samples_per_class must be >= 1");
        if (oversample < 2) throw ConfigError("sim: oversample must be >= 2");
        if (sample_len <= 0 || sample_len % oversample != 0) {
            throw ConfigError("sim: sample_len must be a positive multiple of oversample");
        }
        if (!(rolloff > 0.0 && rolloff <= 1.0)) {
            throw ConfigError("sim: rolloff must be in (0, 1]");
        }
        if (rrc_span_symbols < 4) throw ConfigError("sim: rrc_span_symbols must be >= 4");
    }
};

/// n modulation symbols drawn uniformly from the constellation.
/// QPSK: {(+-1 +- j)/sqrt(2)}, unit average energy.
inline std::vector<std::complex<double>> generate_symbols(Modulation mod, int n,
                                                          RngStream& rng) {
    if (n < 1) throw ConfigError("generate_symbols: n must be >= 1");
    if (mod != Modulation::QPSK) throw ConfigError("generate_symbols: unsupported modulation");
    const double a = 1.0 / std::sqrt(2.0);
    std::vector<std::complex<double>> out(static_cast<std::size_t>(n));
    for (auto& s : out) {
        const std::uint64_t bits = rng.uniform_index(4);
        s = {bits & 1 ? a : -a, bits & 2 ? a : -a};
    }
    return out;
}

/// Square-root raised-cosine impulse response at offset t from the pulse
/// center, for symbol period T (both in samples). Handles the analytic limits
/// at t = 0 and |t| = T / (4 beta).
inline double rrc_impulse(double rolloff, double t, double symbol_period) {
    const double beta = rolloff;
    const double T = symbol_period;
    const double x = t / T;
    if (t == 0.0) {
        return (1.0 - beta + 4.0 * beta / M_PI) / std::sqrt(T);
    }
    const double denom_core = 1.0 - 16.0 * beta * beta * x * x;
    if (std::abs(denom_core) < 1e-10) { // |t| = T/(4 beta)
        const double s = std::sin(M_PI / (4.0 * beta));
        const double c = std::cos(M_PI / (4.0 * beta));
        return beta / std::sqrt(2.0 * T) *
               ((1.0 + 2.0 / M_PI) * s + (1.0 - 2.0 / M_PI) * c);
    }
    const double num =
        std::sin(M_PI * x * (1.0 - beta)) + 4.0 * beta * x * std::cos(M_PI * x * (1.0 + beta));
    return num / (M_PI * x * denom_core) / std::sqrt(T);
}

/// Odd-length, even-symmetric RRC taps spanning span_symbols symbol periods,
/// normalized to unit energy.
inline std::vector<double> rrc_taps(double rolloff, int span_symbols, int oversample) {
    if (!(rolloff > 0.0 && rolloff <= 1.0)) {
        throw ConfigError("rrc_taps: rolloff must be in (0, 1]");
    }
    if (span_symbols < 4) throw ConfigError("rrc_taps: span_symbols must be >= 4");
    if (oversample < 2) throw ConfigError("rrc_taps: oversample must be >= 2");

    const int half = span_symbols * oversample / 2;
    std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
    double energy = 0.0;
    for (int n = -half; n <= half; ++n) {
        const double h = rrc_impulse(rolloff, static_cast<double>(n),
                                     static_cast<double>(oversample));
        taps[static_cast<std::size_t>(n + half)] = h;
        energy += h * h;
    }
    const double scale = 1.0 / std::sqrt(energy);
    for (auto& h : taps) h *= scale;
    return taps;
}

/// Zero-insertion upsampling followed by convolution with the shaping taps.
/// Output is group-delay aligned and trimmed to len(symbols) * oversample.
inline IqVector pulse_shape(const std::vector<std::complex<double>>& symbols,
                            const std::vector<double>& taps, int oversample) {
    if (symbols.empty()) throw ConfigError("pulse_shape: empty symbol sequence");
    const std::size_t out_len = symbols.size() * static_cast<std::size_t>(oversample);
    const std::ptrdiff_t delay = static_cast<std::ptrdiff_t>(taps.size() - 1) / 2;

    IqVector out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        // y[i + delay] of the full convolution; only indices k*oversample carry
        // a nonzero input.
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(i) + delay;
        double re = 0.0, im = 0.0;
        for (std::size_t k = 0; k < symbols.size(); ++k) {
            const std::ptrdiff_t tap = t - static_cast<std::ptrdiff_t>(k * oversample);
            if (tap < 0 || tap >= static_cast<std::ptrdiff_t>(taps.size())) continue;
            const double h = taps[static_cast<std::size_t>(tap)];
            re += h * symbols[k].real();
            im += h * symbols[k].imag();
        }
        out[i] = {static_cast<float>(re), static_cast<float>(im)};
    }
    return out;
}

/// Memoryless Saleh amplifier. The profile (1, 0, 0, 0) is the identity.
inline IqVector apply_pa(const IqVector& signal, const DeviceProfile& profile) {
    IqVector out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) {
        const double re = signal[i].real();
        const double im = signal[i].imag();
        const double r2 = re * re + im * im;
        const double gain = profile.alpha_a / (1.0 + profile.beta_a * r2);
        const double phase = profile.alpha_p * r2 / (1.0 + profile.beta_p * r2);
        const double c = std::cos(phase);
        const double s = std::sin(phase);
        out[i] = {static_cast<float>(gain * (re * c - im * s)),
                  static_cast<float>(gain * (re * s + im * c))};
    }
    return out;
}

/// Circular white Gaussian noise at the requested SNR, measured against the
/// mean power of `signal`. A +inf snr_db is the no-noise sentinel.
inline IqVector add_awgn(const IqVector& signal, double snr_db, RngStream& rng) {
    if (std::isinf(snr_db) && snr_db > 0.0) return signal;
    const double p_signal = mean_power(signal);
    if (p_signal <= 0.0) throw DegenerateInputError("add_awgn: zero-power signal");
    const double noise_var = p_signal * std::pow(10.0, -snr_db / 10.0);
    const double sigma_component = std::sqrt(noise_var / 2.0);
    IqVector out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) {
        out[i] = {static_cast<float>(signal[i].real() + sigma_component * rng.normal()),
                  static_cast<float>(signal[i].imag() + sigma_component * rng.normal())};
    }
    return out;
}

/// Per-device amplifier fingerprints drawn once from the documented ranges.
inline std::vector<DeviceProfile> make_device_profiles(int num_devices, std::uint64_t seed) {
    if (num_devices < 2) throw ConfigError("make_device_profiles: need >= 2 devices");
    RngStream rng(hash_seed(seed, 0x70726f66ULL)); // "prof"
    std::vector<DeviceProfile> out;
    out.reserve(static_cast<std::size_t>(num_devices));
    for (int d = 0; d < num_devices; ++d) {
        DeviceProfile p;
        p.device_id = d;
        p.alpha_a = rng.uniform(0.95, 1.05);
        p.beta_a = rng.uniform(0.01, 0.10);
        p.alpha_p = rng.uniform(0.0, 0.3);
        p.beta_p = rng.uniform(0.5, 1.5);
        out.push_back(p);
    }
    return out;
}

namespace detail {

// Deterministic 3:1:1 split sizes; remainder goes to train.
inline void split_counts(int n, int& n_train, int& n_val, int& n_test) {
    n_val = n / 5;
    n_test = n / 5;
    n_train = n - n_val - n_test;
}

} // namespace detail

/// One simulated burst for a device: symbols -> pulse shaping -> amplifier ->
/// channel noise. Pure function of (config, profile, sample_index).
inline IqVector simulate_sample(const SimConfig& config, const DeviceProfile& profile,
                                const std::vector<double>& taps, int sample_index) {
    RngStream rng(hash_seed(config.seed, 0x73616d70ULL, // "samp"
                            static_cast<std::uint64_t>(profile.device_id),
                            static_cast<std::uint64_t>(sample_index)));
    const int n_symbols = config.sample_len / config.oversample;
    const auto symbols = generate_symbols(config.modulation, n_symbols, rng);
    IqVector shaped = pulse_shape(symbols, taps, config.oversample);
    IqVector amplified = apply_pa(shaped, profile);
    return add_awgn(amplified, config.snr_db, rng);
}

/// Full dataset generation with per-class deterministic 3:1:1
/// train/val/test split. Everything in `labeled` keeps its class label;
/// the unlabeled set starts empty (see assign_condition).
inline SignalDataset simulate_dataset(const SimConfig& config,
                                      const std::vector<DeviceProfile>& profiles) {
    config.validate();
    if (profiles.size() != static_cast<std::size_t>(config.num_devices)) {
        throw ConfigError("simulate_dataset: profile count != num_devices");
    }
    const auto taps = rrc_taps(config.rolloff, config.rrc_span_symbols, config.oversample);

    SignalDataset ds;
    ds.num_classes = config.num_devices;
    ds.sample_len = config.sample_len;

    int n_train = 0, n_val = 0, n_test = 0;
    detail::split_counts(config.samples_per_class, n_train, n_val, n_test);

    for (int cls = 0; cls < config.num_devices; ++cls) {
        const auto& profile = profiles[static_cast<std::size_t>(cls)];
        std::vector<IqVector> samples;
        samples.reserve(static_cast<std::size_t>(config.samples_per_class));
        for (int i = 0; i < config.samples_per_class; ++i) {
            samples.push_back(simulate_sample(config, profile, taps, i));
        }
        RngStream split_rng(hash_seed(config.seed, 0x73706c74ULL, // "splt"
                                      static_cast<std::uint64_t>(cls)));
        auto order = split_rng.permutation(samples.size());
        for (int i = 0; i < config.samples_per_class; ++i) {
            auto& iq = samples[order[static_cast<std::size_t>(i)]];
            if (i < n_train) {
                ds.labeled.push_back({std::move(iq), cls});
            } else if (i < n_train + n_val) {
                ds.val.push_back({std::move(iq), cls});
            } else {
                ds.test.push_back({std::move(iq), cls});
            }
        }
    }
    return ds;
}

} // namespace sscsr
