// sscsr - complex baseband sample type
#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace sscsr {

// One fixed-length complex baseband sample, interleaved I/Q in memory.
using IqVector = std::vector<std::complex<float>>;

// Mean power per complex sample, accumulated in double.
inline double mean_power(const IqVector& s) {
    double acc = 0.0;
    for (const auto& z : s) {
        acc += static_cast<double>(z.real()) * z.real() +
               static_cast<double>(z.imag()) * z.imag();
    }
    return s.empty() ? 0.0 : acc / static_cast<double>(s.size());
}

inline bool all_finite(const IqVector& s) {
    for (const auto& z : s) {
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    }
    return true;
}

} // namespace sscsr
