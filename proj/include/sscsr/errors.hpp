// sscsr - error taxonomy shared by all modules
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sscsr {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration or parameters (CLI exit code 2).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Tensor/batch dimension mismatch.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Malformed dataset or checkpoint file (CLI exit code 3). Carries the byte
// offset at which the problem was detected.
struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t at)
        : Error("format error at byte " + std::to_string(at) + ": " + msg), offset(at) {}
};

// Input that is structurally valid but unusable (empty batch, zero-power signal).
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error("degenerate input: " + msg) {}
};

// Training produced a non-finite loss (CLI exit code 4).
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error("training diverged: " + msg) {}
};

} // namespace sscsr
