// sscsr - minimal dense tensor: shape list + flat row-major f64 storage.
#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "sscsr/errors.hpp"

namespace sscsr {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }

    int dim(std::size_t i) const {
        if (i >= shape.size()) throw ShapeError("dim index out of range");
        return shape[i];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

} // namespace sscsr
