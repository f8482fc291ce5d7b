#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "tlab/error.hpp"

namespace tlab {

/// Dense row-major float32 tensor. Shapes are small int vectors; data owns its storage.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
    Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool bitwise_equal(const Tensor& o) const {
        if (shape != o.shape) return false;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data[i] != o.data[i]) return false;  // NaN-free by construction
        return true;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

/// A learnable parameter: value plus gradient accumulator of the same shape.
struct Param {
    Tensor value;
    Tensor grad;

    Param() = default;
    explicit Param(std::vector<int> s) : value(std::move(s)) { grad = Tensor(value.shape); }
    void zero_grad() { grad.zero(); }
};

/// Reference into a network's parameter table, in forward (registration) order.
struct ParamRef {
    std::string name;
    Param* param = nullptr;
};

/// Reference to a non-learnable buffer (e.g. norm running statistics).
struct BufferRef {
    std::string name;
    Tensor* tensor = nullptr;
};

} // namespace tlab
