#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lmforge/errors.hpp"

namespace lmforge {

inline int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

// Dense row-major float32 tensor.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<int64_t> s, float fill = 0.0f) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static Tensor from(std::vector<int64_t> s, std::vector<float> values) {
        Tensor t;
        t.shape = std::move(s);
        t.validate_shape();
        if (numel_of(t.shape) != static_cast<int64_t>(values.size()))
            throw DimensionError("tensor data length does not match shape");
        t.data = std::move(values);
        return t;
    }

    static Tensor scalar(float v) { return from({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    float& at(std::initializer_list<int64_t> idx) {
        return data[static_cast<size_t>(flat_index(idx))];
    }
    float at(std::initializer_list<int64_t> idx) const {
        return data[static_cast<size_t>(flat_index(idx))];
    }

    int64_t flat_index(std::initializer_list<int64_t> idx) const {
        int64_t flat = 0;
        size_t axis = 0;
        for (int64_t i : idx) {
            flat = flat * shape[axis] + i;
            ++axis;
        }
        return flat;
    }

    void validate_shape() const {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
        for (int64_t d : shape)
            if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    }
};

std::string shape_string(const std::vector<int64_t>& shape);
bool all_finite(const Tensor& t);

// Integer matrix for token ids, masks and labels.
struct TokenMatrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<int32_t> data;

    TokenMatrix() = default;
    TokenMatrix(int64_t r, int64_t c, int32_t fill = 0)
        : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

    int32_t& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    int32_t at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
    int64_t numel() const { return rows * cols; }
};

}  // namespace lmforge
