// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowimg::nn {

/// Dense row-major tensor. Activations use NCHW.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
    Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_)) throw std::invalid_argument("tensor data does not match shape");
    }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void reshape(std::vector<int> shape) {
        if (numel_of(shape) != data_.size()) throw std::invalid_argument("reshape changes element count");
        shape_ = std::move(shape);
    }
    /// Resizes only when the shape changes; contents are unspecified afterwards.
    void resize(const std::vector<int>& shape) {
        if (shape != shape_) {
            shape_ = shape;
            data_.resize(numel_of(shape_));
        }
    }

    static std::size_t numel_of(const std::vector<int>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    }

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "x" : "") + std::to_string(shape_[i]);
        return s + "]";
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

/// A trainable tensor and its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
};

}  // namespace flowimg::nn
