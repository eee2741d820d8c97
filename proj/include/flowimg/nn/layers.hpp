// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowimg/nn/blas.hpp"
#include "flowimg/nn/tensor.hpp"
#include "flowimg/rng.hpp"

namespace flowimg::nn {

/// Layer contract. forward() caches what backward() needs only while in
/// training mode; backward() accumulates parameter gradients and returns the
/// gradient with respect to the forward input.
template <typename T>
class Module {
public:
    virtual ~Module() = default;

    virtual Tensor<T> forward(Tensor<T> x) = 0;
    virtual Tensor<T> backward(Tensor<T> grad_out) = 0;

    virtual void collect_parameters(std::vector<Parameter<T>*>& /*out*/) {}
    /// Non-trainable state that belongs in a checkpoint (batch-norm running stats).
    virtual void collect_buffers(std::vector<Tensor<T>*>& /*out*/) {}
    virtual void set_training(bool training) { training_ = training; }
    bool training() const noexcept { return training_; }

protected:
    bool training_ = true;
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d final : public Module<T> {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding)
        : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
          weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}) {}

    /// He-normal (fan-in) initialisation.
    void init(Rng& rng) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_ * k_ * k_));
        for (auto& w : weight_.value.span()) w = static_cast<T>(rng.normal(0.0, stddev));
    }

    /// The stem convolution never needs an input gradient.
    void set_propagate_grad(bool v) noexcept { propagate_grad_ = v; }

    Tensor<T> forward(Tensor<T> x) override {
        if (x.rank() != 4 || x.dim(1) != in_) throw std::invalid_argument("conv input has shape " + x.shape_string());
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int ho = out_size(h), wo = out_size(w);
        if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv input too small: " + x.shape_string());
        const int kdim = in_ * k_ * k_, hw = ho * wo;
        Tensor<T> y({n, out_, ho, wo});
        for (int i = 0; i < n; ++i) {
            const T* src = x.data() + static_cast<std::size_t>(i) * in_ * h * w;
            const T* col = im2col(src, h, w, ho, wo);
            gemm(false, false, out_, hw, kdim, T{1}, weight_.value.data(), col, T{0},
                 y.data() + static_cast<std::size_t>(i) * out_ * hw);
        }
        if (this->training_) input_ = std::move(x);
        return y;
    }

    Tensor<T> backward(Tensor<T> dy) override {
        const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const int ho = dy.dim(2), wo = dy.dim(3);
        const int kdim = in_ * k_ * k_, hw = ho * wo;
        Tensor<T> dx;
        if (propagate_grad_) dx = Tensor<T>(input_.shape());
        dcol_.resize(static_cast<std::size_t>(kdim) * hw);
        for (int i = 0; i < n; ++i) {
            const T* src = input_.data() + static_cast<std::size_t>(i) * in_ * h * w;
            const T* g = dy.data() + static_cast<std::size_t>(i) * out_ * hw;
            const T* col = im2col(src, h, w, ho, wo);
            gemm(false, true, out_, kdim, hw, T{1}, g, col, T{1}, weight_.grad.data());
            if (propagate_grad_) {
                gemm(true, false, kdim, hw, out_, T{1}, weight_.value.data(), g, T{0}, dcol_.data());
                col2im(dcol_.data(), h, w, ho, wo, dx.data() + static_cast<std::size_t>(i) * in_ * h * w);
            }
        }
        input_ = Tensor<T>();
        return dx;
    }

    void collect_parameters(std::vector<Parameter<T>*>& out) override { out.push_back(&weight_); }

    Parameter<T>& weight() noexcept { return weight_; }

private:
    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

    bool is_pointwise() const noexcept { return k_ == 1 && stride_ == 1 && pad_ == 0; }

    // Unfolds one image into a [C*k*k, ho*wo] matrix.
    const T* im2col(const T* src, int h, int w, int ho, int wo) {
        if (is_pointwise()) return src;
        col_.resize(static_cast<std::size_t>(in_) * k_ * k_ * ho * wo);
        T* dst = col_.data();
        for (int c = 0; c < in_; ++c) {
            const T* plane = src + static_cast<std::size_t>(c) * h * w;
            for (int kh = 0; kh < k_; ++kh) {
                for (int kw = 0; kw < k_; ++kw) {
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride_ - pad_ + kh;
                        if (ih < 0 || ih >= h) {
                            std::fill(dst, dst + wo, T{0});
                            dst += wo;
                            continue;
                        }
                        const T* row = plane + static_cast<std::size_t>(ih) * w;
                        for (int ow = 0; ow < wo; ++ow) {
                            const int iw = ow * stride_ - pad_ + kw;
                            *dst++ = (iw >= 0 && iw < w) ? row[iw] : T{0};
                        }
                    }
                }
            }
        }
        return col_.data();
    }

    // Scatter-adds a [C*k*k, ho*wo] matrix back onto one image.
    void col2im(const T* col, int h, int w, int ho, int wo, T* dst) const {
        if (is_pointwise()) {
            std::copy(col, col + static_cast<std::size_t>(in_) * h * w, dst);
            return;
        }
        for (int c = 0; c < in_; ++c) {
            T* plane = dst + static_cast<std::size_t>(c) * h * w;
            for (int kh = 0; kh < k_; ++kh) {
                for (int kw = 0; kw < k_; ++kw) {
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride_ - pad_ + kh;
                        if (ih < 0 || ih >= h) {
                            col += wo;
                            continue;
                        }
                        T* row = plane + static_cast<std::size_t>(ih) * w;
                        for (int ow = 0; ow < wo; ++ow, ++col) {
                            const int iw = ow * stride_ - pad_ + kw;
                            if (iw >= 0 && iw < w) row[iw] += *col;
                        }
                    }
                }
            }
        }
    }

    int in_, out_, k_, stride_, pad_;
    bool propagate_grad_ = true;
    Parameter<T> weight_;
    Tensor<T> input_;
    std::vector<T> col_;
    std::vector<T> dcol_;
};

// ---------------------------------------------------------------------------

/// Batch statistics in training mode, running statistics in eval mode.
template <typename T>
class BatchNorm2d final : public Module<T> {
public:
    BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5)
        : c_(channels), momentum_(momentum), eps_(eps),
          gamma_(name + ".weight", {channels}), beta_(name + ".bias", {channels}),
          running_mean_({channels}, T{0}), running_var_({channels}, T{1}) {
        gamma_.value.fill(T{1});
    }

    Tensor<T> forward(Tensor<T> x) override {
        if (x.rank() != 4 || x.dim(1) != c_) throw std::invalid_argument("batch-norm input has shape " + x.shape_string());
        const int n = x.dim(0);
        const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
        const double m = static_cast<double>(n) * static_cast<double>(plane);
        Tensor<T> y(x.shape());

        if (!this->training_) {
            for (int c = 0; c < c_; ++c) {
                const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
                const T scale = gamma_.value[c] * inv;
                const T shift = beta_.value[c] - running_mean_[c] * scale;
                for (int i = 0; i < n; ++i) {
                    const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) y[off + p] = x[off + p] * scale + shift;
                }
            }
            return y;
        }

        inv_std_.assign(static_cast<std::size_t>(c_), T{0});
        for (int c = 0; c < c_; ++c) {
            double sum = 0.0;
            for (int i = 0; i < n; ++i) {
                const T* p = x.data() + (static_cast<std::size_t>(i) * c_ + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) sum += p[k];
            }
            const double mean = sum / m;
            double sq = 0.0;
            for (int i = 0; i < n; ++i) {
                const T* p = x.data() + (static_cast<std::size_t>(i) * c_ + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    const double d = p[k] - mean;
                    sq += d * d;
                }
            }
            const double var = sq / m;
            const double inv = 1.0 / std::sqrt(var + eps_);
            inv_std_[static_cast<std::size_t>(c)] = static_cast<T>(inv);

            const T tm = static_cast<T>(mean), ti = static_cast<T>(inv);
            const T g = gamma_.value[c], b = beta_.value[c];
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    const T xh = (x[off + k] - tm) * ti;
                    x[off + k] = xh;  // x becomes x_hat, kept for backward
                    y[off + k] = g * xh + b;
                }
            }
            const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
            running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
            running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
        }
        x_hat_ = std::move(x);
        return y;
    }

    Tensor<T> backward(Tensor<T> dy) override {
        const int n = dy.dim(0);
        const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
        const double m = static_cast<double>(n) * static_cast<double>(plane);
        for (int c = 0; c < c_; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    sum_dy += dy[off + k];
                    sum_dy_xh += static_cast<double>(dy[off + k]) * x_hat_[off + k];
                }
            }
            gamma_.grad[c] += static_cast<T>(sum_dy_xh);
            beta_.grad[c] += static_cast<T>(sum_dy);
            const T scale = static_cast<T>(gamma_.value[c] * inv_std_[static_cast<std::size_t>(c)]);
            const T mean_dy = static_cast<T>(sum_dy / m), mean_dy_xh = static_cast<T>(sum_dy_xh / m);
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    dy[off + k] = scale * (dy[off + k] - mean_dy - x_hat_[off + k] * mean_dy_xh);
                }
            }
        }
        x_hat_ = Tensor<T>();
        return dy;
    }

    void collect_parameters(std::vector<Parameter<T>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void collect_buffers(std::vector<Tensor<T>*>& out) override {
        out.push_back(&running_mean_);
        out.push_back(&running_var_);
    }

    Tensor<T>& running_mean() noexcept { return running_mean_; }
    Tensor<T>& running_var() noexcept { return running_var_; }

private:
    int c_;
    double momentum_, eps_;
    Parameter<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> x_hat_;
    std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

template <typename T>
class ReLU final : public Module<T> {
public:
    Tensor<T> forward(Tensor<T> x) override {
        for (auto& v : x.span()) v = v > T{0} ? v : T{0};
        if (this->training_) {
            mask_.resize(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) mask_[i] = x[i] > T{0};
        }
        return x;
    }

    Tensor<T> backward(Tensor<T> dy) override {
        for (std::size_t i = 0; i < dy.size(); ++i) {
            if (!mask_[i]) dy[i] = T{0};
        }
        return dy;
    }

private:
    std::vector<std::uint8_t> mask_;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2d final : public Module<T> {
public:
    MaxPool2d(int kernel, int stride, int padding) : k_(kernel), stride_(stride), pad_(padding) {}

    Tensor<T> forward(Tensor<T> x) override {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int ho = (h + 2 * pad_ - k_) / stride_ + 1, wo = (w + 2 * pad_ - k_) / stride_ + 1;
        Tensor<T> y({n, c, ho, wo});
        if (this->training_) {
            argmax_.resize(y.size());
            in_shape_ = x.shape();
        }
        std::size_t o = 0;
        for (int plane = 0; plane < n * c; ++plane) {
            const T* src = x.data() + static_cast<std::size_t>(plane) * h * w;
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    int best_idx = -1;
                    for (int kh = 0; kh < k_; ++kh) {
                        const int ih = oh * stride_ - pad_ + kh;
                        if (ih < 0 || ih >= h) continue;
                        for (int kw = 0; kw < k_; ++kw) {
                            const int iw = ow * stride_ - pad_ + kw;
                            if (iw < 0 || iw >= w) continue;
                            const T v = src[ih * w + iw];
                            if (v > best || best_idx < 0) {
                                best = v;
                                best_idx = ih * w + iw;
                            }
                        }
                    }
                    y[o] = best;
                    if (this->training_) argmax_[o] = static_cast<std::size_t>(plane) * h * w + static_cast<std::size_t>(best_idx);
                }
            }
        }
        return y;
    }

    Tensor<T> backward(Tensor<T> dy) override {
        Tensor<T> dx(in_shape_);
        for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
        return dx;
    }

private:
    int k_, stride_, pad_;
    std::vector<std::size_t> argmax_;
    std::vector<int> in_shape_;
};

// ---------------------------------------------------------------------------

/// [N, C, H, W] -> [N, C]
template <typename T>
class GlobalAvgPool final : public Module<T> {
public:
    Tensor<T> forward(Tensor<T> x) override {
        const int n = x.dim(0), c = x.dim(1);
        const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
        Tensor<T> y({n, c});
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < plane; ++k) s += x[i * plane + k];
            y[i] = static_cast<T>(s / static_cast<double>(plane));
        }
        in_shape_ = x.shape();
        return y;
    }

    Tensor<T> backward(Tensor<T> dy) override {
        Tensor<T> dx(in_shape_);
        const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
        const T inv = T{1} / static_cast<T>(plane);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            std::fill(dx.data() + i * plane, dx.data() + (i + 1) * plane, dy[i] * inv);
        }
        return dx;
    }

private:
    std::vector<int> in_shape_;
};

// ---------------------------------------------------------------------------

/// y = x W^T + b, W: [out, in].
template <typename T>
class Linear final : public Module<T> {
public:
    Linear(std::string name, int in_features, int out_features)
        : in_(in_features), out_(out_features), weight_(name + ".weight", {out_features, in_features}),
          bias_(name + ".bias", {out_features}) {}

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
    void init(Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
        for (auto& w : weight_.value.span()) w = static_cast<T>(rng.uniform(-bound, bound));
        for (auto& b : bias_.value.span()) b = static_cast<T>(rng.uniform(-bound, bound));
    }

    Tensor<T> forward(Tensor<T> x) override {
        if (x.rank() != 2 || x.dim(1) != in_) throw std::invalid_argument("linear input has shape " + x.shape_string());
        const int n = x.dim(0);
        Tensor<T> y({n, out_});
        for (int i = 0; i < n; ++i) std::copy(bias_.value.data(), bias_.value.data() + out_, y.data() + static_cast<std::size_t>(i) * out_);
        gemm(false, true, n, out_, in_, T{1}, x.data(), weight_.value.data(), T{1}, y.data());
        if (this->training_) input_ = std::move(x);
        return y;
    }

    Tensor<T> backward(Tensor<T> dy) override {
        const int n = dy.dim(0);
        gemm(true, false, out_, in_, n, T{1}, dy.data(), input_.data(), T{1}, weight_.grad.data());
        for (int i = 0; i < n; ++i) {
            for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += dy[static_cast<std::size_t>(i) * out_ + o];
        }
        Tensor<T> dx({n, in_});
        gemm(false, false, n, in_, out_, T{1}, dy.data(), weight_.value.data(), T{0}, dx.data());
        input_ = Tensor<T>();
        return dx;
    }

    void collect_parameters(std::vector<Parameter<T>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    Parameter<T>& weight() noexcept { return weight_; }
    Parameter<T>& bias() noexcept { return bias_; }

private:
    int in_, out_;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

}  // namespace flowimg::nn
