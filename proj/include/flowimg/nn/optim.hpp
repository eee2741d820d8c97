// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "flowimg/nn/tensor.hpp"

namespace flowimg::nn {

/// SGD with classical momentum: v <- mu*v + g; p <- p - lr*v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(std::vector<Parameter<T>*> params, double learning_rate, double momentum)
        : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
        for (auto* p : params_) velocity_.emplace_back(p->value.size(), T{0});
    }

    void zero_grad() {
        for (auto* p : params_) p->grad.fill(T{0});
    }

    void step() {
        const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& v = velocity_[i];
            auto& value = params_[i]->value;
            const auto& grad = params_[i]->grad;
            for (std::size_t k = 0; k < v.size(); ++k) {
                v[k] = mu * v[k] + grad[k];
                value[k] -= lr * v[k];
            }
        }
    }

private:
    std::vector<Parameter<T>*> params_;
    std::vector<std::vector<T>> velocity_;
    double lr_, momentum_;
};

/// Mean softmax cross-entropy over the batch; fills `grad` with dLoss/dLogits.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, Tensor<T>& grad) {
    const int n = logits.dim(0), k = logits.dim(1);
    grad = Tensor<T>(logits.shape());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const T* z = logits.data() + static_cast<std::size_t>(i) * k;
        T* g = grad.data() + static_cast<std::size_t>(i) * k;
        const double zmax = *std::max_element(z, z + k);
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(static_cast<double>(z[c]) - zmax);
        const double log_denom = std::log(denom) + zmax;
        const int t = targets[static_cast<std::size_t>(i)];
        loss += log_denom - z[t];
        for (int c = 0; c < k; ++c) {
            const double p = std::exp(static_cast<double>(z[c]) - log_denom);
            g[c] = static_cast<T>((p - (c == t ? 1.0 : 0.0)) / n);
        }
    }
    return loss / n;
}

/// Mean sigmoid cross-entropy on a single logit per sample (targets 0/1).
template <typename T>
double sigmoid_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, Tensor<T>& grad) {
    const int n = logits.dim(0);
    grad = Tensor<T>(logits.shape());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = logits[static_cast<std::size_t>(i)];
        const double y = targets[static_cast<std::size_t>(i)];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        const double s = 1.0 / (1.0 + std::exp(-z));
        grad[static_cast<std::size_t>(i)] = static_cast<T>((s - y) / n);
    }
    return loss / n;
}

}  // namespace flowimg::nn
