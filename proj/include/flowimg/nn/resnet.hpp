// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "flowimg/nn/layers.hpp"

namespace flowimg::nn {

/// Two 3x3 conv/batch-norm pairs with an identity or 1x1-projection shortcut.
template <typename T>
class BasicBlock final : public Module<T> {
public:
    BasicBlock(const std::string& name, int in_channels, int out_channels, int stride)
        : conv1_(name + ".conv1", in_channels, out_channels, 3, stride, 1), bn1_(name + ".bn1", out_channels),
          conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1), bn2_(name + ".bn2", out_channels) {
        if (stride != 1 || in_channels != out_channels) {
            down_conv_ = std::make_unique<Conv2d<T>>(name + ".downsample.0", in_channels, out_channels, 1, stride, 0);
            down_bn_ = std::make_unique<BatchNorm2d<T>>(name + ".downsample.1", out_channels);
        }
    }

    void init(Rng& rng) {
        conv1_.init(rng);
        conv2_.init(rng);
        if (down_conv_) down_conv_->init(rng);
    }

    Tensor<T> forward(Tensor<T> x) override {
        Tensor<T> shortcut = down_conv_ ? down_bn_->forward(down_conv_->forward(x)) : x;
        Tensor<T> y = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(std::move(x))))));
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += shortcut[i];
        return relu_out_.forward(std::move(y));
    }

    Tensor<T> backward(Tensor<T> dy) override {
        dy = relu_out_.backward(std::move(dy));
        Tensor<T> d_short = down_conv_ ? down_conv_->backward(down_bn_->backward(dy)) : dy;
        Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(std::move(dy))))));
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d_short[i];
        return dx;
    }

    void collect_parameters(std::vector<Parameter<T>*>& out) override {
        for (auto* m : modules()) m->collect_parameters(out);
    }
    void collect_buffers(std::vector<Tensor<T>*>& out) override {
        for (auto* m : modules()) m->collect_buffers(out);
    }
    void set_training(bool training) override {
        Module<T>::set_training(training);
        for (auto* m : modules()) m->set_training(training);
        relu1_.set_training(training);
        relu_out_.set_training(training);
    }

private:
    std::vector<Module<T>*> modules() {
        std::vector<Module<T>*> m{&conv1_, &bn1_, &conv2_, &bn2_};
        if (down_conv_) {
            m.push_back(down_conv_.get());
            m.push_back(down_bn_.get());
        }
        return m;
    }

    Conv2d<T> conv1_;
    BatchNorm2d<T> bn1_;
    ReLU<T> relu1_;
    Conv2d<T> conv2_;
    BatchNorm2d<T> bn2_;
    std::unique_ptr<Conv2d<T>> down_conv_;
    std::unique_ptr<BatchNorm2d<T>> down_bn_;
    ReLU<T> relu_out_;
};

struct ResNetSpec {
    int in_channels = 3;
    int stem_width = 64;
    int stem_kernel = 7;
    int stem_stride = 2;
    bool stem_pool = true;
    std::array<int, 4> widths{64, 128, 256, 512};
    std::array<int, 4> blocks{2, 2, 2, 2};
    int num_outputs = 12;

    static ResNetSpec resnet18(int num_outputs) {
        ResNetSpec s;
        s.num_outputs = num_outputs;
        return s;
    }
};

/// Stem conv + batch-norm + ReLU (+ max-pool), four residual stages, global
/// average pool and a fully connected head. Parameter names follow the
/// torchvision layout ("layer2.0.downsample.0.weight", "fc.bias", ...).
template <typename T>
class ResNet final : public Module<T> {
public:
    explicit ResNet(const ResNetSpec& spec)
        : spec_(spec),
          stem_conv_("conv1", spec.in_channels, spec.stem_width, spec.stem_kernel, spec.stem_stride, spec.stem_kernel / 2),
          stem_bn_("bn1", spec.stem_width), pool_(3, 2, 1),
          fc_("fc", spec.widths[3], spec.num_outputs) {
        stem_conv_.set_propagate_grad(false);
        int in = spec.stem_width;
        for (int stage = 0; stage < 4; ++stage) {
            for (int b = 0; b < spec.blocks[static_cast<std::size_t>(stage)]; ++b) {
                const int out = spec.widths[static_cast<std::size_t>(stage)];
                const int stride = (b == 0 && stage > 0) ? 2 : 1;
                blocks_.push_back(std::make_unique<BasicBlock<T>>(
                    "layer" + std::to_string(stage + 1) + "." + std::to_string(b), in, out, stride));
                in = out;
            }
        }
    }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        stem_conv_.init(rng);
        for (auto& b : blocks_) b->init(rng);
        fc_.init(rng);
    }

    /// [N, C, H, W] -> [N, num_outputs]
    Tensor<T> forward(Tensor<T> x) override {
        x = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(std::move(x))));
        if (spec_.stem_pool) x = pool_.forward(std::move(x));
        for (auto& b : blocks_) x = b->forward(std::move(x));
        return fc_.forward(gap_.forward(std::move(x)));
    }

    Tensor<T> backward(Tensor<T> dy) override {
        dy = gap_.backward(fc_.backward(std::move(dy)));
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dy = (*it)->backward(std::move(dy));
        if (spec_.stem_pool) dy = pool_.backward(std::move(dy));
        return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(std::move(dy))));
    }

    void collect_parameters(std::vector<Parameter<T>*>& out) override {
        stem_conv_.collect_parameters(out);
        stem_bn_.collect_parameters(out);
        for (auto& b : blocks_) b->collect_parameters(out);
        fc_.collect_parameters(out);
    }
    void collect_buffers(std::vector<Tensor<T>*>& out) override {
        stem_bn_.collect_buffers(out);
        for (auto& b : blocks_) b->collect_buffers(out);
    }
    void set_training(bool training) override {
        Module<T>::set_training(training);
        stem_conv_.set_training(training);
        stem_bn_.set_training(training);
        stem_relu_.set_training(training);
        pool_.set_training(training);
        for (auto& b : blocks_) b->set_training(training);
        gap_.set_training(training);
        fc_.set_training(training);
    }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> p;
        collect_parameters(p);
        return p;
    }
    std::vector<Tensor<T>*> buffers() {
        std::vector<Tensor<T>*> b;
        collect_buffers(b);
        return b;
    }
    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->value.size();
        return n;
    }

    const ResNetSpec& spec() const noexcept { return spec_; }
    Linear<T>& head() noexcept { return fc_; }

private:
    ResNetSpec spec_;
    Conv2d<T> stem_conv_;
    BatchNorm2d<T> stem_bn_;
    ReLU<T> stem_relu_;
    MaxPool2d<T> pool_;
    std::vector<std::unique_ptr<BasicBlock<T>>> blocks_;
    GlobalAvgPool<T> gap_;
    Linear<T> fc_;
};

}  // namespace flowimg::nn
