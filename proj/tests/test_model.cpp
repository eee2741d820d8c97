// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "flowimg/error.hpp"
#include "flowimg/model.hpp"
#include "support.hpp"

using namespace flowimg;
using namespace flowimg::testing;

namespace {

// Layer-by-layer parameter sum for a torchvision-style ResNet18.
std::size_t resnet18_parameter_oracle(std::size_t outputs) {
    const auto conv = [](std::size_t k, std::size_t cin, std::size_t cout) { return k * k * cin * cout; };
    const auto bn = [](std::size_t c) { return 2 * c; };
    std::size_t n = conv(7, 3, 64) + bn(64);
    std::size_t cin = 64;
    for (const std::size_t w : {64, 128, 256, 512}) {
        for (int b = 0; b < 2; ++b) {
            n += conv(3, cin, w) + bn(w) + conv(3, w, w) + bn(w);
            if (cin != w) n += conv(1, cin, w) + bn(w);
            cin = w;
        }
    }
    return n + 512 * outputs + outputs;
}

EncodedImage random_image(std::mt19937& gen, int class_id = 0) {
    EncodedImage img;
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen());
    img.label = LabelMap::defaults().by_id(class_id);
    return img;
}

ModelConfig small_config(Task task, int input = 64) {
    auto c = ModelConfig::for_task(task, 3);
    c.input_size = input;
    c.batch_size = 8;
    return c;
}

// Half-pixel bilinear weights as an S x 60 matrix.
std::vector<double> resize_matrix(int s) {
    std::vector<double> r(static_cast<std::size_t>(s) * 60, 0.0);
    for (int i = 0; i < s; ++i) {
        double src = (i + 0.5) * 60.0 / s - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > 59) i0 = 59;
        const int i1 = std::min(i0 + 1, 59);
        const double w = src - i0;
        r[static_cast<std::size_t>(i) * 60 + i0] += 1.0 - w;
        r[static_cast<std::size_t>(i) * 60 + i1] += w;
    }
    return r;
}

}  // namespace

TEST(ModelConfig, TaskDefaultsAndValidation) {
    const auto b = ModelConfig::for_task(Task::binary);
    EXPECT_EQ(b.num_outputs, 1);
    EXPECT_EQ(b.epochs, 10);
    const auto m = ModelConfig::for_task(Task::multiclass);
    EXPECT_EQ(m.num_outputs, 12);
    EXPECT_EQ(m.epochs, 50);
    EXPECT_EQ(m.learning_rate, 1e-4);
    EXPECT_EQ(m.momentum, 0.9);
    EXPECT_EQ(m.input_size, 224);
    EXPECT_EQ(ModelConfig::from_json(m.to_json()), m);

    auto bad = m;
    bad.num_outputs = 1;
    EXPECT_THROW(bad.validate(), Error);
    bad = m;
    bad.learning_rate = 0;
    EXPECT_THROW(bad.validate(), Error);
    bad = m;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(Transform, ConstantImages) {
    EncodedImage img;
    auto t = transform_image(img, 224);
    EXPECT_EQ(t.shape(), (std::vector<int>{3, 224, 224}));
    EXPECT_TRUE(std::all_of(t.data(), t.data() + t.size(), [](float v) { return v == 0.0f; }));
    img.pixels.fill(128);
    t = transform_image(img, 224);
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_NEAR(t[i], 128.0 / 255.0, 1e-7);
}

TEST(Transform, MatchesSeparableBilinearOracle) {
    EncodedImage img;
    for (int r = 0; r < 60; ++r) {
        for (int c = 0; c < 60; ++c) {
            img.at(r, c, 0) = ((r + c) % 2) ? 255 : 0;
            img.at(r, c, 1) = static_cast<std::uint8_t>(r * 4);
            img.at(r, c, 2) = static_cast<std::uint8_t>((r * 7 + c * 3) % 256);
        }
    }
    for (const int s : {224, 64, 61}) {
        const auto t = transform_image(img, s);
        const auto R = resize_matrix(s);
        for (int ch = 0; ch < 3; ++ch) {
            // tmp = R * X  (s x 60), out = tmp * R^T (s x s)
            std::vector<double> tmp(static_cast<std::size_t>(s) * 60, 0.0);
            for (int i = 0; i < s; ++i)
                for (int k = 0; k < 60; ++k)
                    for (int c = 0; c < 60; ++c) tmp[i * 60 + c] += R[i * 60 + k] * img.at(k, c, ch);
            for (int i = 0; i < s; ++i) {
                for (int j = 0; j < s; ++j) {
                    double v = 0;
                    for (int c = 0; c < 60; ++c) v += tmp[i * 60 + c] * R[j * 60 + c];
                    ASSERT_NEAR(t[(static_cast<std::size_t>(ch) * s + i) * s + j], v / 255.0, 1e-6) << s;
                }
            }
        }
    }
}

TEST(Model, ParameterCountOracle) {
    EXPECT_EQ(resnet18_parameter_oracle(12), 11182668u);
    Classifier multi(ModelConfig::for_task(Task::multiclass));
    EXPECT_EQ(multi.parameter_count(), resnet18_parameter_oracle(12));
    Classifier binary(ModelConfig::for_task(Task::binary));
    EXPECT_EQ(binary.parameter_count(), resnet18_parameter_oracle(1));
}

TEST(Model, OutputShapes) {
    std::mt19937 gen(1);
    for (const Task task : {Task::multiclass, Task::binary}) {
        Classifier model(small_config(task));
        for (const int n : {1, 7, 32}) {
            std::vector<EncodedImage> batch;
            for (int i = 0; i < n; ++i) batch.push_back(random_image(gen));
            const auto z = model.logits(batch);
            EXPECT_EQ(z.shape(), (std::vector<int>{n, task == Task::binary ? 1 : 12}));
            EXPECT_TRUE(std::all_of(z.data(), z.data() + z.size(), [](float v) { return std::isfinite(v); }));
        }
    }
}

TEST(Model, GradientMatchesFiniteDifferences) {
    nn::ResNetSpec spec;
    spec.stem_width = 4;
    spec.stem_kernel = 3;
    spec.stem_stride = 1;
    spec.widths = {4, 6, 8, 8};
    spec.blocks = {1, 1, 1, 1};
    spec.num_outputs = 3;
    nn::ResNet<double> net(spec);
    net.init(17);
    net.set_training(true);

    std::mt19937_64 gen(2);
    std::normal_distribution<double> nd(0, 1);
    nn::Tensor<double> x({4, 3, 16, 16});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = nd(gen);
    const std::vector<int> targets = {0, 2, 1, 2};

    const auto loss_at = [&]() {
        nn::Tensor<double> g;
        return nn::softmax_cross_entropy(net.forward(x), targets, g);
    };
    for (auto* p : net.parameters()) p->grad.fill(0.0);
    nn::Tensor<double> g;
    nn::softmax_cross_entropy(net.forward(x), targets, g);
    net.backward(g);

    std::size_t checked = 0, nonzero = 0;
    double worst = 0.0;
    for (auto* p : net.parameters()) {
        const std::size_t stride = std::max<std::size_t>(1, p->value.size() / 6);
        for (std::size_t i = 0; i < p->value.size(); i += stride) {
            const double h = 1e-5;
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = loss_at();
            p->value[i] = orig - h;
            const double down = loss_at();
            p->value[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad[i];
            const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-3});
            worst = std::max(worst, rel);
            EXPECT_LT(rel, 1e-3) << p->name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
            ++checked;
            if (std::abs(analytic) > 1e-6) ++nonzero;
        }
    }
    EXPECT_GT(checked, 100u);
    EXPECT_GT(nonzero, checked / 2);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", worst);
    RecordProperty("worst_relative_error", buf);
    RecordProperty("nonzero", std::to_string(nonzero) + "/" + std::to_string(checked));
}

TEST(Model, SelectBestEpoch) {
    EXPECT_EQ(select_best_epoch(std::vector<double>{0.7, 0.9, 0.85}), 2);
    EXPECT_EQ(select_best_epoch(std::vector<double>{0.9, 0.9}), 1);
    EXPECT_EQ(select_best_epoch(std::vector<double>{0.1}), 1);
    EXPECT_THROW(select_best_epoch(std::vector<double>{}), Error);
}

TEST(Model, DecisionRules) {
    EXPECT_EQ(argmax_lowest(std::vector<float>{0.1f, 0.7f, 0.7f}), 1);
    EXPECT_EQ(argmax_lowest(std::vector<float>{3.0f, -1.0f}), 0);
    EXPECT_TRUE(binary_is_attack(0.0f));
    EXPECT_TRUE(binary_is_attack(2.0f));
    EXPECT_FALSE(binary_is_attack(-0.01f));
    const auto& labels = LabelMap::defaults();
    EXPECT_EQ(task_target(labels.by_id(11), Task::binary), 0);
    EXPECT_EQ(task_target(labels.by_id(4), Task::binary), 1);
    EXPECT_EQ(task_target(labels.by_id(4), Task::multiclass), 4);
    EXPECT_EQ(task_class_names(Task::binary), (std::vector<std::string>{"Normal", "Attack"}));
    EXPECT_EQ(task_class_names(Task::multiclass).size(), 12u);
}

TEST(Model, PredictionsAreConsistentWithLogits) {
    std::mt19937 gen(4);
    std::vector<EncodedImage> batch;
    for (int i = 0; i < 5; ++i) batch.push_back(random_image(gen));
    Classifier multi(small_config(Task::multiclass));
    for (const auto& p : multi.predict(batch)) {
        EXPECT_EQ(p.class_index, argmax_lowest(p.logits));
        double sum = 0;
        for (const float s : p.scores) sum += s;
        EXPECT_NEAR(sum, 1.0, 1e-5);
    }
    Classifier bin(small_config(Task::binary));
    for (const auto& p : bin.predict(batch)) EXPECT_EQ(p.class_index, binary_is_attack(p.logits[0]) ? 1 : 0);
}

TEST(Model, BatchPermutationInvariance) {
    std::mt19937 gen(6);
    std::vector<EncodedImage> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_image(gen));
    Classifier model(small_config(Task::multiclass));
    const auto a = model.logits(batch);
    std::vector<EncodedImage> rev(batch.rbegin(), batch.rend());
    const auto b = model.logits(rev);
    for (int i = 0; i < 6; ++i)
        for (int k = 0; k < 12; ++k) EXPECT_NEAR(a[i * 12 + k], b[(5 - i) * 12 + k], 1e-4);
}

TEST(Model, SameSeedSameInit) {
    Classifier a(small_config(Task::binary)), b(small_config(Task::binary));
    EXPECT_EQ(a.export_weights(), b.export_weights());
    auto c = small_config(Task::binary);
    c.seed = 99;
    Classifier d(c);
    EXPECT_NE(a.export_weights(), d.export_weights());
}

TEST(Checkpoint, RoundTrip) {
    TempDir dir;
    std::mt19937 gen(8);
    std::vector<EncodedImage> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_image(gen));
    Classifier model(small_config(Task::multiclass));
    Checkpoint ck;
    ck.weights = model.export_weights();
    ck.epoch = 4;
    ck.val_accuracy = 0.75;
    ck.config = small_config(Task::multiclass);
    ck.stats_id = "s";
    ck.fingerprint = "f";
    ck.save(dir / "m" / "checkpoint", {{"seed", 3}});
    const auto back = Checkpoint::load(dir / "m" / "checkpoint");
    EXPECT_EQ(back.weights, ck.weights);
    EXPECT_EQ(back.epoch, 4);
    EXPECT_EQ(back.val_accuracy, 0.75);
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.fingerprint, "f");
    Classifier restored(back);
    const auto za = model.logits(batch), zb = restored.logits(batch);
    for (std::size_t i = 0; i < za.size(); ++i) EXPECT_EQ(za[i], zb[i]);

    // Flip one weight byte: the checksum must catch it.
    {
        std::fstream f(dir / "m" / "checkpoint.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        f.put('\x7f');
    }
    EXPECT_THROW(Checkpoint::load(dir / "m" / "checkpoint"), Error);
}

TEST(Checkpoint, WrongSizeRejected) {
    Classifier model(small_config(Task::binary));
    std::vector<float> w(10, 0.0f);
    EXPECT_THROW(model.import_weights(w), Error);
}
