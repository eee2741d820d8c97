// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <gtest/gtest.h>

#include "flowimg/error.hpp"
#include "flowimg/model.hpp"
#include "support.hpp"

using namespace flowimg;

namespace {

// Class k: every pixel drawn from [k*200, k*200 + 40).
std::vector<EncodedImage> separable(std::size_t per_class, std::uint32_t seed) {
    std::mt19937 gen(seed);
    std::vector<EncodedImage> out;
    for (int k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            EncodedImage img;
            for (auto& p : img.pixels) p = static_cast<std::uint8_t>(k * 200 + gen() % 40);
            img.label = LabelMap::defaults().by_id(k == 0 ? 11 : 3);
            out.push_back(img);
        }
    }
    return out;
}

}  // namespace

TEST(Training, SeparableBinaryLearns) {
    auto config = ModelConfig::for_task(Task::binary, 21);
    config.input_size = 64;
    config.batch_size = 8;
    config.epochs = 10;
    const auto train_set = separable(16, 1), val_set = separable(4, 2), test_set = separable(10, 3);

    Classifier model(config);
    std::vector<EpochRecord> seen;
    const auto result = train(model, train_set, val_set, [&](const EpochRecord& r) { seen.push_back(r); });
    ASSERT_EQ(result.history.size(), 10u);
    EXPECT_EQ(seen.size(), 10u);
    std::vector<double> val;
    for (const auto& r : result.history) val.push_back(r.val_accuracy);
    EXPECT_EQ(result.best.epoch, select_best_epoch(val));

    Classifier best(result.best);
    EXPECT_GE(accuracy_of(best, train_set), 0.99);
    EXPECT_GE(accuracy_of(best, test_set), 0.99);
}

TEST(Training, DeterministicUnderSeed) {
    auto config = ModelConfig::for_task(Task::multiclass, 5);
    config.input_size = 32;
    config.batch_size = 4;
    config.epochs = 2;
    const auto train_set = separable(4, 1), val_set = separable(2, 2);
    Classifier a(config), b(config);
    const auto ra = train(a, train_set, val_set);
    const auto rb = train(b, train_set, val_set);
    EXPECT_EQ(ra.best.weights, rb.best.weights);
    EXPECT_EQ(ra.history.size(), rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
}

TEST(Training, EmptySplitsRejected) {
    auto config = ModelConfig::for_task(Task::binary);
    config.input_size = 32;
    Classifier model(config);
    const auto some = separable(1, 1);
    EXPECT_THROW(train(model, {}, some), Error);
    EXPECT_THROW(train(model, some, {}), Error);
}

TEST(Training, HistoryCsv) {
    flowimg::testing::TempDir dir;
    std::vector<EpochRecord> h = {{1, 0.5, 0.25, 0.75}, {2, 0.125, 1.0, 1.0}};
    write_history(dir / "h.csv", h);
    EXPECT_EQ(flowimg::testing::read_text(dir / "h.csv"),
              "epoch,train_loss,train_acc,val_acc\n1,0.5,0.25,0.75\n2,0.125,1,1\n");
}
