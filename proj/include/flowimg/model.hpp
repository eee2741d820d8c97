// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowimg/nn/optim.hpp"
#include "flowimg/nn/resnet.hpp"
#include "flowimg/pixel_pipeline.hpp"

namespace flowimg {

enum class Task { binary, multiclass };

const char* to_string(Task t) noexcept;
Task parse_task(std::string_view s);

/// Index of a label in the task's output space. Binary: 0 = normal, 1 = attack.
int task_target(const ClassLabel& label, Task task) noexcept;
std::vector<std::string> task_class_names(Task task);
/// Number of classes a task predicts (2 for binary even though it has one logit).
int task_class_count(Task task) noexcept;

struct ModelConfig {
    Task task = Task::multiclass;
    int num_outputs = 12;
    double learning_rate = 0.0001;
    double momentum = 0.9;
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int input_size = 224;

    /// Defaults for a task: 1 output / 10 epochs (binary), 12 outputs / 50 epochs (multiclass).
    static ModelConfig for_task(Task task, std::uint64_t seed = 0);
    /// Throws a config error when an invariant does not hold.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Bilinear (half-pixel centres) resize of the 60x60 image to size x size
/// per channel, then division by 255. Output is planar CHW.
void transform_image(const EncodedImage& image, int size, std::span<float> out);
nn::Tensor<float> transform_image(const EncodedImage& image, int size = 224);

/// Argmax with ties resolved to the lowest index.
int argmax_lowest(std::span<const float> logits) noexcept;
/// sigmoid(logit) >= 0.5, i.e. attack.
bool binary_is_attack(float logit) noexcept;

struct Prediction {
    int class_index = 0;         // in the task's output space
    std::vector<float> scores;   // binary: {sigmoid}; multiclass: softmax probabilities
    std::vector<float> logits;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

/// Best-epoch rule: highest validation accuracy, earliest epoch on ties.
/// Returns the 1-based epoch.
int select_best_epoch(std::span<const double> val_accuracy);

struct Checkpoint {
    std::vector<float> weights;  // parameters then batch-norm buffers, in module order
    int epoch = 0;
    double val_accuracy = 0.0;
    ModelConfig config;
    std::string stats_id;
    std::string fingerprint;

    /// Writes <stem>.bin (weights) and <stem>.json (metadata).
    void save(const std::filesystem::path& stem, const nlohmann::json& extra = {}) const;
    static Checkpoint load(const std::filesystem::path& stem);
    nlohmann::json metadata() const;
};

/// ResNet18 with a task-specific head on the reference CPU backend.
class Classifier {
public:
    explicit Classifier(const ModelConfig& config);
    explicit Classifier(const Checkpoint& checkpoint);

    const ModelConfig& config() const noexcept { return config_; }
    nn::ResNet<float>& network() noexcept { return *net_; }
    std::size_t parameter_count() { return net_->parameter_count(); }

    /// Raw logits [N, num_outputs] in eval mode.
    nn::Tensor<float> logits(std::span<const EncodedImage> images);
    /// Batch order is preserved.
    std::vector<Prediction> predict(std::span<const EncodedImage> images);

    std::vector<float> export_weights();
    void import_weights(std::span<const float> weights);

private:
    ModelConfig config_;
    std::unique_ptr<nn::ResNet<float>> net_;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs config.epochs epochs of SGD with momentum over seeded shuffles of the
/// training set, evaluates validation accuracy after every epoch and keeps
/// the best checkpoint. Throws on empty splits or a non-finite loss.
TrainResult train(Classifier& model, std::span<const EncodedImage> train_set, std::span<const EncodedImage> val_set,
                  const EpochCallback& on_epoch = {});

double accuracy_of(Classifier& model, std::span<const EncodedImage> images);

void write_history(const std::filesystem::path& path, std::span<const EpochRecord> history);

}  // namespace flowimg
