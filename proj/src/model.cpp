// SPDX-License-Identifier: Apache-2.0

#include "flowimg/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "flowimg/error.hpp"
#include "flowimg/rng.hpp"

namespace flowimg {

namespace {

constexpr char kWeightsMagic[8] = {'F', 'L', 'O', 'W', 'I', 'M', 'G', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;
constexpr std::string_view kCheckpointFormat = "flowimg-checkpoint/1";

std::string shortest(double v) {
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

// Source tap table for one axis of the half-pixel bilinear resize.
struct Tap {
    int i0, i1;
    float w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(d)] = {i0, i1, static_cast<float>(src - i0)};
    }
    return taps;
}

}  // namespace

const char* to_string(Task t) noexcept { return t == Task::binary ? "binary" : "multiclass"; }

Task parse_task(std::string_view s) {
    if (s == "binary") return Task::binary;
    if (s == "multiclass") return Task::multiclass;
    throw config_error("unknown task '" + std::string(s) + "' (expected binary or multiclass)");
}

int task_target(const ClassLabel& label, Task task) noexcept {
    return task == Task::binary ? (label.is_attack ? 1 : 0) : label.id;
}

int task_class_count(Task task) noexcept { return task == Task::binary ? 2 : kNumClasses; }

std::vector<std::string> task_class_names(Task task) {
    if (task == Task::binary) return {"Normal", "Attack"};
    std::vector<std::string> names;
    for (int i = 0; i < kNumClasses; ++i) names.push_back("C" + std::to_string(i));
    return names;
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::for_task(Task task, std::uint64_t seed) {
    ModelConfig c;
    c.task = task;
    c.num_outputs = task == Task::binary ? 1 : kNumClasses;
    c.epochs = task == Task::binary ? 10 : 50;
    c.seed = seed;
    return c;
}

void ModelConfig::validate() const {
    const int expected = task == Task::binary ? 1 : kNumClasses;
    if (num_outputs != expected) {
        throw config_error("num_outputs " + std::to_string(num_outputs) + " does not fit task " + to_string(task));
    }
    if (!(learning_rate > 0.0)) throw config_error("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("momentum must be in [0, 1)");
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (input_size < 32) throw config_error("input_size must be >= 32");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"task", to_string(task)},   {"num_outputs", num_outputs}, {"learning_rate", learning_rate},
            {"momentum", momentum},       {"epochs", epochs},           {"batch_size", batch_size},
            {"seed", seed},               {"input_size", input_size},   {"optimizer", "sgd-momentum"}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.task = parse_task(j.at("task").get<std::string>());
    j.at("num_outputs").get_to(c.num_outputs);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("momentum").get_to(c.momentum);
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("seed").get_to(c.seed);
    j.at("input_size").get_to(c.input_size);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Transform and decision rules

void transform_image(const EncodedImage& image, int size, std::span<float> out) {
    if (out.size() != static_cast<std::size_t>(3) * size * size) throw internal_error("transform output has wrong size");
    const auto rows = bilinear_taps(EncodedImage::kRows, size);
    const auto cols = bilinear_taps(EncodedImage::kCols, size);
    constexpr float inv255 = 1.0f / 255.0f;
    for (int ch = 0; ch < EncodedImage::kChannels; ++ch) {
        float* plane = out.data() + static_cast<std::size_t>(ch) * size * size;
        for (int y = 0; y < size; ++y) {
            const Tap& ty = rows[static_cast<std::size_t>(y)];
            for (int x = 0; x < size; ++x) {
                const Tap& tx = cols[static_cast<std::size_t>(x)];
                const float p00 = image.at(ty.i0, tx.i0, ch), p01 = image.at(ty.i0, tx.i1, ch);
                const float p10 = image.at(ty.i1, tx.i0, ch), p11 = image.at(ty.i1, tx.i1, ch);
                const float top = p00 + (p01 - p00) * tx.w1;
                const float bottom = p10 + (p11 - p10) * tx.w1;
                plane[static_cast<std::size_t>(y) * size + x] = (top + (bottom - top) * ty.w1) * inv255;
            }
        }
    }
}

nn::Tensor<float> transform_image(const EncodedImage& image, int size) {
    nn::Tensor<float> t({3, size, size});
    transform_image(image, size, t.span());
    return t;
}

int argmax_lowest(std::span<const float> logits) noexcept {
    int best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

bool binary_is_attack(float logit) noexcept { return 1.0 / (1.0 + std::exp(-static_cast<double>(logit))) >= 0.5; }

int select_best_epoch(std::span<const double> val_accuracy) {
    if (val_accuracy.empty()) throw internal_error("empty validation history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < val_accuracy.size(); ++i) {
        if (val_accuracy[i] > val_accuracy[best]) best = i;
    }
    return static_cast<int>(best) + 1;
}

// ---------------------------------------------------------------------------
// Checkpoint

nlohmann::json Checkpoint::metadata() const {
    return {{"format", kCheckpointFormat}, {"epoch", epoch},           {"val_accuracy", val_accuracy},
            {"config", config.to_json()},  {"seed", config.seed},       {"task", to_string(config.task)},
            {"epochs", config.epochs},     {"stats_id", stats_id},      {"fingerprint", fingerprint},
            {"weights", {{"file", "checkpoint.bin"}, {"count", weights.size()}}}};
}

void Checkpoint::save(const std::filesystem::path& stem, const nlohmann::json& extra) const {
    auto bin = stem;
    bin += ".bin";
    auto meta_path = stem;
    meta_path += ".json";
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

    std::ofstream out(bin, std::ios::binary);
    if (!out) throw data_error("cannot write " + bin.string());
    const std::uint64_t count = weights.size();
    out.write(kWeightsMagic, sizeof kWeightsMagic);
    out.write(reinterpret_cast<const char*>(&kWeightsVersion), sizeof kWeightsVersion);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(weights.data()), static_cast<std::streamsize>(count * sizeof(float)));
    const auto checksum = fnv1a64(std::string_view(reinterpret_cast<const char*>(weights.data()), count * sizeof(float)));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
    if (!out) throw data_error("write failed: " + bin.string());

    auto meta = metadata();
    meta["weights"]["file"] = bin.filename().string();
    if (extra.is_object()) meta.update(extra);
    std::ofstream mout(meta_path);
    mout << meta.dump(2) << '\n';
    if (!mout) throw data_error("write failed: " + meta_path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& stem) {
    auto bin = stem;
    bin += ".bin";
    auto meta_path = stem;
    meta_path += ".json";

    Checkpoint c;
    std::ifstream min(meta_path);
    if (!min) throw data_error("cannot open checkpoint metadata " + meta_path.string());
    try {
        const auto meta = nlohmann::json::parse(min);
        if (meta.value("format", std::string()) != kCheckpointFormat) throw data_error("not a flowimg checkpoint");
        c.epoch = meta.at("epoch").get<int>();
        c.val_accuracy = meta.at("val_accuracy").get<double>();
        c.config = ModelConfig::from_json(meta.at("config"));
        c.stats_id = meta.value("stats_id", std::string());
        c.fingerprint = meta.value("fingerprint", std::string());
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad checkpoint metadata: " + std::string(e.what()));
    }

    std::ifstream in(bin, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint weights " + bin.string());
    char magic[sizeof kWeightsMagic];
    std::uint32_t version = 0;
    std::uint64_t count = 0, checksum = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0 || version != kWeightsVersion) {
        throw data_error("bad checkpoint weights header: " + bin.string());
    }
    c.weights.resize(count);
    in.read(reinterpret_cast<char*>(c.weights.data()), static_cast<std::streamsize>(count * sizeof(float)));
    in.read(reinterpret_cast<char*>(&checksum), sizeof checksum);
    if (!in) throw data_error("truncated checkpoint weights: " + bin.string());
    if (checksum != fnv1a64(std::string_view(reinterpret_cast<const char*>(c.weights.data()), count * sizeof(float)))) {
        throw data_error("checkpoint weights checksum mismatch: " + bin.string());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(const ModelConfig& config) : config_(config) {
    config_.validate();
    net_ = std::make_unique<nn::ResNet<float>>(nn::ResNetSpec::resnet18(config_.num_outputs));
    net_->init(sub_seed(config_.seed, "init"));
}

Classifier::Classifier(const Checkpoint& checkpoint) : Classifier(checkpoint.config) {
    import_weights(checkpoint.weights);
}

std::vector<float> Classifier::export_weights() {
    std::vector<float> w;
    for (auto* p : net_->parameters()) w.insert(w.end(), p->value.data(), p->value.data() + p->value.size());
    for (auto* b : net_->buffers()) w.insert(w.end(), b->data(), b->data() + b->size());
    return w;
}

void Classifier::import_weights(std::span<const float> weights) {
    std::size_t expected = 0;
    for (auto* p : net_->parameters()) expected += p->value.size();
    for (auto* b : net_->buffers()) expected += b->size();
    if (weights.size() != expected) {
        throw data_error("checkpoint holds " + std::to_string(weights.size()) + " values, model needs " +
                         std::to_string(expected));
    }
    std::size_t off = 0;
    for (auto* p : net_->parameters()) {
        std::copy_n(weights.begin() + static_cast<long>(off), p->value.size(), p->value.data());
        off += p->value.size();
    }
    for (auto* b : net_->buffers()) {
        std::copy_n(weights.begin() + static_cast<long>(off), b->size(), b->data());
        off += b->size();
    }
}

namespace {
nn::Tensor<float> make_batch(std::span<const EncodedImage> images, std::span<const std::size_t> order, int size) {
    const auto n = static_cast<int>(order.size());
    nn::Tensor<float> x({n, 3, size, size});
    const std::size_t stride = static_cast<std::size_t>(3) * size * size;
    for (int i = 0; i < n; ++i) {
        transform_image(images[order[static_cast<std::size_t>(i)]], size,
                        std::span<float>(x.data() + static_cast<std::size_t>(i) * stride, stride));
    }
    return x;
}

int decide(const float* logits, int num_outputs) {
    if (num_outputs == 1) return binary_is_attack(logits[0]) ? 1 : 0;
    return argmax_lowest(std::span<const float>(logits, static_cast<std::size_t>(num_outputs)));
}
}  // namespace

nn::Tensor<float> Classifier::logits(std::span<const EncodedImage> images) {
    net_->set_training(false);
    const int k = config_.num_outputs;
    nn::Tensor<float> out({static_cast<int>(images.size()), k});
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(config_.batch_size);
    for (std::size_t start = 0; start < images.size(); start += bs) {
        const std::size_t len = std::min(bs, images.size() - start);
        auto y = net_->forward(make_batch(images, std::span(order).subspan(start, len), config_.input_size));
        std::copy(y.data(), y.data() + y.size(), out.data() + start * static_cast<std::size_t>(k));
    }
    return out;
}

std::vector<Prediction> Classifier::predict(std::span<const EncodedImage> images) {
    const auto z = logits(images);
    const int k = config_.num_outputs;
    std::vector<Prediction> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const float* row = z.data() + i * static_cast<std::size_t>(k);
        auto& p = out[i];
        p.logits.assign(row, row + k);
        p.class_index = decide(row, k);
        if (k == 1) {
            p.scores = {static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(row[0]))))};
        } else {
            const double zmax = *std::max_element(row, row + k);
            double denom = 0.0;
            for (int c = 0; c < k; ++c) denom += std::exp(row[c] - zmax);
            for (int c = 0; c < k; ++c) p.scores.push_back(static_cast<float>(std::exp(row[c] - zmax) / denom));
        }
    }
    return out;
}

double accuracy_of(Classifier& model, std::span<const EncodedImage> images) {
    if (images.empty()) return 0.0;
    const auto preds = model.predict(images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (preds[i].class_index == task_target(images[i].label, model.config().task)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainResult train(Classifier& model, std::span<const EncodedImage> train_set, std::span<const EncodedImage> val_set,
                  const EpochCallback& on_epoch) {
    if (train_set.empty()) throw data_error("training split is empty");
    if (val_set.empty()) throw data_error("validation split is empty");
    const auto& cfg = model.config();
    auto& net = model.network();
    nn::SgdMomentum<float> opt(net.parameters(), cfg.learning_rate, cfg.momentum);

    std::vector<int> targets(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) targets[i] = task_target(train_set[i].label, cfg.task);

    TrainResult result;
    std::vector<double> val_history;
    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(sub_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        const auto bs = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const auto batch = std::span<const std::size_t>(order).subspan(start, std::min(bs, order.size() - start));
            std::vector<int> batch_targets;
            for (auto idx : batch) batch_targets.push_back(targets[idx]);

            net.set_training(true);
            opt.zero_grad();
            auto z = net.forward(make_batch(train_set, batch, cfg.input_size));
            nn::Tensor<float> grad;
            const double loss = cfg.task == Task::binary ? nn::sigmoid_cross_entropy(z, batch_targets, grad)
                                                         : nn::softmax_cross_entropy(z, batch_targets, grad);
            if (!std::isfinite(loss)) {
                throw internal_error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                     std::to_string(start));
            }
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (decide(z.data() + i * static_cast<std::size_t>(cfg.num_outputs), cfg.num_outputs) == batch_targets[i]) {
                    ++correct;
                }
            }
            net.backward(std::move(grad));
            opt.step();
            loss_sum += loss * static_cast<double>(batch.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        rec.val_accuracy = accuracy_of(model, val_set);
        result.history.push_back(rec);
        val_history.push_back(rec.val_accuracy);

        if (select_best_epoch(val_history) == epoch) {
            result.best.weights = model.export_weights();
            result.best.epoch = epoch;
            result.best.val_accuracy = rec.val_accuracy;
        }
        if (on_epoch) on_epoch(rec);
    }
    result.best.config = cfg;
    return result;
}

void write_history(const std::filesystem::path& path, std::span<const EpochRecord> history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << "epoch,train_loss,train_acc,val_acc\n";
    for (const auto& r : history) {
        out << r.epoch << ',' << shortest(r.train_loss) << ',' << shortest(r.train_accuracy) << ','
            << shortest(r.val_accuracy) << '\n';
    }
}

}  // namespace flowimg
