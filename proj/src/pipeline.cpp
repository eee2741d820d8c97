// SPDX-License-Identifier: Apache-2.0

#include "flowimg/pipeline.hpp"

#include <glob.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include "flowimg/default_config.hpp"
#include "flowimg/error.hpp"
#include "flowimg/ingest.hpp"
#include "flowimg/rng.hpp"

namespace flowimg {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kIngestReportFormat = "flowimg-ingest-report/1";
constexpr std::string_view kFingerprintFormat = "flowimg-fingerprint/1";

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool has_glob_chars(const std::string& s) { return s.find_first_of("*?[") != std::string::npos; }

bool is_csv(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".csv";
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw data_error("cannot write " + path.string());
}

template <typename T>
void read_scalar(const YAML::Node& node, const char* key, T& out) {
    if (node && node[key]) out = node[key].as<T>();
}

}  // namespace

const char* to_string(FitMode m) noexcept { return m == FitMode::global ? "global" : "train-only"; }

FitMode parse_fit_mode(std::string_view s) {
    if (s == "train-only" || s == "train_only") return FitMode::train_only;
    if (s == "global") return FitMode::global;
    throw config_error("unknown stats fit mode '" + std::string(s) + "' (train-only|global)");
}

// ---------------------------------------------------------------------------
// PipelineConfig

PipelineConfig PipelineConfig::load(const fs::path& path) { return parse(read_text(path)); }

PipelineConfig PipelineConfig::parse(std::string_view yaml_text) {
    PipelineConfig c;
    try {
        const YAML::Node root = YAML::Load(std::string(yaml_text));
        if (root.IsNull()) return c;
        if (!root.IsMap()) throw config_error("config must be a mapping");
        if (const auto in = root["inputs"]) {
            if (in.IsSequence()) {
                for (const auto& n : in) c.inputs.push_back(n.as<std::string>());
            } else {
                c.inputs.push_back(in.as<std::string>());
            }
        }
        if (root["output"]) c.output = root["output"].as<std::string>();
        if (root["catalog"]) c.catalog = root["catalog"].as<std::string>();
        if (root["labels"]) c.labels = root["labels"].as<std::string>();
        read_scalar(root, "seed", c.seed);
        if (const auto s = root["split"]) {
            read_scalar(s, "test_per_class", c.split.test_per_class);
            read_scalar(s, "val_fraction", c.split.val_fraction);
        }
        if (root["stats_fit"]) c.fit_mode = parse_fit_mode(root["stats_fit"].as<std::string>());

        const auto m = root["model"];
        Task task = Task::multiclass;
        if (m && m["task"]) task = parse_task(m["task"].as<std::string>());
        c.model = ModelConfig::for_task(task, c.seed);
        read_scalar(m, "epochs", c.model.epochs);
        read_scalar(m, "batch_size", c.model.batch_size);
        read_scalar(m, "learning_rate", c.model.learning_rate);
        read_scalar(m, "momentum", c.model.momentum);
        read_scalar(m, "input_size", c.model.input_size);
    } catch (const YAML::Exception& e) {
        throw config_error(std::string("bad config: ") + e.what());
    }
    return c;
}

nlohmann::json PipelineConfig::to_json() const {
    return {{"inputs", inputs},
            {"output", output.string()},
            {"catalog", catalog.string()},
            {"labels", labels.string()},
            {"seed", seed},
            {"split", {{"test_per_class", split.test_per_class}, {"val_fraction", split.val_fraction}}},
            {"stats_fit", to_string(fit_mode)},
            {"model", model.to_json()}};
}

FeatureCatalog PipelineConfig::load_catalog() const {
    return catalog.empty() ? FeatureCatalog::cicddos2019() : FeatureCatalog::load(catalog);
}

LabelMap PipelineConfig::load_labels() const { return labels.empty() ? LabelMap::defaults() : LabelMap::load(labels); }

std::vector<fs::path> PipelineConfig::resolve_inputs() const {
    std::set<fs::path> files;
    for (const auto& spec : inputs) {
        if (has_glob_chars(spec)) {
            glob_t g{};
            const int rc = ::glob(spec.c_str(), 0, nullptr, &g);
            if (rc == 0) {
                for (std::size_t i = 0; i < g.gl_pathc; ++i) {
                    if (fs::is_regular_file(g.gl_pathv[i])) files.insert(g.gl_pathv[i]);
                }
            }
            globfree(&g);
            if (rc != 0 && rc != GLOB_NOMATCH) throw config_error("cannot expand " + spec);
        } else if (fs::is_directory(spec)) {
            for (const auto& e : fs::directory_iterator(spec)) {
                if (e.is_regular_file() && is_csv(e.path())) files.insert(e.path());
            }
        } else if (fs::is_regular_file(spec)) {
            files.insert(spec);
        } else {
            throw config_error("input not found: " + spec);
        }
    }
    if (files.empty()) throw data_error("no data: no input CSV files");
    return {files.begin(), files.end()};
}

std::string PipelineConfig::fingerprint() const {
    nlohmann::json in = nlohmann::json::array();
    for (const auto& f : resolve_inputs()) in.push_back({f.filename().string(), fs::file_size(f)});
    const auto text_id = [](const fs::path& p, std::string_view builtin) {
        return hex64(fnv1a64(p.empty() ? builtin : std::string_view(read_text(p))));
    };
    const nlohmann::json j = {{"format", kFingerprintFormat},
                              {"inputs", in},
                              {"catalog", text_id(catalog, kDefaultCatalogYaml)},
                              {"labels", text_id(labels, kDefaultLabelsYaml)},
                              {"seed", seed},
                              {"test_per_class", split.test_per_class},
                              {"val_fraction", split.val_fraction},
                              {"stats_fit", to_string(fit_mode)}};
    return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// encode

nlohmann::json run_encode(const PipelineConfig& config) {
    const auto files = config.resolve_inputs();
    const auto catalog = config.load_catalog();
    const auto labels = config.load_labels();
    const RunLayout layout{config.output};
    const std::string fp = config.fingerprint();

    // Pass 1: ingest everything, count records per (file, class) stream.
    struct Stream {
        std::size_t records = 0;
        std::size_t first_chunk = 0;
        std::size_t chunks = 0;
    };
    std::vector<ColumnPlan> plans;
    std::vector<IngestStats> file_stats;
    std::vector<std::map<int, Stream>> streams(files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        spdlog::info("ingest {}", files[i].string());
        FlowReader reader(files[i], catalog, labels);
        while (auto rec = reader.next()) ++streams[i][rec->label.id].records;
        plans.push_back(reader.plan());
        file_stats.push_back(reader.stats());
        for (const auto& w : reader.plan().warnings) spdlog::warn("{}: {}", files[i].filename().string(), w);
        if (plans.back().retained_names() != plans.front().retained_names()) {
            throw data_error(files[i].string() + ": retained columns differ from " + files.front().string());
        }
    }

    std::map<int, std::size_t> next_chunk;
    std::map<int, std::size_t> dropped_trailing;
    for (auto& per_file : streams) {
        for (auto& [cls, s] : per_file) {
            s.first_chunk = next_chunk[cls];
            s.chunks = s.records / EncodedImage::kChunkSize;
            next_chunk[cls] += s.chunks;
            dropped_trailing[cls] += s.records % EncodedImage::kChunkSize;
        }
    }
    std::map<int, std::vector<std::size_t>> chunks_per_class;
    std::size_t total_chunks = 0;
    for (const auto& [cls, n] : next_chunk) {
        if (n == 0) continue;
        auto& v = chunks_per_class[cls];
        for (std::size_t k = 0; k < n; ++k) v.push_back(k);
        total_chunks += n;
    }
    if (total_chunks == 0) throw data_error("no data: no class has a full chunk of 180 usable rows");

    DatasetManifest manifest = split_dataset(chunks_per_class, config.seed, config.split);
    manifest.fingerprint = fp;
    for (const auto& w : manifest.warnings) spdlog::warn("{}", w);
    std::map<std::pair<int, std::size_t>, Split> assignment;
    for (const auto& e : manifest.entries) assignment[{e.class_id, e.chunk_index}] = e.split;

    // Pass 2: fit normalisation statistics. With no train split (small
    // classes under the default policy) train-only falls back to all records.
    FitMode fit_mode = config.fit_mode;
    if (fit_mode == FitMode::train_only && manifest.count(Split::train) == 0) {
        manifest.warnings.push_back("no training images; normalisation statistics fitted on all records");
        spdlog::warn("{}", manifest.warnings.back());
        fit_mode = FitMode::global;
    }
    StatsAccumulator acc(plans.front().retained.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        FlowReader reader(files[i], plans[i], labels);
        std::map<int, std::size_t> offset;
        bool used = false;
        while (auto rec = reader.next()) {
            const auto& s = streams[i].at(rec->label.id);
            const std::size_t local = offset[rec->label.id]++ / EncodedImage::kChunkSize;
            if (fit_mode == FitMode::train_only) {
                if (local >= s.chunks) continue;
                if (assignment.at({rec->label.id, s.first_chunk + local}) != Split::train) continue;
            }
            acc.add(*rec);
            used = true;
        }
        if (used) acc.note_source(reader.file_id());
    }
    if (acc.count() == 0) throw internal_error("no records reached the statistics fit");
    const NormStats stats = acc.finish(plans.front().retained_names(), to_string(fit_mode));
    manifest.stats_id = stats.id();

    // Pass 3: normalise, encode and write. Old image trees are replaced.
    fs::create_directories(layout.root);
    for (const Split s : {Split::train, Split::val, Split::test}) fs::remove_all(layout.root / to_string(s));
    std::size_t written = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        FlowReader reader(files[i], plans[i], labels);
        std::map<int, ChunkEncoder> encoders;
        while (auto rec = reader.next()) {
            auto it = encoders.find(rec->label.id);
            if (it == encoders.end()) {
                it = encoders.try_emplace(rec->label.id, stats, reader.file_id(), streams[i].at(rec->label.id).first_chunk)
                         .first;
            }
            if (auto img = it->second.push(*rec)) {
                const ManifestEntry e{img->label.id, img->provenance.chunk_index,
                                      assignment.at({img->label.id, img->provenance.chunk_index})};
                write_png(layout.root / e.path(), *img);
                ++written;
            }
        }
        spdlog::info("encoded {} ({} images so far)", files[i].filename().string(), written);
    }
    if (written != manifest.entries.size()) throw internal_error("image count does not match the manifest");

    const nlohmann::json stamp = {{"fingerprint", fp}, {"seed", config.seed}};
    stats.save(layout.stats(), stamp);
    manifest.save(layout.manifest());

    IngestStats total;
    nlohmann::json file_json = nlohmann::json::array();
    for (std::size_t i = 0; i < files.size(); ++i) {
        total += file_stats[i];
        file_json.push_back({{"file", files[i].filename().string()},
                             {"stats", file_stats[i]},
                             {"retained", plans[i].retained.size()},
                             {"dropped_listed", plans[i].drop_listed_count()},
                             {"unknown_columns", plans[i].count(ColumnDropCause::unknown)},
                             {"warnings", plans[i].warnings}});
    }
    nlohmann::json class_json = nlohmann::json::array();
    for (const auto& [cls, n] : next_chunk) {
        class_json.push_back({{"class_id", cls},
                              {"name", labels.by_id(cls).name},
                              {"images", n},
                              {"dropped_trailing", dropped_trailing[cls]},
                              {"train", manifest.count(Split::train, cls)},
                              {"val", manifest.count(Split::val, cls)},
                              {"test", manifest.count(Split::test, cls)}});
    }
    nlohmann::json report = {{"format", kIngestReportFormat}, {"fingerprint", fp},         {"seed", config.seed},
                             {"stats_id", stats.id()},        {"files", file_json},        {"total", total},
                             {"classes", class_json},         {"warnings", manifest.warnings}};
    write_json(layout.ingest_report(), report);

    return {{"command", "encode"},
            {"images", written},
            {"train", manifest.count(Split::train)},
            {"val", manifest.count(Split::val)},
            {"test", manifest.count(Split::test)},
            {"rows_read", total.rows_read},
            {"rows_rejected", total.rejected_total()},
            {"fingerprint", fp},
            {"seed", config.seed},
            {"artifacts",
             {{"manifest", layout.manifest().string()},
              {"stats", layout.stats().string()},
              {"ingest_report", layout.ingest_report().string()}}}};
}

std::vector<EncodedImage> load_split(const fs::path& run_dir, const DatasetManifest& manifest, Split split,
                                     const LabelMap& labels) {
    std::vector<EncodedImage> out;
    for (const auto& e : manifest.select(split)) {
        auto img = read_png(run_dir / e.path());
        img.label = labels.by_id(e.class_id);
        img.provenance.chunk_index = e.chunk_index;
        out.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------
// train / eval

nlohmann::json run_train(const PipelineConfig& config) {
    const RunLayout layout{config.output};
    const auto labels = config.load_labels();
    const auto manifest = DatasetManifest::load(layout.manifest());

    ModelConfig mc = config.model;
    mc.seed = config.seed;
    mc.num_outputs = mc.task == Task::binary ? 1 : kNumClasses;
    mc.validate();

    const auto train_set = load_split(layout.root, manifest, Split::train, labels);
    const auto val_set = load_split(layout.root, manifest, Split::val, labels);
    spdlog::info("train {} images, val {} images, task {}", train_set.size(), val_set.size(), to_string(mc.task));

    Classifier model(mc);
    auto result = train(model, train_set, val_set, [](const EpochRecord& r) {
        spdlog::info("epoch {} loss {:.6f} train_acc {:.4f} val_acc {:.4f}", r.epoch, r.train_loss, r.train_accuracy,
                     r.val_accuracy);
    });
    result.best.stats_id = manifest.stats_id;
    result.best.fingerprint = manifest.fingerprint;
    result.best.save(layout.checkpoint_stem(), {{"seed", manifest.seed}});
    write_history(layout.history(), result.history);

    auto bin = layout.checkpoint_stem();
    bin += ".bin";
    return {{"command", "train"},
            {"best_epoch", result.best.epoch},
            {"val_accuracy", result.best.val_accuracy},
            {"epochs", mc.epochs},
            {"fingerprint", manifest.fingerprint},
            {"seed", manifest.seed},
            {"artifacts", {{"checkpoint", bin.string()}, {"history", layout.history().string()}}}};
}

nlohmann::json run_eval(const PipelineConfig& config) {
    const RunLayout layout{config.output};
    const auto labels = config.load_labels();
    const auto manifest = DatasetManifest::load(layout.manifest());
    const auto ckpt = Checkpoint::load(layout.checkpoint_stem());
    if (ckpt.fingerprint != manifest.fingerprint) throw data_error("checkpoint was trained on a different dataset");

    const auto test_set = load_split(layout.root, manifest, Split::test, labels);
    if (test_set.empty()) throw data_error("test split is empty");
    Classifier model(ckpt);
    const auto preds = model.predict(test_set);

    const Task task = ckpt.config.task;
    const auto names = task_class_names(task);
    std::vector<int> actual, predicted;
    const auto entries = manifest.select(Split::test);
    fs::create_directories(layout.predictions().parent_path());
    std::ofstream out(layout.predictions());
    out << "path,class_id,actual,predicted";
    for (const auto& n : names) {
        if (task == Task::multiclass) out << ",p_" << n;
    }
    out << (task == Task::binary ? ",p_Attack\n" : "\n");
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        actual.push_back(task_target(test_set[i].label, task));
        predicted.push_back(preds[i].class_index);
        out << entries[i].path() << ',' << entries[i].class_id << ',' << names[actual.back()] << ','
            << names[predicted.back()];
        for (const float s : preds[i].scores) out << ',' << s;
        out << '\n';
    }
    if (!out) throw data_error("cannot write " + layout.predictions().string());

    const auto report = EvalReport::from_matrix(confusion(actual, predicted, names));
    const nlohmann::json meta = {{"fingerprint", manifest.fingerprint},
                                 {"seed", manifest.seed},
                                 {"stats_id", manifest.stats_id},
                                 {"task", to_string(task)},
                                 {"checkpoint_epoch", ckpt.epoch}};
    write_json(layout.eval_report(), report.to_json(meta));
    spdlog::info("test accuracy {:.4f} over {} images", report.accuracy, test_set.size());
    return {{"command", "eval"},
            {"accuracy", report.accuracy},
            {"macro_precision", report.macro.precision},
            {"macro_recall", report.macro.recall},
            {"macro_f1", report.macro.f1},
            {"samples", test_set.size()},
            {"fingerprint", manifest.fingerprint},
            {"seed", manifest.seed},
            {"artifacts",
             {{"report", layout.eval_report().string()}, {"predictions", layout.predictions().string()}}}};
}

nlohmann::json run_report(const PipelineConfig& config) {
    const RunLayout layout{config.output};
    const auto j = read_json(layout.eval_report());
    const auto report = EvalReport::from_json(j);
    nlohmann::json meta = nlohmann::json::object();
    for (const char* key : {"fingerprint", "seed", "stats_id", "task", "checkpoint_epoch"}) {
        if (j.contains(key)) meta[key] = j[key];
    }
    const auto files = render_report(report, layout.report_dir(), meta);
    nlohmann::json out = {{"command", "report"},
                          {"summary", summary_table(report)},
                          {"artifacts",
                           {{"report", files.json.string()},
                            {"summary", files.summary.string()},
                            {"precision_chart", files.precision_chart.string()},
                            {"confusion_heatmap", files.confusion_chart.string()}}}};
    if (report.matrix.classes() == kNumClasses) {
        const auto labels = config.load_labels();
        const auto collapsed = EvalReport::from_matrix(collapse_to_binary(report.matrix, labels));
        const auto path = layout.report_dir() / "report_collapsed_binary.json";
        write_json(path, collapsed.to_json(meta));
        out["artifacts"]["collapsed_binary"] = path.string();
    }
    return out;
}

// ---------------------------------------------------------------------------
// predict

nlohmann::json run_predict(const PipelineConfig& config, const std::vector<fs::path>& inputs) {
    const RunLayout layout{config.output};
    const auto ckpt = Checkpoint::load(layout.checkpoint_stem());
    Classifier model(ckpt);
    const auto names = task_class_names(ckpt.config.task);

    std::vector<EncodedImage> images;
    std::vector<std::string> sources;
    for (const auto& p : inputs) {
        if (is_csv(p)) {
            const NormStats stats = NormStats::load(layout.stats());
            if (stats.id() != ckpt.stats_id) throw data_error("stats file does not match the checkpoint");
            const auto ingested = ingest_file(p, config.load_catalog(), config.load_labels());
            std::map<int, std::vector<FlowRecord>> by_class;
            for (const auto& r : ingested.records) by_class[r.label.id].push_back(r);
            for (const auto& [cls, recs] : by_class) {
                for (auto& img : encode_chunks(recs, stats, p.filename().string()).images) {
                    sources.push_back(p.filename().string() + "#C" + std::to_string(cls) + "/" +
                                      std::to_string(img.provenance.chunk_index));
                    images.push_back(std::move(img));
                }
            }
        } else {
            images.push_back(read_png(p));
            sources.push_back(p.string());
        }
    }
    nlohmann::json rows = nlohmann::json::array();
    if (!images.empty()) {
        const auto preds = model.predict(images);
        for (std::size_t i = 0; i < images.size(); ++i) {
            rows.push_back({{"source", sources[i]},
                            {"predicted", names[preds[i].class_index]},
                            {"class_index", preds[i].class_index},
                            {"scores", preds[i].scores}});
        }
    }
    return {{"command", "predict"}, {"task", to_string(ckpt.config.task)}, {"predictions", rows}};
}

// ---------------------------------------------------------------------------
// verify / compare

VerifyResult run_verify(const fs::path& run_dir) {
    const RunLayout layout{run_dir};
    VerifyResult v;
    if (!fs::exists(layout.manifest())) {
        v.issues.push_back("missing " + layout.manifest().string());
        return v;
    }
    DatasetManifest manifest;
    try {
        manifest = DatasetManifest::load(layout.manifest());
    } catch (const Error& e) {
        v.issues.push_back(e.what());
        return v;
    }
    v.checked.push_back(layout.manifest().string());
    for (const auto& e : manifest.entries) {
        if (!fs::exists(run_dir / e.path())) v.issues.push_back("missing image " + e.path());
    }

    const auto check = [&](const fs::path& path, const nlohmann::json& j, bool has_stats_id) {
        v.checked.push_back(path.string());
        if (j.value("fingerprint", std::string()) != manifest.fingerprint) {
            v.issues.push_back(path.string() + ": fingerprint differs from the manifest");
        }
        if (!j.contains("seed") || j["seed"].get<std::uint64_t>() != manifest.seed) {
            v.issues.push_back(path.string() + ": seed differs from the manifest");
        }
        if (has_stats_id && j.value("stats_id", std::string()) != manifest.stats_id) {
            v.issues.push_back(path.string() + ": stats id differs from the manifest");
        }
    };
    const auto guarded = [&](const fs::path& path, auto&& fn) {
        if (!fs::exists(path)) return;
        try {
            fn();
        } catch (const std::exception& e) {
            v.issues.push_back(path.string() + ": " + e.what());
        }
    };

    guarded(layout.stats(), [&] {
        const auto j = read_json(layout.stats());
        check(layout.stats(), j, false);
        if (NormStats::from_json(j).id() != manifest.stats_id) v.issues.push_back("stats.json id differs from the manifest");
    });
    guarded(layout.ingest_report(), [&] { check(layout.ingest_report(), read_json(layout.ingest_report()), true); });
    auto meta = layout.checkpoint_stem();
    meta += ".json";
    guarded(meta, [&] {
        check(meta, read_json(meta), true);
        Checkpoint::load(layout.checkpoint_stem());  // checksum
    });
    guarded(layout.eval_report(), [&] { check(layout.eval_report(), read_json(layout.eval_report()), true); });
    const auto rendered = layout.report_dir() / "report.json";
    guarded(rendered, [&] { check(rendered, read_json(rendered), true); });
    return v;
}

std::vector<ReferenceCheck> run_compare(const fs::path& report_json, std::optional<bool> binary) {
    const auto report = EvalReport::from_json(read_json(report_json));
    return compare_to_reference(report, binary.value_or(report.matrix.classes() == 2));
}

}  // namespace flowimg
