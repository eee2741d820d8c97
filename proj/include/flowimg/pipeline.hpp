// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowimg/feature_catalog.hpp"
#include "flowimg/metrics.hpp"
#include "flowimg/model.hpp"
#include "flowimg/pixel_pipeline.hpp"

namespace flowimg {

enum class FitMode { train_only, global };
const char* to_string(FitMode m) noexcept;
FitMode parse_fit_mode(std::string_view s);

struct PipelineConfig {
    std::vector<std::string> inputs;  // files, directories (*.csv inside) or glob patterns
    std::filesystem::path output = "run";
    std::filesystem::path catalog;    // empty: built-in CICDDoS2019 catalog
    std::filesystem::path labels;     // empty: built-in label aliases
    std::uint64_t seed = 0;
    SplitPolicy split;
    FitMode fit_mode = FitMode::train_only;
    ModelConfig model;

    /// Reads a YAML config file. Keys missing from the file keep their defaults.
    static PipelineConfig load(const std::filesystem::path& path);
    static PipelineConfig parse(std::string_view yaml_text);
    nlohmann::json to_json() const;

    FeatureCatalog load_catalog() const;
    LabelMap load_labels() const;
    /// Input CSV files in sorted order. Throws a data error "no data" when empty.
    std::vector<std::filesystem::path> resolve_inputs() const;
    /// Hash over everything that determines the encoded dataset: input names
    /// and sizes, catalog, labels, seed, split policy and fit mode.
    std::string fingerprint() const;
};

struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest.csv"; }
    std::filesystem::path stats() const { return root / "stats.json"; }
    std::filesystem::path ingest_report() const { return root / "ingest_report.json"; }
    std::filesystem::path checkpoint_stem() const { return root / "model" / "checkpoint"; }
    std::filesystem::path history() const { return root / "model" / "history.csv"; }
    std::filesystem::path predictions() const { return root / "eval" / "predictions.csv"; }
    std::filesystem::path eval_report() const { return root / "eval" / "report.json"; }
    std::filesystem::path report_dir() const { return root / "report"; }
};

/// Every command returns a JSON summary (artifact paths, counts) for stdout.
nlohmann::json run_encode(const PipelineConfig& config);
nlohmann::json run_train(const PipelineConfig& config);
nlohmann::json run_eval(const PipelineConfig& config);
nlohmann::json run_report(const PipelineConfig& config);

/// Scores PNG images or flow CSVs (encoded with the run's frozen stats).
nlohmann::json run_predict(const PipelineConfig& config, const std::vector<std::filesystem::path>& inputs);

/// Cross-checks fingerprint, seed and stats id across every artifact present
/// under the run directory. `issues` is empty when consistent.
struct VerifyResult {
    std::vector<std::string> checked;
    std::vector<std::string> issues;
    bool ok() const { return issues.empty(); }
};
VerifyResult run_verify(const std::filesystem::path& run_dir);

/// Compares a report file against the published reference numbers.
std::vector<ReferenceCheck> run_compare(const std::filesystem::path& report_json, std::optional<bool> binary = {});

/// Reads every image of a split listed in the manifest, labelled from `labels`.
std::vector<EncodedImage> load_split(const std::filesystem::path& run_dir, const DatasetManifest& manifest, Split split,
                                     const LabelMap& labels);

}  // namespace flowimg
