// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowimg/feature_catalog.hpp"
#include "flowimg/ingest.hpp"

namespace flowimg {

enum class DistKind { constant, uniform, normal };

/// constant: value a; uniform: [a, b); normal: mean a, stddev b.
struct FeatureDist {
    DistKind kind = DistKind::constant;
    double a = 0.0;
    double b = 0.0;
};

struct SynthClass {
    std::string label;  // raw label text written to the CSV
    std::size_t rows = 0;
    FeatureDist dist;   // used for every numeric column without an override
    std::map<std::string, FeatureDist> overrides;
};

struct SynthSpec {
    std::vector<SynthClass> classes;
    /// Feature columns to emit; empty means the catalog's full header.
    std::vector<std::string> feature_names;
    std::uint64_t seed = 0;
    /// Fraction of rows that receive exactly one malformed retained cell.
    double malformed_fraction = 0.0;
    /// Shuffle class rows together instead of writing them class by class.
    bool interleave = true;

    /// Well separated classes: class i draws every feature uniformly from
    /// [100*i, 100*i + 20).
    static SynthSpec separable(const std::vector<std::pair<std::string, std::size_t>>& classes, std::uint64_t seed);

    void validate() const;
    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthOutput {
    std::filesystem::path csv;
    std::filesystem::path sidecar;
    IngestStats expected;
    std::map<std::string, std::size_t> expected_rows_per_label;  // emitted rows by raw label
};

/// Writes `csv_path` and a `<csv_path>.truth.json` sidecar holding the exact
/// IngestStats that ingesting the file must produce.
SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& csv_path,
                     const FeatureCatalog& catalog = FeatureCatalog::cicddos2019(),
                     const LabelMap& labels = LabelMap::defaults());

}  // namespace flowimg
