// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowimg/csv.hpp"
#include "flowimg/feature_catalog.hpp"

namespace flowimg {

enum class RejectReason { missing_value, non_numeric, non_finite, unknown_label };

inline constexpr RejectReason kRejectReasons[] = {RejectReason::missing_value, RejectReason::non_numeric,
                                                  RejectReason::non_finite, RejectReason::unknown_label};

const char* to_string(RejectReason r) noexcept;

struct SourceRef {
    std::string file_id;
    std::size_t row = 0;  // 1-based data row (the header is row 0)

    friend bool operator==(const SourceRef&, const SourceRef&) = default;
};

/// One cleaned flow sample. `values` follow the plan's canonical order.
struct FlowRecord {
    std::vector<double> values;
    ClassLabel label;
    SourceRef source;

    friend bool operator==(const FlowRecord&, const FlowRecord&) = default;
};

struct IngestStats {
    std::size_t rows_read = 0;
    std::size_t rows_emitted = 0;
    std::map<RejectReason, std::size_t> rejected;

    std::size_t rejected_total() const;
    std::size_t rejected_for(RejectReason r) const;
    /// rows_read == rows_emitted + sum of rejections.
    bool conserved() const { return rows_read == rows_emitted + rejected_total(); }

    IngestStats& operator+=(const IngestStats& other);
    friend bool operator==(const IngestStats&, const IngestStats&) = default;
};

void to_json(nlohmann::json& j, const IngestStats& s);
void from_json(const nlohmann::json& j, IngestStats& s);

/// Parses a numeric CSV cell (integer, decimal or scientific, '.' decimal
/// point). Returns the reject reason on failure.
std::optional<RejectReason> parse_cell(std::string_view cell, double& out);

/// Streams FlowRecords out of one CSV file in file order.
class FlowReader {
public:
    /// Resolves the column plan from the file's own header.
    FlowReader(const std::filesystem::path& path, const FeatureCatalog& catalog, const LabelMap& labels);
    /// Requires the file's header to match `plan`; throws a data error otherwise.
    FlowReader(const std::filesystem::path& path, ColumnPlan plan, const LabelMap& labels);

    FlowReader(const FlowReader&) = delete;
    FlowReader& operator=(const FlowReader&) = delete;

    std::optional<FlowRecord> next();

    const IngestStats& stats() const noexcept { return stats_; }
    const ColumnPlan& plan() const noexcept { return plan_; }
    const std::string& file_id() const noexcept { return file_id_; }

private:
    std::vector<std::string> open_and_read_header(const std::filesystem::path& path);

    std::ifstream in_;
    std::unique_ptr<CsvReader> csv_;
    ColumnPlan plan_;
    const LabelMap* labels_;
    std::string file_id_;
    IngestStats stats_;
    std::vector<std::string> fields_;
};

struct IngestResult {
    std::vector<FlowRecord> records;
    IngestStats stats;
};

/// Whole-file convenience wrapper around FlowReader.
IngestResult ingest_file(const std::filesystem::path& path, const ColumnPlan& plan, const LabelMap& labels);
IngestResult ingest_file(const std::filesystem::path& path, const FeatureCatalog& catalog, const LabelMap& labels);

}  // namespace flowimg
