// SPDX-License-Identifier: Apache-2.0

#include "flowimg/ingest.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "flowimg/error.hpp"

namespace flowimg {

const char* to_string(RejectReason r) noexcept {
    switch (r) {
        case RejectReason::missing_value: return "missing_value";
        case RejectReason::non_numeric: return "non_numeric";
        case RejectReason::non_finite: return "non_finite";
        case RejectReason::unknown_label: return "unknown_label";
    }
    return "?";
}

std::size_t IngestStats::rejected_total() const {
    return std::accumulate(rejected.begin(), rejected.end(), std::size_t{0},
                           [](std::size_t acc, const auto& kv) { return acc + kv.second; });
}

std::size_t IngestStats::rejected_for(RejectReason r) const {
    const auto it = rejected.find(r);
    return it == rejected.end() ? 0 : it->second;
}

IngestStats& IngestStats::operator+=(const IngestStats& other) {
    rows_read += other.rows_read;
    rows_emitted += other.rows_emitted;
    for (const auto& [r, n] : other.rejected) rejected[r] += n;
    return *this;
}

void to_json(nlohmann::json& j, const IngestStats& s) {
    nlohmann::json rejected = nlohmann::json::object();
    for (auto r : kRejectReasons) rejected[to_string(r)] = s.rejected_for(r);
    j = {{"rows_read", s.rows_read}, {"rows_emitted", s.rows_emitted}, {"rejected", rejected}};
}

void from_json(const nlohmann::json& j, IngestStats& s) {
    s = {};
    j.at("rows_read").get_to(s.rows_read);
    j.at("rows_emitted").get_to(s.rows_emitted);
    for (auto r : kRejectReasons) {
        const auto n = j.at("rejected").value(to_string(r), std::size_t{0});
        if (n) s.rejected[r] = n;
    }
}

std::optional<RejectReason> parse_cell(std::string_view cell, double& out) {
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.remove_prefix(1);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.remove_suffix(1);
    if (cell.empty()) return RejectReason::missing_value;
    if (cell.front() == '+') cell.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out, std::chars_format::general);
    if (ec == std::errc::result_out_of_range && ptr == cell.data() + cell.size()) {
        // Overflow is non-finite; underflow is a legitimate tiny value.
        out = std::strtod(std::string(cell).c_str(), nullptr);
        return std::isfinite(out) ? std::nullopt : std::optional(RejectReason::non_finite);
    }
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) return RejectReason::non_numeric;
    if (!std::isfinite(out)) return RejectReason::non_finite;
    return std::nullopt;
}

std::vector<std::string> FlowReader::open_and_read_header(const std::filesystem::path& path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw data_error("cannot open input file: " + path.string());
    csv_ = std::make_unique<CsvReader>(in_);
    std::vector<std::string> header;
    if (!csv_->next(header)) throw data_error("input file has no header row: " + path.string());
    // Strip a UTF-8 byte order mark.
    if (header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    return header;
}

FlowReader::FlowReader(const std::filesystem::path& path, const FeatureCatalog& catalog, const LabelMap& labels)
    : labels_(&labels), file_id_(path.filename().string()) {
    const auto header = open_and_read_header(path);
    plan_ = resolve_columns(header, catalog);
}

FlowReader::FlowReader(const std::filesystem::path& path, ColumnPlan plan, const LabelMap& labels)
    : plan_(std::move(plan)), labels_(&labels), file_id_(path.filename().string()) {
    const auto header = open_and_read_header(path);
    std::vector<std::string> keys;
    for (const auto& h : header) keys.push_back(header_key(h));
    if (keys != plan_.header_keys()) throw data_error("header of " + path.string() + " does not match the column plan");
}

std::optional<FlowRecord> FlowReader::next() {
    const std::size_t width = plan_.columns.size();
    while (csv_->next(fields_)) {
        // A blank trailing line is not a row.
        if (fields_.size() == 1 && fields_[0].find_first_not_of(" \t\r") == std::string::npos) continue;
        ++stats_.rows_read;
        const std::size_t row = stats_.rows_read;

        std::optional<RejectReason> reject;
        FlowRecord rec;
        if (fields_.size() != width) {
            // Misaligned rows are structurally incomplete.
            reject = RejectReason::missing_value;
        } else {
            rec.values.resize(plan_.retained.size());
            for (std::size_t i = 0; i < plan_.retained.size() && !reject; ++i) {
                reject = parse_cell(fields_[plan_.retained[i].header_position], rec.values[i]);
            }
        }
        if (!reject) {
            if (auto label = labels_->find(fields_[plan_.label_position])) {
                rec.label = std::move(*label);
            } else {
                reject = RejectReason::unknown_label;
            }
        }
        if (reject) {
            ++stats_.rejected[*reject];
            continue;
        }
        rec.source = {file_id_, row};
        ++stats_.rows_emitted;
        return rec;
    }
    return std::nullopt;
}

namespace {
IngestResult drain(FlowReader& reader) {
    IngestResult result;
    while (auto rec = reader.next()) result.records.push_back(std::move(*rec));
    result.stats = reader.stats();
    return result;
}
}  // namespace

IngestResult ingest_file(const std::filesystem::path& path, const ColumnPlan& plan, const LabelMap& labels) {
    FlowReader reader(path, plan, labels);
    return drain(reader);
}

IngestResult ingest_file(const std::filesystem::path& path, const FeatureCatalog& catalog, const LabelMap& labels) {
    FlowReader reader(path, catalog, labels);
    return drain(reader);
}

}  // namespace flowimg
