// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowimg {

/// Number of features kept after cleaning a full CICDDoS2019 header.
inline constexpr std::size_t kRetainedFeatureCount = 60;
inline constexpr int kNumClasses = 12;

/// Trim and collapse internal whitespace runs to one space.
std::string normalize_whitespace(std::string_view s);
/// normalize_whitespace + ASCII lower-case. Used for every name comparison.
std::string header_key(std::string_view s);

enum class DropReason { none, identity, constant, duplicate };

struct FeatureSpec {
    std::string name;
    bool retained = false;
    int column_index = -1;  // canonical retained index, -1 when dropped
    DropReason drop_reason = DropReason::none;
    int occurrence = 0;     // 0 for the first listing of a name, 1 for the second, ...
};

class FeatureCatalog {
public:
    FeatureCatalog(std::vector<std::string> features,
                   std::set<std::string> drop_identity,
                   std::set<std::string> drop_constant,
                   std::set<std::string> drop_duplicate,
                   std::string label_column = "Label");

    /// Built-in CICDDoS2019 catalog (the shipped config/catalog.yaml).
    static const FeatureCatalog& cicddos2019();
    static FeatureCatalog load(const std::filesystem::path& path);
    static FeatureCatalog parse(std::string_view yaml_text);

    const std::vector<FeatureSpec>& features() const noexcept { return features_; }
    const std::set<std::string>& drop_identity() const noexcept { return drop_identity_; }
    const std::set<std::string>& drop_constant() const noexcept { return drop_constant_; }
    const std::set<std::string>& drop_duplicate() const noexcept { return drop_duplicate_; }
    const std::string& label_column() const noexcept { return label_column_; }

    std::size_t retained_count() const noexcept { return retained_names_.size(); }
    /// Retained feature names in canonical order.
    const std::vector<std::string>& retained_names() const noexcept { return retained_names_; }

    /// Catalog entry for the n-th occurrence of a (normalised) name, if any.
    const FeatureSpec* find(std::string_view name, int occurrence = 0) const;

private:
    std::vector<FeatureSpec> features_;
    std::set<std::string> drop_identity_;
    std::set<std::string> drop_constant_;
    std::set<std::string> drop_duplicate_;
    std::string label_column_;
    std::vector<std::string> retained_names_;
    std::map<std::string, std::vector<std::size_t>, std::less<>> by_key_;
};

enum class ColumnAction { drop, retain, label };

enum class ColumnDropCause { none, identity, constant, duplicate, repeated, unknown };

struct ColumnDecision {
    std::string header;  // original header text
    ColumnAction action = ColumnAction::drop;
    ColumnDropCause cause = ColumnDropCause::none;
    int canonical_index = -1;  // catalog column_index when retained
};

struct RetainedColumn {
    int canonical_index;
    std::size_t header_position;
    std::string name;
};

/// Per-column resolution of one CSV header against a catalog.
struct ColumnPlan {
    std::vector<ColumnDecision> columns;
    std::size_t label_position = 0;
    /// Retained columns ordered by canonical index (not header position).
    std::vector<RetainedColumn> retained;
    std::size_t expected_retained = 0;
    std::vector<std::string> warnings;

    std::size_t retained_count() const noexcept { return retained.size(); }
    std::size_t count(ColumnDropCause cause) const;
    /// Columns dropped because the catalog's drop lists name them.
    std::size_t drop_listed_count() const;
    std::vector<std::string> retained_names() const;
    /// header_key() of every header cell, for header-consistency checks.
    std::vector<std::string> header_keys() const;
};

/// Throws a data error when the label column is absent.
ColumnPlan resolve_columns(std::span<const std::string> header, const FeatureCatalog& catalog);

struct ClassLabel {
    int id = 0;
    std::string name;
    bool is_attack = false;

    /// Directory-style short name, "C0".."C11".
    std::string tag() const { return "C" + std::to_string(id); }
    friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

/// The 12-class taxonomy plus the raw-label alias table.
class LabelMap {
public:
    LabelMap(std::vector<ClassLabel> classes, std::map<std::string, int> aliases);

    static const LabelMap& defaults();
    static LabelMap load(const std::filesystem::path& path);
    static LabelMap parse(std::string_view yaml_text);

    /// Case-insensitive lookup of a raw dataset label.
    std::optional<ClassLabel> find(std::string_view raw) const;
    /// Like find() but throws a data error for unknown labels.
    ClassLabel map_label(std::string_view raw) const;

    const ClassLabel& by_id(int id) const;
    const std::vector<ClassLabel>& classes() const noexcept { return classes_; }

private:
    std::vector<ClassLabel> classes_;
    std::map<std::string, int, std::less<>> aliases_;
};

}  // namespace flowimg
