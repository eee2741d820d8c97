// SPDX-License-Identifier: Apache-2.0

#include "flowimg/feature_catalog.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "flowimg/default_config.hpp"
#include "flowimg/error.hpp"

namespace flowimg {

namespace {

constexpr std::string_view kCatalogFormat = "flowimg-catalog/1";
constexpr std::string_view kLabelsFormat = "flowimg-labels/1";

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

YAML::Node parse_yaml(std::string_view text, std::string_view expected_format) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(text));
    } catch (const YAML::Exception& e) {
        throw config_error(std::string("config parse error: ") + e.what());
    }
    if (!root.IsMap() || !root["format"]) throw config_error("config file lacks a 'format' key");
    const auto format = root["format"].as<std::string>();
    if (format != expected_format) {
        throw config_error("unsupported config format '" + format + "', expected '" + std::string(expected_format) + "'");
    }
    return root;
}

std::vector<std::string> string_list(const YAML::Node& node, const char* what) {
    std::vector<std::string> out;
    if (!node) return out;
    if (!node.IsSequence()) throw config_error(std::string("config key '") + what + "' must be a list");
    for (const auto& item : node) out.push_back(normalize_whitespace(item.as<std::string>()));
    return out;
}

std::set<std::string> key_set(const std::set<std::string>& names) {
    std::set<std::string> keys;
    for (const auto& n : names) keys.insert(header_key(n));
    return keys;
}

// "Fwd Header Length.1" -> "fwd header length" (pandas renames repeated headers this way).
std::optional<std::string> strip_repeat_suffix(const std::string& key) {
    const auto dot = key.rfind('.');
    if (dot == std::string::npos || dot + 1 == key.size()) return std::nullopt;
    if (!std::all_of(key.begin() + static_cast<long>(dot) + 1, key.end(), [](unsigned char c) { return std::isdigit(c); })) {
        return std::nullopt;
    }
    return key.substr(0, dot);
}

}  // namespace

std::string normalize_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string header_key(std::string_view s) {
    std::string out = normalize_whitespace(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// ---------------------------------------------------------------------------
// FeatureCatalog

FeatureCatalog::FeatureCatalog(std::vector<std::string> features,
                               std::set<std::string> drop_identity,
                               std::set<std::string> drop_constant,
                               std::set<std::string> drop_duplicate,
                               std::string label_column)
    : drop_identity_(std::move(drop_identity)),
      drop_constant_(std::move(drop_constant)),
      drop_duplicate_(std::move(drop_duplicate)),
      label_column_(normalize_whitespace(label_column)) {
    const auto identity = key_set(drop_identity_);
    const auto constant = key_set(drop_constant_);
    const auto duplicate = key_set(drop_duplicate_);

    auto overlap = [](const std::set<std::string>& a, const std::set<std::string>& b) {
        return std::any_of(a.begin(), a.end(), [&](const std::string& k) { return b.count(k) != 0; });
    };
    if (overlap(identity, constant) || overlap(identity, duplicate) || overlap(constant, duplicate)) {
        throw config_error("catalog drop lists must be pairwise disjoint");
    }

    std::map<std::string, int> total;
    for (const auto& f : features) ++total[header_key(f)];

    const auto label_key = header_key(label_column_);
    if (total.count(label_key)) throw config_error("label column '" + label_column_ + "' is also listed as a feature");
    for (const auto* list : {&identity, &constant, &duplicate}) {
        for (const auto& k : *list) {
            if (!total.count(k)) throw config_error("drop-listed name '" + k + "' is not a catalogued feature");
        }
    }

    std::map<std::string, int> seen;
    int next_index = 0;
    for (auto& name : features) {
        FeatureSpec spec;
        spec.name = normalize_whitespace(name);
        const auto key = header_key(spec.name);
        spec.occurrence = seen[key]++;
        if (identity.count(key)) {
            spec.drop_reason = DropReason::identity;
        } else if (constant.count(key)) {
            spec.drop_reason = DropReason::constant;
        } else if (duplicate.count(key)) {
            // A repeated name keeps its first listing; a single listing is itself the duplicate.
            if (total[key] > 1 && spec.occurrence == 0) {
                spec.retained = true;
            } else {
                spec.drop_reason = DropReason::duplicate;
            }
        } else if (spec.occurrence > 0) {
            spec.drop_reason = DropReason::duplicate;
        } else {
            spec.retained = true;
        }
        if (spec.retained) {
            spec.column_index = next_index++;
            retained_names_.push_back(spec.name);
        }
        by_key_[key].push_back(features_.size());
        features_.push_back(std::move(spec));
    }
}

const FeatureCatalog& FeatureCatalog::cicddos2019() {
    static const FeatureCatalog catalog = parse(kDefaultCatalogYaml);
    return catalog;
}

FeatureCatalog FeatureCatalog::load(const std::filesystem::path& path) { return parse(read_text(path)); }

FeatureCatalog FeatureCatalog::parse(std::string_view yaml_text) {
    const auto root = parse_yaml(yaml_text, kCatalogFormat);
    auto features = string_list(root["features"], "features");
    if (features.empty()) throw config_error("catalog declares no features");
    const auto drop = root["drop"];
    auto as_set = [&](const char* key) {
        auto v = string_list(drop ? drop[key] : YAML::Node(), key);
        return std::set<std::string>(v.begin(), v.end());
    };
    const std::string label = root["label_column"] ? root["label_column"].as<std::string>() : "Label";
    return FeatureCatalog(std::move(features), as_set("identity"), as_set("constant"), as_set("duplicate"), label);
}

const FeatureSpec* FeatureCatalog::find(std::string_view name, int occurrence) const {
    const auto it = by_key_.find(header_key(name));
    if (it == by_key_.end() || occurrence < 0 || static_cast<std::size_t>(occurrence) >= it->second.size()) return nullptr;
    return &features_[it->second[static_cast<std::size_t>(occurrence)]];
}

// ---------------------------------------------------------------------------
// ColumnPlan

std::size_t ColumnPlan::count(ColumnDropCause cause) const {
    return static_cast<std::size_t>(std::count_if(columns.begin(), columns.end(), [&](const ColumnDecision& c) {
        return c.action == ColumnAction::drop && c.cause == cause;
    }));
}

std::size_t ColumnPlan::drop_listed_count() const {
    return count(ColumnDropCause::identity) + count(ColumnDropCause::constant) + count(ColumnDropCause::duplicate);
}

std::vector<std::string> ColumnPlan::retained_names() const {
    std::vector<std::string> names;
    names.reserve(retained.size());
    for (const auto& r : retained) names.push_back(r.name);
    return names;
}

std::vector<std::string> ColumnPlan::header_keys() const {
    std::vector<std::string> keys;
    keys.reserve(columns.size());
    for (const auto& c : columns) keys.push_back(header_key(c.header));
    return keys;
}

ColumnPlan resolve_columns(std::span<const std::string> header, const FeatureCatalog& catalog) {
    ColumnPlan plan;
    plan.expected_retained = catalog.retained_count();
    const auto label_key = header_key(catalog.label_column());
    bool have_label = false;
    std::map<std::string, int> seen;

    for (std::size_t pos = 0; pos < header.size(); ++pos) {
        ColumnDecision d;
        d.header = header[pos];
        auto key = header_key(header[pos]);

        if (key == label_key && !have_label) {
            d.action = ColumnAction::label;
            plan.label_position = pos;
            have_label = true;
            plan.columns.push_back(std::move(d));
            continue;
        }
        if (!catalog.find(key)) {
            if (auto base = strip_repeat_suffix(key); base && catalog.find(*base)) key = *base;
        }
        const int occurrence = seen[key]++;
        const FeatureSpec* spec = catalog.find(key, occurrence);
        if (!spec) {
            d.cause = (catalog.find(key) || key == label_key) ? ColumnDropCause::repeated : ColumnDropCause::unknown;
            plan.warnings.push_back(std::string(d.cause == ColumnDropCause::repeated ? "repeated" : "unknown") +
                                    " column '" + normalize_whitespace(d.header) + "' dropped");
        } else if (spec->retained) {
            d.action = ColumnAction::retain;
            d.canonical_index = spec->column_index;
            plan.retained.push_back({spec->column_index, pos, spec->name});
        } else {
            switch (spec->drop_reason) {
                case DropReason::identity: d.cause = ColumnDropCause::identity; break;
                case DropReason::constant: d.cause = ColumnDropCause::constant; break;
                default: d.cause = ColumnDropCause::duplicate; break;
            }
        }
        plan.columns.push_back(std::move(d));
    }

    if (!have_label) throw data_error("header has no '" + catalog.label_column() + "' column");

    std::sort(plan.retained.begin(), plan.retained.end(),
              [](const RetainedColumn& a, const RetainedColumn& b) { return a.canonical_index < b.canonical_index; });
    if (plan.retained.size() < plan.expected_retained) {
        plan.warnings.push_back("retained " + std::to_string(plan.retained.size()) + " of " +
                                std::to_string(plan.expected_retained) + " catalog features");
    }
    return plan;
}

// ---------------------------------------------------------------------------
// LabelMap

LabelMap::LabelMap(std::vector<ClassLabel> classes, std::map<std::string, int> aliases) : classes_(std::move(classes)) {
    std::sort(classes_.begin(), classes_.end(), [](const ClassLabel& a, const ClassLabel& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < classes_.size(); ++i) {
        if (classes_[i].id != static_cast<int>(i)) throw config_error("class ids must be contiguous from 0");
        aliases_[header_key(classes_[i].name)] = classes_[i].id;
    }
    for (const auto& [alias, id] : aliases) {
        if (id < 0 || id >= static_cast<int>(classes_.size())) {
            throw config_error("label alias '" + alias + "' refers to unknown class id " + std::to_string(id));
        }
        const auto key = header_key(alias);
        if (auto it = aliases_.find(key); it != aliases_.end() && it->second != id) {
            throw config_error("label alias '" + alias + "' maps to two classes");
        }
        aliases_[key] = id;
    }
}

const LabelMap& LabelMap::defaults() {
    static const LabelMap labels = parse(kDefaultLabelsYaml);
    return labels;
}

LabelMap LabelMap::load(const std::filesystem::path& path) { return parse(read_text(path)); }

LabelMap LabelMap::parse(std::string_view yaml_text) {
    const auto root = parse_yaml(yaml_text, kLabelsFormat);
    std::vector<ClassLabel> classes;
    if (!root["classes"] || !root["classes"].IsSequence()) throw config_error("labels file lacks a 'classes' list");
    for (const auto& c : root["classes"]) {
        classes.push_back({c["id"].as<int>(), c["name"].as<std::string>(), c["attack"].as<bool>()});
    }
    std::map<std::string, int> aliases;
    if (const auto node = root["aliases"]) {
        for (const auto& entry : node) {
            const int id = entry.first.as<int>();
            for (const auto& alias : entry.second) aliases[alias.as<std::string>()] = id;
        }
    }
    return LabelMap(std::move(classes), std::move(aliases));
}

std::optional<ClassLabel> LabelMap::find(std::string_view raw) const {
    const auto it = aliases_.find(header_key(raw));
    if (it == aliases_.end()) return std::nullopt;
    return classes_[static_cast<std::size_t>(it->second)];
}

ClassLabel LabelMap::map_label(std::string_view raw) const {
    if (auto label = find(raw)) return *label;
    throw data_error("unknown label '" + std::string(raw) + "'");
}

const ClassLabel& LabelMap::by_id(int id) const {
    if (id < 0 || id >= static_cast<int>(classes_.size())) throw data_error("class id out of range: " + std::to_string(id));
    return classes_[static_cast<std::size_t>(id)];
}

}  // namespace flowimg
