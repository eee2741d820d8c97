// SPDX-License-Identifier: Apache-2.0

#include "flowimg/synthgen.hpp"

#include <charconv>
#include <fstream>

#include "flowimg/csv.hpp"
#include "flowimg/error.hpp"
#include "flowimg/rng.hpp"

namespace flowimg {

namespace {

constexpr std::string_view kSynthFormat = "flowimg-synth/1";

const char* to_string(DistKind k) {
    switch (k) {
        case DistKind::constant: return "constant";
        case DistKind::uniform: return "uniform";
        case DistKind::normal: return "normal";
    }
    return "?";
}

DistKind parse_dist(const std::string& s) {
    if (s == "constant") return DistKind::constant;
    if (s == "uniform") return DistKind::uniform;
    if (s == "normal") return DistKind::normal;
    throw config_error("unknown distribution '" + s + "'");
}

nlohmann::json dist_json(const FeatureDist& d) { return {{"kind", to_string(d.kind)}, {"a", d.a}, {"b", d.b}}; }

FeatureDist dist_from_json(const nlohmann::json& j) {
    return {parse_dist(j.at("kind").get<std::string>()), j.value("a", 0.0), j.value("b", 0.0)};
}

double draw(const FeatureDist& d, Rng& rng) {
    switch (d.kind) {
        case DistKind::constant: return d.a;
        case DistKind::uniform: return rng.uniform(d.a, d.b);
        case DistKind::normal: return rng.normal(d.a, d.b);
    }
    return 0.0;
}

std::string format_number(double v) {
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct Defect {
    const char* text;
    RejectReason reason;
};

constexpr Defect kDefects[] = {
    {"", RejectReason::missing_value},
    {"NaN", RejectReason::non_finite},
    {"Infinity", RejectReason::non_finite},
};

}  // namespace

SynthSpec SynthSpec::separable(const std::vector<std::pair<std::string, std::size_t>>& classes, std::uint64_t seed) {
    SynthSpec s;
    s.seed = seed;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const double lo = 100.0 * static_cast<double>(i);
        s.classes.push_back({classes[i].first, classes[i].second, {DistKind::uniform, lo, lo + 20.0}, {}});
    }
    return s;
}

void SynthSpec::validate() const {
    if (!(malformed_fraction >= 0.0 && malformed_fraction < 1.0)) throw config_error("malformed_fraction must be in [0, 1)");
    for (const auto& c : classes) {
        if (c.label.empty()) throw config_error("synthetic class without a label");
    }
}

nlohmann::json SynthSpec::to_json() const {
    nlohmann::json cls = nlohmann::json::array();
    for (const auto& c : classes) {
        nlohmann::json ov = nlohmann::json::object();
        for (const auto& [name, d] : c.overrides) ov[name] = dist_json(d);
        cls.push_back({{"label", c.label}, {"rows", c.rows}, {"dist", dist_json(c.dist)}, {"overrides", ov}});
    }
    return {{"format", kSynthFormat},
            {"seed", seed},
            {"malformed_fraction", malformed_fraction},
            {"interleave", interleave},
            {"feature_names", feature_names},
            {"classes", cls}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
        s.seed = j.value("seed", std::uint64_t{0});
        s.malformed_fraction = j.value("malformed_fraction", 0.0);
        s.interleave = j.value("interleave", true);
        s.feature_names = j.value("feature_names", std::vector<std::string>{});
        for (const auto& c : j.at("classes")) {
            SynthClass sc;
            sc.label = c.at("label").get<std::string>();
            sc.rows = c.at("rows").get<std::size_t>();
            if (c.contains("dist")) sc.dist = dist_from_json(c["dist"]);
            if (c.contains("overrides")) {
                for (const auto& [name, d] : c["overrides"].items()) sc.overrides[name] = dist_from_json(d);
            }
            s.classes.push_back(std::move(sc));
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& csv_path, const FeatureCatalog& catalog,
                     const LabelMap& labels) {
    spec.validate();
    std::vector<std::string> header = spec.feature_names;
    if (header.empty()) {
        for (const auto& f : catalog.features()) header.push_back(f.name);
    }
    header.push_back(catalog.label_column());
    const ColumnPlan plan = resolve_columns(header, catalog);

    // Column kinds: identity columns get synthetic text, everything else numbers.
    std::vector<bool> is_identity(header.size(), false);
    for (std::size_t i = 0; i < plan.columns.size(); ++i) {
        is_identity[i] = plan.columns[i].cause == ColumnDropCause::identity;
    }
    std::vector<std::size_t> retained_positions;
    for (const auto& r : plan.retained) retained_positions.push_back(r.header_position);

    std::vector<std::size_t> row_class;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) row_class.insert(row_class.end(), spec.classes[c].rows, c);
    Rng order_rng(sub_seed(spec.seed, "synth.order"));
    if (spec.interleave) order_rng.shuffle(row_class);

    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw data_error("cannot write " + csv_path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_escape(header[i]);
    out << '\n';

    SynthOutput result;
    result.csv = csv_path;
    Rng value_rng(sub_seed(spec.seed, "synth.values"));
    Rng defect_rng(sub_seed(spec.seed, "synth.defects"));
    std::vector<std::string> cells(header.size());
    for (std::size_t row = 0; row < row_class.size(); ++row) {
        const auto& cls = spec.classes[row_class[row]];
        for (std::size_t col = 0; col < header.size(); ++col) {
            if (col == plan.label_position) {
                cells[col] = cls.label;
            } else if (is_identity[col]) {
                cells[col] = "id-" + std::to_string(row) + "-" + std::to_string(col);
            } else {
                const auto it = cls.overrides.find(normalize_whitespace(header[col]));
                cells[col] = format_number(draw(it == cls.overrides.end() ? cls.dist : it->second, value_rng));
            }
        }

        std::optional<RejectReason> reason;
        if (spec.malformed_fraction > 0.0 && !retained_positions.empty() && defect_rng.uniform() < spec.malformed_fraction) {
            const auto pos = retained_positions[defect_rng.below(retained_positions.size())];
            const auto& defect = kDefects[defect_rng.below(std::size(kDefects))];
            cells[pos] = defect.text;
            reason = defect.reason;
        }
        if (!reason && !labels.find(cls.label)) reason = RejectReason::unknown_label;

        ++result.expected.rows_read;
        if (reason) {
            ++result.expected.rejected[*reason];
        } else {
            ++result.expected.rows_emitted;
            ++result.expected_rows_per_label[cls.label];
        }
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_escape(cells[i]);
        out << '\n';
    }
    if (!out) throw data_error("write failed: " + csv_path.string());

    result.sidecar = csv_path;
    result.sidecar += ".truth.json";
    nlohmann::json sidecar = {{"format", kSynthFormat},
                              {"csv", csv_path.filename().string()},
                              {"spec", spec.to_json()},
                              {"expected_ingest", result.expected},
                              {"expected_rows_per_label", result.expected_rows_per_label}};
    std::ofstream sout(result.sidecar);
    sout << sidecar.dump(2) << '\n';
    if (!sout) throw data_error("cannot write " + result.sidecar.string());
    return result;
}

}  // namespace flowimg
