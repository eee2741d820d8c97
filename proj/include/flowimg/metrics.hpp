// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace flowimg {

class LabelMap;

/// K x K counts; rows are actual classes, columns predicted classes.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::vector<std::string> class_names);

    std::size_t classes() const noexcept { return names_.size(); }
    const std::vector<std::string>& class_names() const noexcept { return names_; }

    std::size_t at(std::size_t actual, std::size_t predicted) const { return counts_[actual * names_.size() + predicted]; }
    std::size_t& at(std::size_t actual, std::size_t predicted) { return counts_[actual * names_.size() + predicted]; }

    std::size_t total() const noexcept;
    std::size_t trace() const noexcept;
    std::size_t row_sum(std::size_t actual) const;
    std::size_t column_sum(std::size_t predicted) const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::vector<std::string> names_;
    std::vector<std::size_t> counts_;
};

/// counts[a][p] = #{i : actual_i = a, predicted_i = p}. Labels are class
/// indices; throws on length mismatch, empty input or out-of-range labels.
ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                          std::vector<std::string> class_names);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // actual samples of the class
    // Set when the corresponding ratio was 0/0 and defined as 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

/// One-vs-rest precision, recall and F1 for class k.
ClassMetrics precision_recall_f1(const ConfusionMatrix& matrix, std::size_t k);

/// trace / total; throws when the matrix is empty.
double accuracy(const ConfusionMatrix& matrix);

struct EvalReport {
    std::vector<ClassMetrics> per_class;
    ClassMetrics macro;  // unweighted mean over classes
    double accuracy = 0.0;
    ConfusionMatrix matrix;

    static EvalReport from_matrix(const ConfusionMatrix& matrix);
    bool any_undefined() const;

    /// Versioned report document; `meta` (fingerprint, seed, task, ...) is
    /// merged at the top level.
    nlohmann::json to_json(const nlohmann::json& meta = {}) const;
    static EvalReport from_json(const nlohmann::json& j);
};

/// Collapses a 12-class matrix onto {Normal, Attack} using is_attack.
ConfusionMatrix collapse_to_binary(const ConfusionMatrix& matrix, const LabelMap& labels);

/// Table-style summary: header plus one "<name> P R F1" row at two decimals.
std::string summary_table(const EvalReport& report, const std::string& method_name = "ResNet18");

struct BarGeometry {
    std::string label;
    double value = 0.0;
    int x0 = 0, x1 = 0, top = 0, baseline = 0;
};

/// Renders a class-wise precision bar chart; returns the bar layout.
std::vector<BarGeometry> render_precision_chart(const EvalReport& report, const std::filesystem::path& png);
/// Renders a confusion-matrix heatmap with per-cell counts.
void render_confusion_heatmap(const ConfusionMatrix& matrix, const std::filesystem::path& png);

struct ReportFiles {
    std::filesystem::path json, summary, precision_chart, confusion_chart;
};

/// Writes report.json, summary.txt, class_precision.png and confusion_matrix.png into `dir`.
ReportFiles render_report(const EvalReport& report, const std::filesystem::path& dir, const nlohmann::json& meta = {});

// ---------------------------------------------------------------------------
// Comparison against the published full-dataset results

struct ReferenceCheck {
    std::string metric;
    double observed = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    bool pass() const { return observed >= expected - tolerance && observed <= expected + tolerance; }
};

/// Binary: accuracy 0.9999 +- 0.005. Multiclass: accuracy 0.8706 +- 0.03 and
/// macro precision/recall/F1 0.87/0.86/0.86 +- 0.05.
std::vector<ReferenceCheck> compare_to_reference(const EvalReport& report, bool binary);

}  // namespace flowimg
