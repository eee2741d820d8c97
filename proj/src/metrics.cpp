// SPDX-License-Identifier: Apache-2.0

#include "flowimg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "flowimg/error.hpp"
#include "flowimg/feature_catalog.hpp"

namespace flowimg {

namespace {
constexpr std::string_view kReportFormat = "flowimg-report/1";

double ratio(std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json metrics_json(const ClassMetrics& m) {
    return {{"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"support", m.support},
            {"undefined", {{"precision", m.precision_undefined}, {"recall", m.recall_undefined}, {"f1", m.f1_undefined}}}};
}

ClassMetrics metrics_from_json(const nlohmann::json& j) {
    ClassMetrics m;
    j.at("precision").get_to(m.precision);
    j.at("recall").get_to(m.recall);
    j.at("f1").get_to(m.f1);
    m.support = j.value("support", std::size_t{0});
    if (j.contains("undefined")) {
        const auto& u = j["undefined"];
        m.precision_undefined = u.value("precision", false);
        m.recall_undefined = u.value("recall", false);
        m.f1_undefined = u.value("f1", false);
    }
    return m;
}

void write_png_or_throw(const std::filesystem::path& path, const cv::Mat& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw data_error("failed to write chart " + path.string());
}

std::string two_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}
}  // namespace

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names)
    : names_(std::move(class_names)), counts_(names_.size() * names_.size(), 0) {}

std::size_t ConfusionMatrix::total() const noexcept {
    return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const noexcept {
    std::size_t t = 0;
    for (std::size_t k = 0; k < names_.size(); ++k) t += at(k, k);
    return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t actual) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < names_.size(); ++p) s += at(actual, p);
    return s;
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
    std::size_t s = 0;
    for (std::size_t a = 0; a < names_.size(); ++a) s += at(a, predicted);
    return s;
}

ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                          std::vector<std::string> class_names) {
    if (actual.size() != predicted.size()) throw data_error("actual and predicted label counts differ");
    if (actual.empty()) throw data_error("no labels to evaluate");
    ConfusionMatrix m(std::move(class_names));
    const auto k = static_cast<int>(m.classes());
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (actual[i] < 0 || actual[i] >= k || predicted[i] < 0 || predicted[i] >= k) {
            throw data_error("label outside the class set at position " + std::to_string(i));
        }
        ++m.at(static_cast<std::size_t>(actual[i]), static_cast<std::size_t>(predicted[i]));
    }
    return m;
}

ClassMetrics precision_recall_f1(const ConfusionMatrix& matrix, std::size_t k) {
    const std::size_t tp = matrix.at(k, k);
    const std::size_t fp = matrix.column_sum(k) - tp;
    const std::size_t fn = matrix.row_sum(k) - tp;
    ClassMetrics m;
    m.support = tp + fn;
    m.precision = ratio(tp, tp + fp, m.precision_undefined);
    m.recall = ratio(tp, tp + fn, m.recall_undefined);
    const double denom = m.precision + m.recall;
    m.f1_undefined = denom == 0.0;
    m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / denom;
    return m;
}

double accuracy(const ConfusionMatrix& matrix) {
    const auto total = matrix.total();
    if (total == 0) throw data_error("accuracy of an empty confusion matrix");
    return static_cast<double>(matrix.trace()) / static_cast<double>(total);
}

EvalReport EvalReport::from_matrix(const ConfusionMatrix& matrix) {
    EvalReport r;
    r.matrix = matrix;
    r.accuracy = flowimg::accuracy(matrix);
    const std::size_t k = matrix.classes();
    for (std::size_t c = 0; c < k; ++c) {
        r.per_class.push_back(precision_recall_f1(matrix, c));
        const auto& m = r.per_class.back();
        r.macro.precision += m.precision;
        r.macro.recall += m.recall;
        r.macro.f1 += m.f1;
        r.macro.support += m.support;
    }
    r.macro.precision /= static_cast<double>(k);
    r.macro.recall /= static_cast<double>(k);
    r.macro.f1 /= static_cast<double>(k);
    return r;
}

bool EvalReport::any_undefined() const {
    return std::any_of(per_class.begin(), per_class.end(), [](const ClassMetrics& m) {
        return m.precision_undefined || m.recall_undefined || m.f1_undefined;
    });
}

nlohmann::json EvalReport::to_json(const nlohmann::json& meta) const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t a = 0; a < matrix.classes(); ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t p = 0; p < matrix.classes(); ++p) row.push_back(matrix.at(a, p));
        rows.push_back(row);
    }
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        auto j = metrics_json(per_class[c]);
        j["class"] = matrix.class_names()[c];
        per.push_back(j);
    }
    auto macro_json = metrics_json(macro);
    macro_json.erase("undefined");
    nlohmann::json j = {{"format", kReportFormat},
                        {"classes", matrix.class_names()},
                        {"confusion_matrix", rows},
                        {"per_class", per},
                        {"macro", macro_json},
                        {"averaging", "macro-unweighted"},
                        {"zero_division", "0 with flag"},
                        {"any_undefined", any_undefined()},
                        {"accuracy", accuracy},
                        {"samples", matrix.total()}};
    if (meta.is_object()) j.update(meta);
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    if (j.value("format", std::string()) != kReportFormat) throw data_error("not a flowimg report");
    try {
        ConfusionMatrix m(j.at("classes").get<std::vector<std::string>>());
        const auto& rows = j.at("confusion_matrix");
        if (rows.size() != m.classes()) throw data_error("report matrix does not match class count");
        for (std::size_t a = 0; a < m.classes(); ++a) {
            if (rows[a].size() != m.classes()) throw data_error("report matrix row has wrong width");
            for (std::size_t p = 0; p < m.classes(); ++p) m.at(a, p) = rows[a][p].get<std::size_t>();
        }
        EvalReport r = from_matrix(m);
        // Stored metrics, when present, must agree with the matrix they came from.
        if (j.contains("accuracy") && std::abs(j["accuracy"].get<double>() - r.accuracy) > 1e-12) {
            throw data_error("report accuracy disagrees with its matrix");
        }
        if (j.contains("per_class")) {
            if (j["per_class"].size() != r.per_class.size()) throw data_error("report per-class list has wrong length");
            for (std::size_t c = 0; c < r.per_class.size(); ++c) {
                const auto s = metrics_from_json(j["per_class"][c]);
                if (std::abs(s.precision - r.per_class[c].precision) > 1e-12 ||
                    std::abs(s.recall - r.per_class[c].recall) > 1e-12) {
                    throw data_error("report per-class metrics disagree with its matrix");
                }
            }
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("bad report: ") + e.what());
    }
}

ConfusionMatrix collapse_to_binary(const ConfusionMatrix& matrix, const LabelMap& labels) {
    if (matrix.classes() != labels.classes().size()) throw data_error("matrix class count does not match the label map");
    ConfusionMatrix out({"Normal", "Attack"});
    for (std::size_t a = 0; a < matrix.classes(); ++a) {
        const std::size_t ba = labels.classes()[a].is_attack ? 1 : 0;
        for (std::size_t p = 0; p < matrix.classes(); ++p) {
            const std::size_t bp = labels.classes()[p].is_attack ? 1 : 0;
            out.at(ba, bp) += matrix.at(a, p);
        }
    }
    return out;
}

std::string summary_table(const EvalReport& report, const std::string& method_name) {
    std::string s;
    s += "Method Precision Recall F1-Measure\n";
    s += method_name + " " + two_decimals(report.macro.precision) + " " + two_decimals(report.macro.recall) + " " +
         two_decimals(report.macro.f1) + "\n";
    s += "\naccuracy " + two_decimals(report.accuracy) + " (" + std::to_string(report.matrix.trace()) + "/" +
         std::to_string(report.matrix.total()) + ")\n";
    s += "averaging: unweighted mean over " + std::to_string(report.per_class.size()) + " classes\n";
    s += "\nclass precision recall f1 support\n";
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const auto& m = report.per_class[c];
        s += report.matrix.class_names()[c] + " " + two_decimals(m.precision) + (m.precision_undefined ? "*" : "") + " " +
             two_decimals(m.recall) + (m.recall_undefined ? "*" : "") + " " + two_decimals(m.f1) +
             (m.f1_undefined ? "*" : "") + " " + std::to_string(m.support) + "\n";
    }
    if (report.any_undefined()) s += "* 0/0 ratio, reported as 0\n";
    return s;
}

// ---------------------------------------------------------------------------
// Charts

std::vector<BarGeometry> render_precision_chart(const EvalReport& report, const std::filesystem::path& png) {
    const int n = static_cast<int>(report.per_class.size());
    constexpr int kBarWidth = 36, kGap = 16, kLeft = 60, kRight = 20, kTop = 40, kPlot = 300, kBottom = 50;
    const int width = kLeft + n * (kBarWidth + kGap) + kRight;
    const int height = kTop + kPlot + kBottom;
    const int baseline = kTop + kPlot;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    cv::putText(img, "Class-wise precision", {kLeft, 24}, font, 0.55, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    for (int tick = 0; tick <= 4; ++tick) {
        const int y = baseline - tick * kPlot / 4;
        cv::line(img, {kLeft - 4, y}, {width - kRight, y}, cv::Scalar(220, 220, 220), 1);
        cv::putText(img, two_decimals(tick * 0.25), {6, y + 4}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
    cv::line(img, {kLeft - 4, baseline}, {width - kRight, baseline}, cv::Scalar(0, 0, 0), 1);

    std::vector<BarGeometry> bars;
    for (int c = 0; c < n; ++c) {
        BarGeometry b;
        b.label = report.matrix.class_names()[static_cast<std::size_t>(c)];
        b.value = report.per_class[static_cast<std::size_t>(c)].precision;
        b.x0 = kLeft + kGap / 2 + c * (kBarWidth + kGap);
        b.x1 = b.x0 + kBarWidth - 1;
        b.baseline = baseline - 1;
        b.top = baseline - static_cast<int>(std::lround(b.value * kPlot));
        if (b.top <= b.baseline) {
            cv::rectangle(img, {b.x0, b.top}, {b.x1, b.baseline}, cv::Scalar(180, 119, 31), cv::FILLED);
        }
        cv::putText(img, b.label, {b.x0 + 2, baseline + 18}, font, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        cv::putText(img, two_decimals(b.value), {b.x0, b.top - 4}, font, 0.35, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        bars.push_back(b);
    }
    write_png_or_throw(png, img);
    return bars;
}

void render_confusion_heatmap(const ConfusionMatrix& matrix, const std::filesystem::path& png) {
    const int k = static_cast<int>(matrix.classes());
    constexpr int kCell = 44, kLeft = 70, kTop = 60;
    const int width = kLeft + k * kCell + 20, height = kTop + k * kCell + 40;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    cv::putText(img, "Confusion matrix (rows: actual, cols: predicted)", {8, 20}, font, 0.45, cv::Scalar(0, 0, 0), 1,
                cv::LINE_AA);

    for (int a = 0; a < k; ++a) {
        const double row_total = static_cast<double>(matrix.row_sum(static_cast<std::size_t>(a)));
        for (int p = 0; p < k; ++p) {
            const auto count = matrix.at(static_cast<std::size_t>(a), static_cast<std::size_t>(p));
            const double frac = row_total > 0 ? static_cast<double>(count) / row_total : 0.0;
            cv::Mat cell(1, 1, CV_8UC1, cv::Scalar(static_cast<int>(std::lround(frac * 255))));
            cv::Mat colored;
            cv::applyColorMap(cell, colored, cv::COLORMAP_VIRIDIS);
            const auto color = colored.at<cv::Vec3b>(0, 0);
            const cv::Point tl{kLeft + p * kCell, kTop + a * kCell};
            cv::rectangle(img, tl, tl + cv::Point(kCell - 1, kCell - 1), cv::Scalar(color[0], color[1], color[2]), cv::FILLED);
            const auto text = std::to_string(count);
            const cv::Scalar ink = frac > 0.5 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255);
            cv::putText(img, text, tl + cv::Point(4, kCell / 2 + 4), font, 0.35, ink, 1, cv::LINE_AA);
        }
        const auto& name = matrix.class_names()[static_cast<std::size_t>(a)];
        cv::putText(img, name, {8, kTop + a * kCell + kCell / 2 + 4}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        cv::putText(img, name, {kLeft + a * kCell + 4, kTop - 8}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
    write_png_or_throw(png, img);
}

ReportFiles render_report(const EvalReport& report, const std::filesystem::path& dir, const nlohmann::json& meta) {
    std::filesystem::create_directories(dir);
    ReportFiles files{dir / "report.json", dir / "summary.txt", dir / "class_precision.png", dir / "confusion_matrix.png"};
    {
        std::ofstream out(files.json);
        out << report.to_json(meta).dump(2) << '\n';
        if (!out) throw data_error("cannot write " + files.json.string());
    }
    {
        std::ofstream out(files.summary);
        out << summary_table(report);
        if (!out) throw data_error("cannot write " + files.summary.string());
    }
    render_precision_chart(report, files.precision_chart);
    render_confusion_heatmap(report.matrix, files.confusion_chart);
    return files;
}

std::vector<ReferenceCheck> compare_to_reference(const EvalReport& report, bool binary) {
    if (binary) return {{"accuracy", report.accuracy, 0.9999, 0.005}};
    return {{"accuracy", report.accuracy, 0.8706, 0.03},
            {"macro_precision", report.macro.precision, 0.87, 0.05},
            {"macro_recall", report.macro.recall, 0.86, 0.05},
            {"macro_f1", report.macro.f1, 0.86, 0.05}};
}

}  // namespace flowimg
