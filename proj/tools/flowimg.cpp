// SPDX-License-Identifier: Apache-2.0
//
// flowimg: flow CSV -> image dataset -> ResNet18 classifier, one subcommand per stage.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include "flowimg/error.hpp"
#include "flowimg/pipeline.hpp"
#include "flowimg/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags that mirror PipelineConfig. Anything set here overrides the --config file.
struct Overrides {
    std::string config_file;
    std::vector<std::string> inputs;
    std::optional<std::string> output, catalog, labels, stats_fit, task;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> test_per_class;
    std::optional<double> val_fraction, learning_rate, momentum;
    std::optional<int> epochs, batch_size, input_size;

    void attach(CLI::App* cmd, bool with_inputs) {
        cmd->add_option("-c,--config", config_file, "YAML config file")->check(CLI::ExistingFile);
        if (with_inputs) cmd->add_option("-i,--input", inputs, "input CSV files, directories or globs");
        cmd->add_option("-o,--output", output, "run directory");
        cmd->add_option("--catalog", catalog, "feature catalog YAML");
        cmd->add_option("--labels", labels, "label alias YAML");
        cmd->add_option("--seed", seed, "root seed");
        cmd->add_option("--test-per-class", test_per_class, "test images per class");
        cmd->add_option("--val-fraction", val_fraction, "validation fraction of non-test images");
        cmd->add_option("--stats-fit", stats_fit, "train-only | global");
        cmd->add_option("--task", task, "binary | multiclass");
        cmd->add_option("--epochs", epochs);
        cmd->add_option("--batch-size", batch_size);
        cmd->add_option("--lr", learning_rate, "learning rate");
        cmd->add_option("--momentum", momentum);
        cmd->add_option("--input-size", input_size, "network input side length");
    }

    flowimg::PipelineConfig resolve() const {
        YAML::Node root(YAML::NodeType::Map);
        if (!config_file.empty()) {
            try {
                root = YAML::LoadFile(config_file);
            } catch (const YAML::Exception& e) {
                throw flowimg::config_error(config_file + ": " + e.what());
            }
            if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
        }
        if (!inputs.empty()) root["inputs"] = inputs;
        if (output) root["output"] = *output;
        if (catalog) root["catalog"] = *catalog;
        if (labels) root["labels"] = *labels;
        if (seed) root["seed"] = *seed;
        if (test_per_class) root["split"]["test_per_class"] = *test_per_class;
        if (val_fraction) root["split"]["val_fraction"] = *val_fraction;
        if (stats_fit) root["stats_fit"] = *stats_fit;
        if (task) root["model"]["task"] = *task;
        if (epochs) root["model"]["epochs"] = *epochs;
        if (batch_size) root["model"]["batch_size"] = *batch_size;
        if (learning_rate) root["model"]["learning_rate"] = *learning_rate;
        if (momentum) root["model"]["momentum"] = *momentum;
        if (input_size) root["model"]["input_size"] = *input_size;
        YAML::Emitter out;
        out << root;
        return flowimg::PipelineConfig::parse(out.c_str());
    }
};

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("flowimg");
    logger->set_pattern("[%H:%M:%S] %^%l%$ %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* lvl = std::getenv("FLOWIMG_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
}

void emit(json j) {
    j["status"] = "ok";
    std::cout << j.dump(2) << '\n';
}

int fail(flowimg::ErrorKind kind, const std::string& message) {
    const char* name = kind == flowimg::ErrorKind::config ? "config" : kind == flowimg::ErrorKind::data ? "data" : "internal";
    std::cerr << json{{"status", "error"}, {"kind", name}, {"message", message}}.dump() << '\n';
    return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"flowimg: flow-feature CSVs to images to a ResNet18 DDoS classifier"};
    app.require_subcommand(1);

    Overrides encode_o, train_o, eval_o, predict_o, report_o, verify_o;
    auto* encode = app.add_subcommand("encode", "ingest, fit stats, encode, split and write images");
    encode_o.attach(encode, true);
    auto* train = app.add_subcommand("train", "train ResNet18 on the run's train/val split");
    train_o.attach(train, false);
    auto* eval = app.add_subcommand("eval", "evaluate the best checkpoint on the test split");
    eval_o.attach(eval, false);
    auto* report = app.add_subcommand("report", "render summary table and charts from the eval report");
    report_o.attach(report, false);
    auto* verify = app.add_subcommand("verify", "cross-check fingerprints across a run directory");
    verify_o.attach(verify, false);

    auto* predict = app.add_subcommand("predict", "score PNG images or flow CSVs with a trained run");
    predict_o.attach(predict, false);
    std::vector<std::string> predict_paths;
    predict->add_option("paths", predict_paths, "PNG or CSV files")->required()->check(CLI::ExistingFile);

    auto* synth = app.add_subcommand("synth", "generate a synthetic flow CSV with a ground-truth sidecar");
    std::string synth_spec, synth_out, synth_classes;
    std::uint64_t synth_seed = 0;
    double synth_malformed = 0.0;
    auto* spec_opt = synth->add_option("--spec", synth_spec, "JSON synth spec")->check(CLI::ExistingFile);
    synth->add_option("--classes", synth_classes, "separable preset, e.g. Syn:360,BENIGN:360")->excludes(spec_opt);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--malformed", synth_malformed, "fraction of rows with one malformed cell");
    synth->add_option("-o,--output", synth_out, "CSV path")->required();

    auto* compare = app.add_subcommand("compare", "compare an eval report against the published numbers");
    std::string compare_report, compare_task;
    compare->add_option("report", compare_report, "report.json")->required()->check(CLI::ExistingFile);
    compare->add_option("--task", compare_task, "binary | multiclass (default: from class count)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(flowimg::ErrorKind::config);
    }

    try {
        if (encode->parsed()) {
            emit(flowimg::run_encode(encode_o.resolve()));
        } else if (train->parsed()) {
            emit(flowimg::run_train(train_o.resolve()));
        } else if (eval->parsed()) {
            emit(flowimg::run_eval(eval_o.resolve()));
        } else if (report->parsed()) {
            const auto out = flowimg::run_report(report_o.resolve());
            std::cerr << out.at("summary").get<std::string>();
            emit(out);
        } else if (predict->parsed()) {
            emit(flowimg::run_predict(predict_o.resolve(), {predict_paths.begin(), predict_paths.end()}));
        } else if (verify->parsed()) {
            const auto v = flowimg::run_verify(verify_o.resolve().output);
            if (!v.ok()) {
                std::cerr << json{{"status", "error"}, {"kind", "data"}, {"issues", v.issues}}.dump(2) << '\n';
                return static_cast<int>(flowimg::ErrorKind::data);
            }
            emit({{"command", "verify"}, {"checked", v.checked}});
        } else if (synth->parsed()) {
            flowimg::SynthSpec spec;
            if (!synth_spec.empty()) {
                std::ifstream in(synth_spec);
                try {
                    spec = flowimg::SynthSpec::from_json(json::parse(in));
                } catch (const json::exception& e) {
                    throw flowimg::config_error(synth_spec + ": " + e.what());
                }
            } else {
                std::vector<std::pair<std::string, std::size_t>> classes;
                std::stringstream ss(synth_classes);
                for (std::string item; std::getline(ss, item, ',');) {
                    const auto colon = item.rfind(':');
                    if (colon == std::string::npos) throw flowimg::config_error("--classes item needs LABEL:ROWS: " + item);
                    try {
                        classes.emplace_back(item.substr(0, colon), std::stoull(item.substr(colon + 1)));
                    } catch (const std::logic_error&) {
                        throw flowimg::config_error("bad row count in " + item);
                    }
                }
                if (classes.empty()) throw flowimg::config_error("synth needs --spec or --classes");
                spec = flowimg::SynthSpec::separable(classes, synth_seed);
                spec.malformed_fraction = synth_malformed;
            }
            const auto out = flowimg::generate(spec, synth_out);
            emit({{"command", "synth"},
                  {"expected_ingest", out.expected},
                  {"artifacts", {{"csv", out.csv.string()}, {"sidecar", out.sidecar.string()}}}});
        } else if (compare->parsed()) {
            std::optional<bool> binary;
            if (!compare_task.empty()) binary = flowimg::parse_task(compare_task) == flowimg::Task::binary;
            const auto checks = flowimg::run_compare(compare_report, binary);
            json rows = json::array();
            bool all = true;
            for (const auto& c : checks) {
                std::cerr << (c.pass() ? "PASS " : "FAIL ") << c.metric << " observed " << c.observed << " expected "
                          << c.expected << " +-" << c.tolerance << '\n';
                rows.push_back({{"metric", c.metric},
                                {"observed", c.observed},
                                {"expected", c.expected},
                                {"tolerance", c.tolerance},
                                {"pass", c.pass()}});
                all = all && c.pass();
            }
            if (!all) {
                std::cerr << json{{"status", "error"}, {"kind", "data"}, {"checks", rows}}.dump() << '\n';
                return static_cast<int>(flowimg::ErrorKind::data);
            }
            emit({{"command", "compare"}, {"checks", rows}});
        }
    } catch (const flowimg::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail(flowimg::ErrorKind::internal, e.what());
    }
    return 0;
}
