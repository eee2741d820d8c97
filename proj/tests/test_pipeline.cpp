// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "flowimg/error.hpp"
#include "flowimg/pipeline.hpp"
#include "flowimg/synthgen.hpp"
#include "support.hpp"

using namespace flowimg;
using namespace flowimg::testing;

namespace {

PipelineConfig config_for(const TempDir& dir, std::uint64_t seed = 5) {
    PipelineConfig c;
    c.inputs = {(dir / "data").string()};
    c.output = dir / "run";
    c.seed = seed;
    c.model = ModelConfig::for_task(Task::multiclass, seed);
    return c;
}

std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[std::filesystem::relative(e.path(), root).string()] = read_text(e.path());
    }
    return files;
}

}  // namespace

TEST(PipelineConfig, YamlAndDefaults) {
    const auto c = PipelineConfig::parse(R"(
inputs: [a.csv, "dir/*.csv"]
output: out
seed: 17
split: {test_per_class: 40, val_fraction: 0.2}
stats_fit: global
model: {task: binary, batch_size: 16}
)");
    EXPECT_EQ(c.inputs.size(), 2u);
    EXPECT_EQ(c.output, "out");
    EXPECT_EQ(c.seed, 17u);
    EXPECT_EQ(c.split.test_per_class, 40u);
    EXPECT_EQ(c.split.val_fraction, 0.2);
    EXPECT_EQ(c.fit_mode, FitMode::global);
    EXPECT_EQ(c.model.task, Task::binary);
    EXPECT_EQ(c.model.num_outputs, 1);
    EXPECT_EQ(c.model.epochs, 10);
    EXPECT_EQ(c.model.batch_size, 16);
    EXPECT_EQ(c.model.seed, 17u);

    const auto d = PipelineConfig::parse("");
    EXPECT_EQ(d.split.test_per_class, 2500u);
    EXPECT_EQ(d.fit_mode, FitMode::train_only);
    EXPECT_EQ(d.model.epochs, 50);
    EXPECT_THROW(PipelineConfig::parse("stats_fit: sometimes"), Error);
    EXPECT_THROW(PipelineConfig::parse("[1, 2]"), Error);
}

TEST(PipelineConfig, InputsAndFingerprint) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 10}}, 1), dir / "data" / "b.csv");
    generate(SynthSpec::separable({{"Syn", 10}}, 2), dir / "data" / "a.csv");
    write_text(dir / "data" / "notes.txt", "x");
    auto c = config_for(dir);
    const auto files = c.resolve_inputs();
    ASSERT_EQ(files.size(), 2u);
    EXPECT_EQ(files[0].filename(), "a.csv");
    c.inputs = {(dir / "data" / "*.csv").string(), (dir / "data" / "a.csv").string()};
    EXPECT_EQ(c.resolve_inputs(), files);

    const auto fp = c.fingerprint();
    EXPECT_EQ(fp.size(), 16u);
    EXPECT_EQ(c.fingerprint(), fp);
    auto d = c;
    d.seed = 6;
    EXPECT_NE(d.fingerprint(), fp);
    d = c;
    d.model.epochs = 3;  // training knobs do not change the dataset
    EXPECT_EQ(d.fingerprint(), fp);

    c.inputs = {(dir / "missing").string()};
    EXPECT_THROW(c.resolve_inputs(), Error);
}

TEST(Encode, SynthFixtureGivesFourImages) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 360}, {"BENIGN", 360}}, 1), dir / "data" / "a.csv");
    const auto config = config_for(dir);
    const auto summary = run_encode(config);
    EXPECT_EQ(summary["images"], 4);
    const auto m = DatasetManifest::load(RunLayout{config.output}.manifest());
    EXPECT_EQ(m.entries.size(), 4u);
    EXPECT_EQ(m.count(Split::test), 4u);  // under 2500 per class: all test
    EXPECT_EQ(m.seed, 5u);
    EXPECT_EQ(m.fingerprint, config.fingerprint());
    for (const auto& e : m.entries) EXPECT_TRUE(std::filesystem::exists(config.output / e.path()));
    EXPECT_TRUE(std::filesystem::exists(config.output / "test" / "C0"));
    EXPECT_TRUE(std::filesystem::exists(config.output / "test" / "C11"));
}

TEST(Encode, EmptyInputIsNoData) {
    TempDir dir;
    std::filesystem::create_directories(dir / "data");
    try {
        run_encode(config_for(dir));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::data);
        EXPECT_NE(std::string(e.what()).find("no data"), std::string::npos);
    }
}

TEST(Encode, StatsFitModes) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 1800 + 17}}, 1), dir / "data" / "a.csv");
    auto config = config_for(dir);
    config.split = {2, 0.25};
    run_encode(config);
    const RunLayout layout{config.output};
    const auto m = DatasetManifest::load(layout.manifest());
    EXPECT_EQ(m.count(Split::test), 2u);
    EXPECT_EQ(m.count(Split::val), 2u);
    EXPECT_EQ(m.count(Split::train), 6u);
    const auto train_only = NormStats::load(layout.stats());
    EXPECT_EQ(train_only.record_count, 6u * 180);
    EXPECT_EQ(train_only.fit_mode, "train-only");
    EXPECT_EQ(m.stats_id, train_only.id());

    config.fit_mode = FitMode::global;
    run_encode(config);
    const auto global = NormStats::load(layout.stats());
    EXPECT_EQ(global.record_count, 1817u);
    EXPECT_NE(global.id(), train_only.id());
}

TEST(Encode, TrainOnlyWithoutTrainImagesFallsBack) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 400}}, 1), dir / "data" / "a.csv");
    const auto config = config_for(dir);
    run_encode(config);
    const RunLayout layout{config.output};
    const auto stats = NormStats::load(layout.stats());
    EXPECT_EQ(stats.fit_mode, "global");
    EXPECT_EQ(stats.record_count, 400u);
    const auto report = nlohmann::json::parse(read_text(layout.ingest_report()));
    EXPECT_FALSE(report["warnings"].empty());
}

TEST(Encode, ChunksNumberedAcrossFiles) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 400}}, 1), dir / "data" / "a.csv");
    generate(SynthSpec::separable({{"Syn", 200}}, 2), dir / "data" / "b.csv");
    auto config = config_for(dir);
    config.fit_mode = FitMode::global;
    run_encode(config);
    const RunLayout layout{config.output};
    const auto m = DatasetManifest::load(layout.manifest());
    ASSERT_EQ(m.entries.size(), 3u);
    const auto report = nlohmann::json::parse(read_text(layout.ingest_report()));
    EXPECT_EQ(report["classes"][0]["dropped_trailing"], 40 + 20);
    EXPECT_EQ(report["total"]["rows_read"], 600);
    EXPECT_EQ(report["fingerprint"], m.fingerprint);

    // Chunk 2 is the first 180 rows of b.csv.
    const auto b = ingest_file(dir / "data" / "b.csv", FeatureCatalog::cicddos2019(), LabelMap::defaults());
    const auto stats = NormStats::load(layout.stats());
    const auto expect = encode_chunks(b.records, stats);
    EXPECT_EQ(read_png(config.output / "test" / "C0" / "2.png").pixels, expect.images.at(0).pixels);
}

TEST(Encode, RerunIsByteIdentical) {
    TempDir dir;
    auto spec = SynthSpec::separable({{"Syn", 900}, {"DrDoS_DNS", 1000}}, 3);
    spec.malformed_fraction = 0.02;
    generate(spec, dir / "data" / "a.csv");
    auto config = config_for(dir);
    config.split = {1, 0.2};
    run_encode(config);
    const auto first = snapshot(config.output);
    // Stale files from an earlier layout are removed.
    write_text(config.output / "train" / "C5" / "99.png", "junk");
    run_encode(config);
    EXPECT_EQ(snapshot(config.output), first);
}

TEST(Verify, DetectsInconsistency) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 720}}, 1), dir / "data" / "a.csv");
    auto config = config_for(dir);
    config.split = {1, 0.0};
    run_encode(config);
    auto v = run_verify(config.output);
    EXPECT_TRUE(v.ok()) << (v.issues.empty() ? "" : v.issues[0]);
    EXPECT_EQ(v.checked.size(), 3u);

    auto j = nlohmann::json::parse(read_text(RunLayout{config.output}.stats()));
    j["fingerprint"] = "0000000000000000";
    write_text(RunLayout{config.output}.stats(), j.dump());
    std::filesystem::remove(config.output / DatasetManifest::load(RunLayout{config.output}.manifest()).entries[0].path());
    v = run_verify(config.output);
    EXPECT_EQ(v.issues.size(), 2u);

    EXPECT_FALSE(run_verify(dir / "nowhere").ok());
}

TEST(Pipeline, TrainEvalReportPredict) {
    TempDir dir;
    generate(SynthSpec::separable({{"Syn", 1440}, {"BENIGN", 1440}}, 1), dir / "data" / "a.csv");
    auto config = config_for(dir);
    config.split = {2, 0.2};
    config.model = ModelConfig::for_task(Task::binary, config.seed);
    config.model.epochs = 2;
    config.model.input_size = 32;
    config.model.batch_size = 4;
    run_encode(config);
    const auto t = run_train(config);
    EXPECT_GE(t["best_epoch"].get<int>(), 1);
    const RunLayout layout{config.output};
    EXPECT_EQ(Checkpoint::load(layout.checkpoint_stem()).config.task, Task::binary);
    const auto e = run_eval(config);
    EXPECT_EQ(e["samples"], 4);
    const auto report = EvalReport::from_json(nlohmann::json::parse(read_text(layout.eval_report())));
    EXPECT_EQ(report.matrix.class_names(), (std::vector<std::string>{"Normal", "Attack"}));
    EXPECT_EQ(report.matrix.total(), 4u);
    const auto r = run_report(config);
    EXPECT_TRUE(std::filesystem::exists(layout.report_dir() / "class_precision.png"));
    EXPECT_NE(r["summary"].get<std::string>().find("ResNet18 "), std::string::npos);
    const auto v = run_verify(config.output);
    EXPECT_TRUE(v.ok()) << (v.issues.empty() ? "" : v.issues[0]);
    EXPECT_EQ(v.checked.size(), 6u);

    const auto p = run_predict(config, {config.output / "test" / "C0" / DatasetManifest::load(layout.manifest())
                                                                         .select(Split::test)
                                                                         .front()
                                                                         .path()
                                                                         .substr(8),
                                        dir / "data" / "a.csv"});
    EXPECT_EQ(p["predictions"].size(), 1u + 16u);
}
