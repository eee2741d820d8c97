// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdio>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support.hpp"

using namespace flowimg::testing;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(FLOWIMG_CLI) + " " + args + " 2>/dev/null";
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("encode --epochs notanumber").code, 1);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, ConfigErrorsExitOne) {
    TempDir dir;
    write_text(dir / "bad.yaml", "stats_fit: maybe\n");
    EXPECT_EQ(run("encode -c " + (dir / "bad.yaml").string()).code, 1);
    EXPECT_EQ(run("encode -i " + (dir / "nope").string() + " -o " + (dir / "run").string()).code, 1);
    EXPECT_EQ(run("synth -o " + (dir / "x.csv").string()).code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
    TempDir dir;
    std::filesystem::create_directories(dir / "empty");
    EXPECT_EQ(run("encode -i " + (dir / "empty").string() + " -o " + (dir / "run").string()).code, 2);
    EXPECT_EQ(run("verify -o " + (dir / "run").string()).code, 2);
    EXPECT_EQ(run("train -o " + (dir / "run").string()).code, 2);
}

TEST(Cli, SynthEncodeVerify) {
    TempDir dir;
    const auto csv = (dir / "data" / "a.csv").string();
    auto r = run("synth --classes Syn:360,BENIGN:360 --seed 2 -o " + csv);
    ASSERT_EQ(r.code, 0);
    auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["status"], "ok");
    EXPECT_EQ(j["expected_ingest"]["rows_emitted"], 720);

    // Flags override the config file.
    write_text(dir / "cfg.yaml", "seed: 1\nsplit: {test_per_class: 2500}\noutput: " + (dir / "ignored").string() + "\n");
    r = run("encode -c " + (dir / "cfg.yaml").string() + " -i " + (dir / "data").string() + " -o " +
            (dir / "run").string() + " --seed 9");
    ASSERT_EQ(r.code, 0) << r.out;
    j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["images"], 4);
    EXPECT_EQ(j["seed"], 9);
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "manifest.csv"));
    EXPECT_FALSE(std::filesystem::exists(dir / "ignored"));
    EXPECT_EQ(run("verify -o " + (dir / "run").string()).code, 0);
}

TEST(Cli, CompareExitCodes) {
    TempDir dir;
    nlohmann::json report = {{"format", "flowimg-report/1"},
                             {"classes", {"Normal", "Attack"}},
                             {"confusion_matrix", {{5000, 0}, {1, 4999}}}};
    write_text(dir / "good.json", report.dump());
    EXPECT_EQ(run("compare " + (dir / "good.json").string()).code, 0);
    report["confusion_matrix"] = {{50, 50}, {0, 100}};
    write_text(dir / "bad.json", report.dump());
    EXPECT_EQ(run("compare " + (dir / "bad.json").string()).code, 2);
}
