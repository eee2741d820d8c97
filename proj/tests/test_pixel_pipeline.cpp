// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "flowimg/error.hpp"
#include "flowimg/pixel_pipeline.hpp"
#include "support.hpp"

using namespace flowimg;
using namespace flowimg::testing;

namespace {

const ClassLabel kSyn = LabelMap::defaults().by_id(0);
const ClassLabel kBenign = LabelMap::defaults().by_id(11);

NormStats unit_stats(double lo = 0.0, double hi = 1000.0) {
    NormStats s;
    s.feature_names = FeatureCatalog::cicddos2019().retained_names();
    s.ranges.assign(60, {lo, hi});
    s.record_count = 1;
    s.fit_mode = "global";
    return s;
}

std::vector<FlowRecord> ramp(std::size_t n, const ClassLabel& label) {
    std::vector<FlowRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        FlowRecord r;
        r.label = label;
        for (std::size_t f = 0; f < 60; ++f) r.values.push_back(static_cast<double>((i * 7 + f * 13) % 1000));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST(Normalize, Examples) {
    EXPECT_EQ(normalize(0, 0, 10), 0);
    EXPECT_EQ(normalize(10, 0, 10), 255);
    EXPECT_EQ(normalize(5, 0, 10), 128);  // 127.5 -> 128 (even)
    EXPECT_EQ(normalize(1, 0, 510), 0);   // 0.5 -> 0
    EXPECT_EQ(normalize(3, 0, 510), 2);   // 1.5 -> 2
    EXPECT_EQ(normalize(5, 0, 510), 2);   // 2.5 -> 2
    EXPECT_EQ(normalize(3, 3, 3), 0);
    EXPECT_EQ(normalize(-4, 0, 10), 0);
    EXPECT_EQ(normalize(40, 0, 10), 255);
    EXPECT_EQ(normalize(-1e300, -1e300, 1e300), 0);
    EXPECT_EQ(normalize(1e300, -1e300, 1e300), 255);
}

TEST(Normalize, RangeMonotoneEndpoints) {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 10000; ++i) {
        double lo = u(gen), hi = u(gen);
        if (lo > hi) std::swap(lo, hi);
        double a = u(gen), b = u(gen);
        if (a > b) std::swap(a, b);
        EXPECT_LE(normalize(a, lo, hi), normalize(b, lo, hi));
        if (hi > lo) {
            EXPECT_EQ(normalize(lo, lo, hi), 0);
            EXPECT_EQ(normalize(hi, lo, hi), 255);
        }
    }
}

TEST(FitStats, SingleRecordAndExtremes) {
    const auto one = std::vector<FlowRecord>{record_of(4.0, kSyn)};
    const auto s = fit_stats(one, FeatureCatalog::cicddos2019().retained_names());
    for (const auto& r : s.ranges) {
        EXPECT_EQ(r.min, 4.0);
        EXPECT_EQ(r.max, 4.0);
    }
    std::vector<FlowRecord> three = {record_of(5, kSyn), record_of(0, kSyn), record_of(10, kSyn)};
    const auto t = fit_stats(three, FeatureCatalog::cicddos2019().retained_names());
    EXPECT_EQ(t.ranges[17].min, 0.0);
    EXPECT_EQ(t.ranges[17].max, 10.0);
    EXPECT_EQ(t.record_count, 3u);
}

TEST(FitStats, MatchesTwoPassOracle) {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> nd(0, 1e4);
    std::vector<FlowRecord> recs;
    for (int i = 0; i < 1000; ++i) {
        FlowRecord r;
        for (int f = 0; f < 60; ++f) r.values.push_back(nd(gen) * (f + 1));
        recs.push_back(r);
    }
    const auto s = fit_stats(recs, FeatureCatalog::cicddos2019().retained_names());
    for (int f = 0; f < 60; ++f) {
        double lo = recs[0].values[f];
        for (const auto& r : recs) lo = std::min(lo, r.values[f]);
        double hi = recs[0].values[f];
        for (const auto& r : recs) hi = std::max(hi, r.values[f]);
        EXPECT_EQ(s.ranges[f].min, lo);
        EXPECT_EQ(s.ranges[f].max, hi);
    }
}

TEST(FitStats, MergeEqualsSinglePass) {
    const auto recs = ramp(500, kSyn);
    StatsAccumulator a(60), b(60), all(60);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        (i < 200 ? a : b).add(recs[i]);
        all.add(recs[i]);
    }
    a.merge(b);
    const auto names = FeatureCatalog::cicddos2019().retained_names();
    EXPECT_EQ(a.finish(names).id(), all.finish(names).id());
}

TEST(FitStats, EmptyIsNoData) {
    try {
        fit_stats({}, FeatureCatalog::cicddos2019().retained_names());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::data);
        EXPECT_NE(std::string(e.what()).find("no data"), std::string::npos);
    }
}

TEST(NormStats, JsonRoundTripAndTamper) {
    TempDir dir;
    const auto s = fit_stats(ramp(10, kSyn), FeatureCatalog::cicddos2019().retained_names());
    s.save(dir / "stats.json");
    const auto t = NormStats::load(dir / "stats.json");
    EXPECT_EQ(t.id(), s.id());
    EXPECT_EQ(t.ranges[3].max, s.ranges[3].max);

    auto j = s.to_json();
    j["features"][0]["max"] = 12345.0;
    EXPECT_THROW(NormStats::from_json(j), Error);
}

TEST(Encode, ChunkCounts) {
    const auto stats = unit_stats();
    for (const auto& [n, images, dropped] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{
             {180, 1, 0}, {179, 0, 179}, {450, 2, 90}, {0, 0, 0}, {360, 2, 0}}) {
        const auto r = encode_chunks(ramp(n, kSyn), stats);
        EXPECT_EQ(r.images.size(), images) << n;
        EXPECT_EQ(r.dropped, dropped) << n;
    }
}

TEST(Encode, PixelLayout) {
    const auto stats = unit_stats();
    const auto recs = ramp(540, kBenign);
    const auto r = encode_chunks(recs, stats, "f.csv");
    ASSERT_EQ(r.images.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& img = r.images[k];
        EXPECT_EQ(img.label, kBenign);
        EXPECT_EQ(img.provenance.chunk_index, k);
        EXPECT_EQ(img.provenance.class_offset, k * 180);
        EXPECT_EQ(img.provenance.file_id, "f.csv");
        for (int ch = 0; ch < 3; ++ch) {
            for (int row = 0; row < 60; ++row) {
                const auto& rec = recs[k * 180 + static_cast<std::size_t>(ch) * 60 + static_cast<std::size_t>(row)];
                for (int col = 0; col < 60; ++col) {
                    ASSERT_EQ(img.at(row, col, ch), normalize(rec.values[static_cast<std::size_t>(col)], 0, 1000));
                }
            }
        }
    }
}

TEST(Encode, MixedLabelsIsInternalError) {
    ChunkEncoder enc(unit_stats());
    enc.push(record_of(1, kSyn));
    try {
        enc.push(record_of(1, kBenign));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::internal);
    }
}

TEST(Encode, WrongFeatureCountIsDataError) {
    auto s = unit_stats();
    s.ranges.pop_back();
    s.feature_names.pop_back();
    EXPECT_THROW(ChunkEncoder{s}, Error);
}

TEST(Split, DefaultPolicyCounts) {
    std::map<int, std::vector<std::size_t>> chunks;
    const std::vector<std::size_t> sizes = {3000, 2500, 2000, 1};
    for (int c = 0; c < 4; ++c) {
        for (std::size_t i = 0; i < sizes[c]; ++i) chunks[c].push_back(i);
    }
    const auto m = split_dataset(chunks, 42);
    const std::vector<std::size_t> want_test = {2500, 2500, 2000, 1};
    for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(m.count(Split::test, c), want_test[c]);
        EXPECT_EQ(m.count(Split::test, c) + m.count(Split::val, c) + m.count(Split::train, c), sizes[c]);
    }
    EXPECT_EQ(m.count(Split::val, 0), 50u);
    EXPECT_EQ(m.count(Split::train, 0), 450u);
    EXPECT_EQ(m.count(Split::train, 1), 0u);
    EXPECT_FALSE(m.warnings.empty());  // classes with no training images

    std::set<std::pair<int, std::size_t>> seen;
    for (const auto& e : m.entries) EXPECT_TRUE(seen.insert({e.class_id, e.chunk_index}).second);
    EXPECT_EQ(seen.size(), 7501u);

    const auto again = split_dataset(chunks, 42);
    EXPECT_EQ(again.entries, m.entries);
    const auto other = split_dataset(chunks, 43);
    EXPECT_NE(other.entries, m.entries);
}

TEST(Split, ConfigurablePolicy) {
    std::map<int, std::vector<std::size_t>> chunks;
    for (std::size_t i = 0; i < 20; ++i) chunks[5].push_back(i);
    const auto m = split_dataset(chunks, 1, {4, 0.25});
    EXPECT_EQ(m.count(Split::test), 4u);
    EXPECT_EQ(m.count(Split::val), 4u);
    EXPECT_EQ(m.count(Split::train), 12u);
    EXPECT_TRUE(m.warnings.empty());
}

TEST(Manifest, SaveLoadRoundTrip) {
    TempDir dir;
    std::map<int, std::vector<std::size_t>> chunks{{0, {0, 1, 2, 3, 4}}, {11, {0, 1, 2}}};
    auto m = split_dataset(chunks, 9, {2, 0.5});
    m.stats_id = "abc";
    m.fingerprint = "def";
    m.save(dir / "manifest.csv");
    const auto n = DatasetManifest::load(dir / "manifest.csv");
    EXPECT_EQ(n.entries, m.entries);
    EXPECT_EQ(n.seed, 9u);
    EXPECT_EQ(n.stats_id, "abc");
    EXPECT_EQ(n.fingerprint, "def");
    EXPECT_EQ(m.entries[0].path().substr(0, 0), "");
    EXPECT_EQ((ManifestEntry{11, 2, Split::val}).path(), "val/C11/2.png");
}

TEST(Png, LosslessRoundTrip) {
    TempDir dir;
    std::mt19937 gen(3);
    EncodedImage img;
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen());
    img.at(0, 0, 0) = 255;
    img.at(0, 0, 1) = 0;
    img.at(0, 0, 2) = 17;
    write_png(dir / "x" / "a.png", img);
    const auto back = read_png(dir / "x" / "a.png");
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_FALSE(std::filesystem::exists(dir / "x" / "a.png.tmp"));
}

TEST(Png, TwelveClassDirectories) {
    TempDir dir;
    std::vector<EncodedImage> images;
    std::map<int, std::vector<std::size_t>> chunks;
    for (const auto& c : LabelMap::defaults().classes()) {
        const auto r = encode_chunks(ramp(180, c), unit_stats());
        images.insert(images.end(), r.images.begin(), r.images.end());
        chunks[c.id].push_back(0);
    }
    const auto m = split_dataset(chunks, 0);
    EXPECT_EQ(write_images(images, m, dir.path()), 12u);
    std::set<std::string> dirs;
    for (const auto& e : std::filesystem::directory_iterator(dir / "test")) dirs.insert(e.path().filename().string());
    std::set<std::string> want;
    for (int k = 0; k < 12; ++k) want.insert("C" + std::to_string(k));
    EXPECT_EQ(dirs, want);
    EXPECT_EQ(read_png(dir / "test" / "C11" / "0.png").pixels, images[11].pixels);
}

TEST(Png, EmptySetWritesNothing) {
    TempDir dir;
    const auto m = split_dataset({}, 0);
    EXPECT_TRUE(m.entries.empty());
    EXPECT_EQ(write_images({}, m, dir.path()), 0u);
    EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}
