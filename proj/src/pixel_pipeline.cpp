// SPDX-License-Identifier: Apache-2.0

#include "flowimg/pixel_pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cfenv>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "flowimg/error.hpp"
#include "flowimg/rng.hpp"

namespace flowimg {

namespace {
constexpr std::string_view kStatsFormat = "flowimg-stats/1";
constexpr std::string_view kManifestFormat = "flowimg-manifest/1";

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}
}  // namespace

// ---------------------------------------------------------------------------
// NormStats

std::string NormStats::id() const {
    std::uint64_t h = fnv1a64("stats");
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        h = fnv1a64(i < feature_names.size() ? feature_names[i] : std::string(), h);
        h = mix64(h ^ std::bit_cast<std::uint64_t>(ranges[i].min));
        h = mix64(h ^ std::bit_cast<std::uint64_t>(ranges[i].max));
    }
    return hex64(h);
}

nlohmann::json NormStats::to_json() const {
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        features.push_back({{"name", feature_names.at(i)}, {"min", ranges[i].min}, {"max", ranges[i].max}});
    }
    return {{"format", kStatsFormat}, {"id", id()},          {"fit_mode", fit_mode},
            {"records", record_count}, {"sources", source_files}, {"features", features}};
}

NormStats NormStats::from_json(const nlohmann::json& j) {
    if (j.value("format", std::string()) != kStatsFormat) throw data_error("not a flowimg stats file");
    NormStats s;
    for (const auto& f : j.at("features")) {
        s.feature_names.push_back(f.at("name").get<std::string>());
        s.ranges.push_back({f.at("min").get<double>(), f.at("max").get<double>()});
        if (s.ranges.back().min > s.ranges.back().max) throw data_error("stats file has min > max");
    }
    s.record_count = j.value("records", std::size_t{0});
    s.source_files = j.value("sources", std::vector<std::string>{});
    s.fit_mode = j.value("fit_mode", std::string());
    if (j.contains("id") && j["id"].get<std::string>() != s.id()) throw data_error("stats file id does not match its content");
    return s;
}

void NormStats::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    auto j = to_json();
    if (extra.is_object()) j.update(extra);
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

NormStats NormStats::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad stats file " + path.string() + ": " + e.what());
    }
}

StatsAccumulator::StatsAccumulator(std::size_t num_features)
    : ranges_(num_features, FeatureRange{HUGE_VAL, -HUGE_VAL}) {}

void StatsAccumulator::add(std::span<const double> values) {
    if (values.size() != ranges_.size()) throw internal_error("record width does not match the stats accumulator");
    for (std::size_t i = 0; i < values.size(); ++i) {
        ranges_[i].min = std::min(ranges_[i].min, values[i]);
        ranges_[i].max = std::max(ranges_[i].max, values[i]);
    }
    ++count_;
}

void StatsAccumulator::note_source(const std::string& file_id) {
    if (std::find(sources_.begin(), sources_.end(), file_id) == sources_.end()) sources_.push_back(file_id);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    if (other.ranges_.size() != ranges_.size()) throw internal_error("merging accumulators of different width");
    for (std::size_t i = 0; i < ranges_.size(); ++i) {
        ranges_[i].min = std::min(ranges_[i].min, other.ranges_[i].min);
        ranges_[i].max = std::max(ranges_[i].max, other.ranges_[i].max);
    }
    count_ += other.count_;
    for (const auto& s : other.sources_) note_source(s);
}

NormStats StatsAccumulator::finish(std::vector<std::string> feature_names, std::string fit_mode) const {
    if (count_ == 0) throw data_error("no data");
    if (feature_names.size() != ranges_.size()) throw internal_error("feature name count does not match stats width");
    NormStats s;
    s.feature_names = std::move(feature_names);
    s.ranges = ranges_;
    s.record_count = count_;
    s.source_files = sources_;
    std::sort(s.source_files.begin(), s.source_files.end());
    s.fit_mode = std::move(fit_mode);
    return s;
}

NormStats fit_stats(std::span<const FlowRecord> records, std::vector<std::string> feature_names) {
    StatsAccumulator acc(feature_names.size());
    for (const auto& r : records) {
        acc.add(r);
        acc.note_source(r.source.file_id);
    }
    return acc.finish(std::move(feature_names));
}

std::uint8_t normalize(double x, double feature_min, double feature_max) noexcept {
    if (!(feature_max > feature_min)) return 0;
    // Extended precision keeps (x-min)*255 exact for integer-valued data, so
    // exact .5 ties really are ties.
    const long double scaled = (static_cast<long double>(x) - feature_min) * 255.0L /
                               (static_cast<long double>(feature_max) - feature_min);
    if (!(scaled > 0.0L)) return 0;
    if (scaled >= 255.0L) return 255;
    // nearbyint honours the current rounding mode; force ties-to-even.
    const int saved = std::fegetround();
    if (saved != FE_TONEAREST) std::fesetround(FE_TONEAREST);
    const long double r = std::nearbyintl(scaled);
    if (saved != FE_TONEAREST) std::fesetround(saved);
    return static_cast<std::uint8_t>(r);
}

// ---------------------------------------------------------------------------
// ChunkEncoder

ChunkEncoder::ChunkEncoder(const NormStats& stats, std::string file_id, std::size_t first_chunk_index)
    : ranges_(stats.ranges), file_id_(std::move(file_id)), next_chunk_index_(first_chunk_index) {
    if (stats.ranges.size() != static_cast<std::size_t>(EncodedImage::kCols)) {
        throw data_error("image encoding needs exactly " + std::to_string(EncodedImage::kCols) + " features, stats cover " +
                         std::to_string(stats.ranges.size()));
    }
}

std::optional<EncodedImage> ChunkEncoder::push(const FlowRecord& record) {
    if (!label_) {
        label_ = record.label;
    } else if (record.label.id != label_->id) {
        throw internal_error("chunk encoder received mixed labels (" + label_->tag() + " and " + record.label.tag() + ")");
    }
    if (record.values.size() != ranges_.size()) throw internal_error("record width does not match stats");

    if (filled_ == 0) {
        pending_.label = *label_;
        pending_.provenance = {file_id_, records_in_, next_chunk_index_};
    }
    const int channel = static_cast<int>(filled_ / EncodedImage::kRows);
    const int row = static_cast<int>(filled_ % EncodedImage::kRows);
    for (int col = 0; col < EncodedImage::kCols; ++col) {
        const auto& range = ranges_[static_cast<std::size_t>(col)];
        pending_.at(row, col, channel) = normalize(record.values[static_cast<std::size_t>(col)], range.min, range.max);
    }
    ++records_in_;
    if (++filled_ < EncodedImage::kChunkSize) return std::nullopt;

    filled_ = 0;
    ++images_;
    ++next_chunk_index_;
    return pending_;
}

EncodeResult encode_chunks(std::span<const FlowRecord> records, const NormStats& stats, const std::string& file_id) {
    ChunkEncoder encoder(stats, file_id);
    EncodeResult result;
    for (const auto& r : records) {
        if (auto img = encoder.push(r)) result.images.push_back(std::move(*img));
    }
    result.dropped = encoder.dropped();
    return result;
}

// ---------------------------------------------------------------------------
// Split

const char* to_string(Split s) noexcept {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw data_error("unknown split '" + std::string(s) + "'");
}

std::string ManifestEntry::path() const {
    return std::string(to_string(split)) + "/C" + std::to_string(class_id) + "/" + std::to_string(chunk_index) + ".png";
}

std::size_t DatasetManifest::count(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

std::size_t DatasetManifest::count(Split split, int class_id) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
        return e.split == split && e.class_id == class_id;
    }));
}

std::vector<ManifestEntry> DatasetManifest::select(Split split) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [&](const ManifestEntry& e) { return e.split == split; });
    return out;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << "# " << kManifestFormat << '\n'
        << "# seed=" << seed << '\n'
        << "# stats_id=" << stats_id << '\n'
        << "# fingerprint=" << fingerprint << '\n'
        << "path,class_id,split\n";
    for (const auto& e : entries) out << e.path() << ',' << e.class_id << ',' << to_string(e.split) << '\n';
    if (!out) throw data_error("write failed: " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open manifest " + path.string());
    DatasetManifest m;
    std::string line;
    bool format_ok = false;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto body = line.substr(line.find_first_not_of("# "));
            if (body == kManifestFormat) format_ok = true;
            const auto eq = body.find('=');
            if (eq == std::string::npos) continue;
            const auto key = body.substr(0, eq);
            const auto value = body.substr(eq + 1);
            if (key == "seed") m.seed = std::stoull(value);
            else if (key == "stats_id") m.stats_id = value;
            else if (key == "fingerprint") m.fingerprint = value;
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream fields(line);
        std::string rel, cls, split;
        if (!std::getline(fields, rel, ',') || !std::getline(fields, cls, ',') || !std::getline(fields, split)) {
            throw data_error("malformed manifest line: " + line);
        }
        ManifestEntry e;
        e.class_id = std::stoi(cls);
        e.split = parse_split(split);
        const auto stem = std::filesystem::path(rel).stem().string();
        const auto [p, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), e.chunk_index);
        if (ec != std::errc{} || e.path() != rel) throw data_error("manifest path does not follow the layout: " + rel);
        m.entries.push_back(e);
    }
    if (!format_ok) throw data_error("not a flowimg manifest: " + path.string());
    return m;
}

DatasetManifest split_dataset(const std::map<int, std::vector<std::size_t>>& chunks_per_class, std::uint64_t seed,
                              const SplitPolicy& policy) {
    if (policy.val_fraction < 0.0 || policy.val_fraction >= 1.0) throw config_error("val_fraction must be in [0, 1)");
    DatasetManifest m;
    m.seed = seed;
    for (const auto& [class_id, chunks_unsorted] : chunks_per_class) {
        auto chunks = chunks_unsorted;
        std::sort(chunks.begin(), chunks.end());
        const std::size_t n = chunks.size();
        if (n == 0) continue;
        std::vector<Split> assignment(n, Split::train);

        std::vector<std::size_t> rest;
        if (n > policy.test_per_class) {
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            Rng rng(sub_seed(seed, "split.test", static_cast<std::uint64_t>(class_id)));
            rng.shuffle(order);
            for (std::size_t i = 0; i < policy.test_per_class; ++i) assignment[order[i]] = Split::test;
            for (std::size_t i = 0; i < n; ++i) {
                if (assignment[i] != Split::test) rest.push_back(i);
            }
        } else {
            std::fill(assignment.begin(), assignment.end(), Split::test);
        }

        const auto n_val = static_cast<std::size_t>(std::llround(policy.val_fraction * static_cast<double>(rest.size())));
        Rng rng(sub_seed(seed, "split.val", static_cast<std::uint64_t>(class_id)));
        rng.shuffle(rest);
        for (std::size_t i = 0; i < n_val && i < rest.size(); ++i) assignment[rest[i]] = Split::val;

        if (rest.size() <= n_val) {
            m.warnings.push_back("class C" + std::to_string(class_id) + " has no training images");
        }
        for (std::size_t i = 0; i < n; ++i) m.entries.push_back({class_id, chunks[i], assignment[i]});
    }
    return m;
}

// ---------------------------------------------------------------------------
// Image files

void write_png(const std::filesystem::path& path, const EncodedImage& image) {
    cv::Mat rgb(EncodedImage::kRows, EncodedImage::kCols, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp.png";
    if (!cv::imwrite(tmp.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw data_error("failed to write image " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

EncodedImage read_png(const std::filesystem::path& path) {
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (bgr.empty()) throw data_error("cannot read image " + path.string());
    if (bgr.rows != EncodedImage::kRows || bgr.cols != EncodedImage::kCols || bgr.type() != CV_8UC3) {
        throw data_error("image " + path.string() + " is not 60x60 8-bit RGB");
    }
    EncodedImage image;
    cv::Mat rgb(EncodedImage::kRows, EncodedImage::kCols, CV_8UC3, image.pixels.data());
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return image;
}

std::size_t write_images(std::span<const EncodedImage> images, const DatasetManifest& manifest,
                         const std::filesystem::path& root) {
    std::map<std::pair<int, std::size_t>, const ManifestEntry*> index;
    for (const auto& e : manifest.entries) index[{e.class_id, e.chunk_index}] = &e;
    std::size_t written = 0;
    for (const auto& img : images) {
        const auto it = index.find({img.label.id, img.provenance.chunk_index});
        if (it == index.end()) continue;
        write_png(root / it->second->path(), img);
        ++written;
    }
    return written;
}

}  // namespace flowimg
