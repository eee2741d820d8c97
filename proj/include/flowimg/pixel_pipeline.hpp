// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowimg/ingest.hpp"

namespace flowimg {

// ---------------------------------------------------------------------------
// Normalisation statistics

struct FeatureRange {
    double min = 0.0;
    double max = 0.0;
    friend bool operator==(const FeatureRange&, const FeatureRange&) = default;
};

/// Per-feature min/max used to map raw feature values onto 0..255.
struct NormStats {
    std::vector<std::string> feature_names;
    std::vector<FeatureRange> ranges;
    // provenance
    std::size_t record_count = 0;
    std::vector<std::string> source_files;
    std::string fit_mode;  // "train-only" or "global"

    /// Content hash over names and ranges (hex). Provenance does not take part.
    std::string id() const;

    nlohmann::json to_json() const;
    static NormStats from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
    static NormStats load(const std::filesystem::path& path);
};

/// Single-pass min/max reduction. Accumulators over disjoint partitions can
/// be merged in any order with the same result.
class StatsAccumulator {
public:
    explicit StatsAccumulator(std::size_t num_features);

    void add(std::span<const double> values);
    void add(const FlowRecord& record) { add(record.values); }
    void note_source(const std::string& file_id);
    void merge(const StatsAccumulator& other);

    std::size_t count() const noexcept { return count_; }
    /// Throws a data error ("no data") when nothing was added.
    NormStats finish(std::vector<std::string> feature_names, std::string fit_mode = "global") const;

private:
    std::vector<FeatureRange> ranges_;
    std::size_t count_ = 0;
    std::vector<std::string> sources_;
};

NormStats fit_stats(std::span<const FlowRecord> records, std::vector<std::string> feature_names);

/// Min-max scaling of one value onto 0..255: (x-min)/(max-min)*255, rounded
/// half-to-even and clamped. A degenerate range (max == min) maps to 0.
std::uint8_t normalize(double x, double feature_min, double feature_max) noexcept;

// ---------------------------------------------------------------------------
// Chunk encoding

struct ImageProvenance {
    std::string file_id;
    std::size_t class_offset = 0;  // index of the chunk's first record in its (file, class) stream
    std::size_t chunk_index = 0;   // chunk number within the class
    friend bool operator==(const ImageProvenance&, const ImageProvenance&) = default;
};

/// 60x60x3 image built from 180 same-class records. Records 0-59 fill
/// channel 0 (row r = record r), 60-119 channel 1, 120-179 channel 2.
struct EncodedImage {
    static constexpr int kRows = 60;
    static constexpr int kCols = 60;
    static constexpr int kChannels = 3;
    static constexpr std::size_t kChunkSize = kRows * kChannels;
    static constexpr std::size_t kPixelCount = std::size_t{kRows} * kCols * kChannels;

    std::array<std::uint8_t, kPixelCount> pixels{};  // row-major, channel-interleaved (HWC)
    ClassLabel label;
    ImageProvenance provenance;

    static constexpr std::size_t offset(int row, int col, int channel) noexcept {
        return (static_cast<std::size_t>(row) * kCols + static_cast<std::size_t>(col)) * kChannels +
               static_cast<std::size_t>(channel);
    }
    std::uint8_t at(int row, int col, int channel) const noexcept { return pixels[offset(row, col, channel)]; }
    std::uint8_t& at(int row, int col, int channel) noexcept { return pixels[offset(row, col, channel)]; }
};

/// Packs a single-class record stream into images, 180 records at a time.
class ChunkEncoder {
public:
    /// `stats` must cover exactly the 60 image columns.
    ChunkEncoder(const NormStats& stats, std::string file_id = {}, std::size_t first_chunk_index = 0);

    /// Returns an image each time a chunk completes. Throws an internal error
    /// if the record's label differs from earlier records.
    std::optional<EncodedImage> push(const FlowRecord& record);

    std::size_t records_in() const noexcept { return records_in_; }
    std::size_t images_emitted() const noexcept { return images_; }
    /// Records of the trailing partial chunk; they never form an image.
    std::size_t dropped() const noexcept { return records_in_ - images_ * EncodedImage::kChunkSize; }

private:
    std::vector<FeatureRange> ranges_;
    std::string file_id_;
    std::size_t next_chunk_index_;
    std::optional<ClassLabel> label_;
    EncodedImage pending_;
    std::size_t filled_ = 0;
    std::size_t records_in_ = 0;
    std::size_t images_ = 0;
};

struct EncodeResult {
    std::vector<EncodedImage> images;
    std::size_t dropped = 0;
};

EncodeResult encode_chunks(std::span<const FlowRecord> records, const NormStats& stats, const std::string& file_id = {});

// ---------------------------------------------------------------------------
// Split

enum class Split { train, val, test };
const char* to_string(Split s) noexcept;
Split parse_split(std::string_view s);

struct SplitPolicy {
    std::size_t test_per_class = 2500;
    double val_fraction = 0.1;
};

struct ManifestEntry {
    int class_id = 0;
    std::size_t chunk_index = 0;
    Split split = Split::train;

    /// "<split>/C<k>/<chunk_index>.png", relative to the output root.
    std::string path() const;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;  // ordered by class id, then chunk index
    std::uint64_t seed = 0;
    std::string stats_id;
    std::string fingerprint;
    std::vector<std::string> warnings;

    std::size_t count(Split split) const;
    std::size_t count(Split split, int class_id) const;
    std::vector<ManifestEntry> select(Split split) const;

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);
};

/// Per class: more than `test_per_class` images -> a seeded uniform sample of
/// that many goes to test; otherwise the whole class is test. The remainder
/// is split into val (round(val_fraction * remainder)) and train.
/// `chunks_per_class` maps class id to the chunk indices available.
DatasetManifest split_dataset(const std::map<int, std::vector<std::size_t>>& chunks_per_class, std::uint64_t seed,
                              const SplitPolicy& policy = {});

// ---------------------------------------------------------------------------
// Image files

/// Lossless 8-bit RGB PNG; channel 0 is stored as red. Written to a temporary
/// sibling and renamed, so an interrupted run never leaves a truncated file.
void write_png(const std::filesystem::path& path, const EncodedImage& image);
/// Reads a PNG written by write_png. Label/provenance are left default.
EncodedImage read_png(const std::filesystem::path& path);

/// Writes every image that has a manifest entry to <root>/<entry.path()>.
/// Returns the number of files written.
std::size_t write_images(std::span<const EncodedImage> images, const DatasetManifest& manifest,
                         const std::filesystem::path& root);

}  // namespace flowimg
