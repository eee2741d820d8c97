// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "flowimg/csv.hpp"
#include "flowimg/feature_catalog.hpp"
#include "flowimg/ingest.hpp"

namespace flowimg::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("flowimg-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::vector<std::string> full_header() {
    std::ifstream in(fs::path(FLOWIMG_FIXTURE_DIR) / "cicddos2019_header.csv");
    CsvReader reader(in);
    std::vector<std::string> fields;
    reader.next(fields);
    return fields;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Header with the 60 retained catalog features plus Label, in canonical order.
inline std::vector<std::string> retained_header() {
    auto h = FeatureCatalog::cicddos2019().retained_names();
    h.push_back("Label");
    return h;
}

/// A record of `n` feature values all equal to `v`.
inline FlowRecord record_of(double v, const ClassLabel& label, std::size_t n = kRetainedFeatureCount) {
    FlowRecord r;
    r.values.assign(n, v);
    r.label = label;
    return r;
}

}  // namespace flowimg::testing
