// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <istream>
#include <string>
#include <vector>

namespace flowimg {

/// Streaming RFC 4180-style reader: comma separated, optional double-quoted
/// fields with "" escapes and embedded line breaks, CRLF or LF endings.
class CsvReader {
public:
    explicit CsvReader(std::istream& in) : in_(in) {}

    /// Reads the next record into `fields`. Returns false at end of input.
    bool next(std::vector<std::string>& fields);

    /// Number of records returned so far.
    std::size_t records() const noexcept { return records_; }

private:
    std::istream& in_;
    std::size_t records_ = 0;
    std::string line_;
};

/// Quotes a field when it contains a comma, quote or line break.
std::string csv_escape(const std::string& field);

}  // namespace flowimg
