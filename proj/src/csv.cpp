// SPDX-License-Identifier: Apache-2.0

#include "flowimg/csv.hpp"

namespace flowimg {

bool CsvReader::next(std::vector<std::string>& fields) {
    fields.clear();
    if (!std::getline(in_, line_)) return false;

    std::string field;
    bool quoted = false;
    for (;;) {
        for (std::size_t i = 0; i < line_.size(); ++i) {
            const char c = line_[i];
            if (quoted) {
                if (c == '"') {
                    if (i + 1 < line_.size() && line_[i + 1] == '"') {
                        field.push_back('"');
                        ++i;
                    } else {
                        quoted = false;
                    }
                } else {
                    field.push_back(c);
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                fields.push_back(std::move(field));
                field.clear();
            } else if (c == '\r' && i + 1 == line_.size()) {
                // CRLF line ending
            } else {
                field.push_back(c);
            }
        }
        if (!quoted) break;
        // Quoted field continues on the next physical line.
        if (!std::getline(in_, line_)) break;
        field.push_back('\n');
    }
    fields.push_back(std::move(field));
    ++records_;
    return true;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace flowimg
