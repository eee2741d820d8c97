// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace flowimg {

/// Broad failure category; the CLI maps these onto process exit codes.
enum class ErrorKind {
    config = 1,   // bad flags, config files, unusable paths
    data = 2,     // malformed or missing input data
    internal = 3  // logic errors and invariant violations
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error config_error(const std::string& what) { return Error(ErrorKind::config, what); }
inline Error data_error(const std::string& what) { return Error(ErrorKind::data, what); }
inline Error internal_error(const std::string& what) { return Error(ErrorKind::internal, what); }

}  // namespace flowimg
