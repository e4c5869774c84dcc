// SPDX-License-Identifier: Apache-2.0
//
// Small file helpers shared by the on-disk formats.

#pragma once

#include <string>

namespace ghnn::io {

/// Shortest decimal rendering with 17 significant digits ("%.17g").
std::string format_double(double v);
/// Parses a number written by format_double (accepts inf/nan tokens).
double parse_double(const std::string& token);

/// Writes to `path` via a temporary file in the same directory and a rename.
void atomic_write(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace ghnn::io
