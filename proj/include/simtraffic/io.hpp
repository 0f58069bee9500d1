#pragma once

#include <string>

namespace simtraffic {

/// Shortest round-trip-safe rendering with 17 significant digits.
std::string format_real(double x);

/// Writes `content` to `path` via a temporary sibling file and rename.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace simtraffic
