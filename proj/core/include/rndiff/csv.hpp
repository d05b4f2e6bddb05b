#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace rndiff {

/// Minimal CSV helpers for the plain comma-separated files this project
/// exchanges (no quoting or embedded commas anywhere in the schemas).
std::vector<std::string> split_csv_line(const std::string& line);

/// All rows of a CSV file, split into fields. Empty trailing line ignored.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

/// Round-trip exact decimal rendering of a double (%.17g, trimmed).
std::string format_g17(double v);

/// Fixed-precision rendering, e.g. format_fixed(0.9164, 3) -> "0.916".
std::string format_fixed(double v, int digits);

}  // namespace rndiff
