#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace curvecal {

// Minimal comma-separated tables. Lines beginning with '#' are comments and
// are preserved separately so headers can carry format notes.
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const;  // -1 if absent
};

CsvTable parse_csv(std::string_view text, const std::string& source = "<memory>");
CsvTable read_csv(const std::string& path);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace curvecal
