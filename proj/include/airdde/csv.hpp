#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace airdde::csv {

/// Plain comma-separated rows; no quoting. Leading/trailing blanks trimmed.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  /// Column index of `name`, or throws naming the file.
  std::size_t column(std::string_view name, const std::string& source) const;
  bool has_column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
std::vector<std::string> split_line(std::string_view line);
double to_double(const std::string& field, const std::string& context);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

}  // namespace airdde::csv
