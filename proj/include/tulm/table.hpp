#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tulm {

// Delimiter-separated text table with a header row. Fields may be quoted with
// double quotes; embedded quotes are doubled.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  // Index of `name` in the header, or -1.
  int column(std::string_view name) const;
  // Index of `name`; throws DataError naming `context` if absent.
  int require_column(std::string_view name, std::string_view context) const;
};

Table read_table(const std::string& path, char delimiter = ',');
Table parse_table(std::istream& in, char delimiter = ',', const std::string& source = "<stream>");

std::vector<std::string> split_fields(std::string_view line, char delimiter);

// Round-trip-exact decimal formatting for doubles.
std::string format_double(double v);

void write_row(std::ostream& out, const std::vector<std::string>& fields, char delimiter = ',');

}  // namespace tulm
