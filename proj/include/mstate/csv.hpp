#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace mstate::csv {

/// Header row plus raw (trimmed) cells. No quoting support; none of the
/// pipeline's schemas need it.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  /// Index of `name` in the header, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// Throws std::runtime_error if the file cannot be opened or is empty.
/// Blank lines are skipped; a UTF-8 BOM on the header is stripped.
Table read(const std::filesystem::path& path);

std::vector<std::string> split_line(std::string_view line);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

/// Parses a full cell as a double; nullopt for empty or malformed input.
std::optional<double> parse_double(std::string_view cell);

/// Writes a comma-joined row and a trailing newline.
void write_row(std::ostream& out, const std::vector<std::string>& cells);

}  // namespace mstate::csv
