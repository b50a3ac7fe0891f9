#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace compliant {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column; throws InvalidArgument when absent.
  std::size_t column(const std::string& name) const;
};

std::string csv_to_text(const CsvTable& table);
CsvTable csv_from_text(const std::string& text);

void write_csv(const CsvTable& table, const std::filesystem::path& path);
CsvTable read_csv(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file renamed into place.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace compliant
