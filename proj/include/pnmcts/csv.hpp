#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pnmcts {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when missing
};

/// Minimal comma-separated output: plain cells, one header row. Throws when a
/// cell contains a comma or newline.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

CsvTable read_csv(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace pnmcts
