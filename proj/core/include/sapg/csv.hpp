#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sapg/image_io.hpp"

namespace sapg::io {

/// Round-trippable decimal representation of a double.
std::string format_double(double value);

/// Column-oriented CSV table. Files start with one "# key=value ..." metadata line.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  Metadata metadata;

  std::size_t column(const std::string& name) const;
  std::vector<double> column_values(const std::string& name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace sapg::io
