#include "sapg/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sapg/error.hpp"

namespace sapg::io {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw Error(ErrorKind::io, "csv: missing column '" + name + "'");
}

std::vector<double> CsvTable::column_values(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out << '#';
  for (const auto& [k, v] : table.metadata) out << ' ' << k << '=' << v;
  out << '\n';
  for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << table.columns[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path.string() + "'");
}

namespace {

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error(ErrorKind::io, "csv: bad number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> parts;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(item);
  return parts;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  CsvTable table;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::stringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq != std::string::npos) table.metadata.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      }
      continue;
    }
    if (!header) {
      table.columns = split(line);
      header = true;
      continue;
    }
    const auto parts = split(line);
    if (parts.size() != table.columns.size()) throw Error(ErrorKind::io, "csv: ragged row in '" + path.string() + "'");
    std::vector<double> row;
    row.reserve(parts.size());
    for (const auto& p : parts) row.push_back(parse_double(p));
    table.rows.push_back(std::move(row));
  }
  if (!header) throw Error(ErrorKind::io, "csv: no header in '" + path.string() + "'");
  return table;
}

}  // namespace sapg::io
