#include "tvmagi/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw IoError(path + ": empty file");
  CsvTable table;
  table.header = split_line(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> cells = split_line(lines[i]);
    if (cells.size() != table.header.size())
      throw IoError(path + ": row " + std::to_string(i + 1) + " has " +
                    std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(table.header.size()));
    table.rows.push_back(std::move(cells));
  }
  return table;
}

void write_csv(const std::string& path, const CsvTable& table) {
  if (table.header.empty()) throw ConfigError("write_csv: empty header");
  std::ostringstream out;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    out << (j ? "," : "") << table.header[j];
  out << '\n';
  for (const std::vector<std::string>& row : table.rows) {
    if (row.size() != table.header.size())
      throw ConfigError("write_csv: row width does not match header");
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write " + path);
  file << out.str();
  if (!file) throw IoError("failed writing " + path);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell) {
  if (cell == "nan") return std::nan("");
  if (cell == "inf") return std::numeric_limits<double>::infinity();
  if (cell == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw IoError("not a number: '" + cell + "'");
  return v;
}

void write_kv(const std::string& path, const KvPairs& pairs) {
  std::ostringstream out;
  for (const auto& [key, value] : pairs) out << key << " = " << value << '\n';
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write " + path);
  file << out.str();
  if (!file) throw IoError("failed writing " + path);
}

KvPairs read_kv(const std::string& path) {
  KvPairs pairs;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    std::size_t eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError(path + ": malformed line '" + line + "'");
    pairs.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return pairs;
}

}  // namespace tvmagi
