#pragma once

#include <string>
#include <utility>
#include <vector>

namespace tvmagi {

// comma-separated text with one header row; cells are raw strings, empty
// meaning missing. No quoting: cells must not contain commas or newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// shortest decimal string that parses back to exactly the same double
std::string format_double(double v);
double parse_double(const std::string& cell);

// structured key-value results file, one `key = value` line each
using KvPairs = std::vector<std::pair<std::string, std::string>>;
void write_kv(const std::string& path, const KvPairs& pairs);
KvPairs read_kv(const std::string& path);

}  // namespace tvmagi
