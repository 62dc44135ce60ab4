#pragma once

#include <string>
#include <vector>

namespace utrcaf {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Comma-separated numeric table with one header line. Ragged rows, empty or
// non-numeric cells raise ParseError naming the 1-based line.
CsvTable parse_numeric_csv(const std::string& text, const std::string& source = "csv");

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace utrcaf
