#pragma once

#include <string>
#include <vector>

#include "dmlt/error.hpp"

namespace dmlt {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int64_t column(const std::string& name) const;  // -1 when absent
  double number(size_t row, int64_t col) const;   // MalformedCsv on bad cells
};

// Simple unquoted comma-separated values; a header row is required.
CsvTable readCsv(const std::string& path);
CsvTable parseCsv(const std::string& text);

double median(std::vector<double> values);  // MalformedCsv-free; asserts non-empty

}  // namespace dmlt
