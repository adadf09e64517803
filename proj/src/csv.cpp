#include "dmlt/csv.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dmlt {

int64_t CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int64_t>(i);
  return -1;
}

double CsvTable::number(size_t row, int64_t col) const {
  if (row >= rows.size() || col < 0 || static_cast<size_t>(col) >= rows[row].size())
    raise(ErrorCode::MalformedCsv, "cell out of range");
  try {
    size_t used = 0;
    double v = std::stod(rows[row][static_cast<size_t>(col)], &used);
    if (used != rows[row][static_cast<size_t>(col)].size())
      raise(ErrorCode::MalformedCsv, "non-numeric cell '" + rows[row][static_cast<size_t>(col)] + "'");
    return v;
  } catch (const std::invalid_argument&) {
    raise(ErrorCode::MalformedCsv, "non-numeric cell '" + rows[row][static_cast<size_t>(col)] + "'");
  } catch (const std::out_of_range&) {
    raise(ErrorCode::MalformedCsv, "numeric cell out of range");
  }
}

CsvTable parseCsv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!ls && line.back() == ',') cells.push_back("");
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != table.header.size())
        raise(ErrorCode::MalformedCsv, "row has " + std::to_string(cells.size()) +
                                           " cells, header has " + std::to_string(table.header.size()));
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) raise(ErrorCode::MalformedCsv, "missing header row");
  return table;
}

CsvTable readCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parseCsv(buffer.str());
}

double median(std::vector<double> values) {
  if (values.empty()) raise(ErrorCode::MalformedCsv, "median of no values");
  std::sort(values.begin(), values.end());
  size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace dmlt
