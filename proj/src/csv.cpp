#include "cascade_bsde/csv.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cbsde {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(std::ostream& out, const std::vector<std::string>& header)
    : out_(out), width_(header.size()) {
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) throw std::logic_error("csv row width differs from header");
  for (std::size_t j = 0; j < cells.size(); ++j) {
    if (j) out_ << ',';
    out_ << cells[j];
  }
  out_ << '\n';
}

void CsvWriter::row(std::initializer_list<double> values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(fmt(v));
  row(cells);
}

std::string join(const std::vector<int>& values, char sep) {
  std::string out;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (j) out += sep;
    out += std::to_string(values[j]);
  }
  return out;
}

}  // namespace cbsde
