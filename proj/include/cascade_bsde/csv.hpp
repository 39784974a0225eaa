#pragma once

#include <initializer_list>
#include <ostream>
#include <string>
#include <vector>

namespace cbsde {

// 17 significant digits, '.' decimal separator.
std::string fmt(double v);

// Header row first, then rows; every line ends with '\n'.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void row(std::initializer_list<double> values);

 private:
  std::ostream& out_;
  std::size_t width_;
};

std::string join(const std::vector<int>& values, char sep);

}  // namespace cbsde
