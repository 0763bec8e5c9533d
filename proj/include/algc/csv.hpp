#pragma once

#include "algc/types.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

namespace algc {

// Locale-independent formatting, 12 significant digits, '.' decimal point.
inline std::string format_number(double v, int digits = 12) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  void header(const std::vector<std::string>& names) {
    for (size_t i = 0; i < names.size(); ++i) {
      if (i) out_ << ',';
      out_ << names[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      out_ << format_number(values[i]);
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw NumericalError("cannot open for writing: " + path);
    f << out_.str();
  }

 private:
  std::ostringstream out_;
};

}  // namespace algc
