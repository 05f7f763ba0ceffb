#pragma once

// Locale-independent CSV for experiment results. Cells never contain
// commas, quotes or newlines, so no quoting is needed.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pnmkv {

// 6 significant digits; scientific notation at or beyond 1e+7 / below 1e-7.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  char buf[64];
  const double mag = std::fabs(x);
  if (mag >= 1e7 || mag < 1e-7) {
    auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::scientific, 5);
    return std::string(buf, res.ptr);
  }
  const int exponent = static_cast<int>(std::floor(std::log10(mag)));
  const int decimals = std::max(0, 5 - exponent);
  auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed, decimals);
  std::string s(buf, res.ptr);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  return s;
}

inline std::string format_number(std::uint64_t x) { return std::to_string(x); }

// Strips characters that would break the unquoted cell format.
inline std::string csv_cell(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') c = ';';
  return s;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

inline void write_csv(std::ostream& os, const CsvTable& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

inline std::string to_csv_string(const CsvTable& t) {
  std::ostringstream os;
  write_csv(os, t);
  return os.str();
}

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw std::runtime_error("read_csv: row width does not match header");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace pnmkv
