// Small text helpers shared by the file formats.
#ifndef MPCIL_SRC_TEXT_IO_HPP_
#define MPCIL_SRC_TEXT_IO_HPP_

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mpcil/errors.hpp"

namespace mpcil::text {

// Shortest representation that parses back to the same double.
inline std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double ParseDouble(const std::string& s, int line_no) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw FormatError("cannot parse number '" + s + "'", line_no);
  }
  return v;
}

inline long ParseInt(const std::string& s, int line_no) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("cannot parse integer '" + s + "'", line_no);
  }
  return v;
}

inline std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(Trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::pair<std::string, std::string> SplitKeyValue(
    const std::string& line, int line_no) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw FormatError("expected key=value", line_no);
  }
  return {Trim(line.substr(0, eq)), Trim(line.substr(eq + 1))};
}

inline std::string ReadFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'", 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void WriteFile(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

}  // namespace mpcil::text

#endif  // MPCIL_SRC_TEXT_IO_HPP_
