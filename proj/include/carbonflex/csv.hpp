#pragma once

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "carbonflex/error.hpp"

namespace carbonflex::csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

/// Reads a headed CSV. Blank lines and lines starting with '#' are skipped.
/// The header must match `expected` column for column.
inline std::vector<Row> read(const std::string& path, const std::vector<std::string>& expected) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split(t);
    if (!header_seen) {
      if (fields != expected) {
        std::string want;
        for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected header '" + want + "'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != expected.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(expected.size()) +
                       " fields, got " + std::to_string(fields.size()));
    }
    rows.push_back({lineno, std::move(fields)});
  }
  if (!header_seen) throw ParseError(path + ": missing header");
  return rows;
}

inline double to_double(const std::string& s, const std::string& where) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ParseError(where + ": not a number: '" + s + "'");
  return v;
}

inline long long to_int(const std::string& s, const std::string& where) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ParseError(where + ": not an integer: '" + s + "'");
  return v;
}

}  // namespace carbonflex::csv
