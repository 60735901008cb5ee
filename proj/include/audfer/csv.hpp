#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "audfer/domain.hpp"
#include "audfer/error.hpp"

namespace audfer::csv {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(detail::trim(line.substr(start)));
      return out;
    }
    out.push_back(detail::trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

/// Reads one line, stripping a trailing carriage return. Returns false at EOF.
inline bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline std::optional<double> try_parse_double(std::string_view s) {
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> try_parse_int(std::string_view s) {
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline double parse_double(std::string_view s, std::string_view context) {
  if (auto v = try_parse_double(s)) return *v;
  throw ContractError("non-numeric value \"" + std::string(s) + "\" in " + std::string(context));
}

inline long long parse_int(std::string_view s, std::string_view context) {
  if (auto v = try_parse_int(s)) return *v;
  throw ContractError("non-integer value \"" + std::string(s) + "\" in " + std::string(context));
}

/// Shortest form that reads back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return std::to_string(v);
  return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open \"" + path + "\" for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  return out;
}

/// Parses "key=value" pairs from a metadata line of the form "# tag k=v k=v".
inline std::vector<std::pair<std::string, std::string>> parse_metadata(std::string_view line) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto tok : split(line, ' ')) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace_back(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
  }
  return out;
}

inline std::optional<std::string> find_meta(const std::vector<std::pair<std::string, std::string>>& meta,
                                            std::string_view key) {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return std::nullopt;
}

}  // namespace audfer::csv
