#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

namespace bsm {

// Shortest round-trip decimal form; used wherever values must survive
// re-parsing exactly (matrix CSVs, JSON companions).
inline std::string format_exact(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Fixed-precision display form for table-style CSV columns.
inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  // avoid the "-0.00" artifact
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

inline std::string format_opt_fixed(const std::optional<double>& v, int decimals) {
  return v ? format_fixed(*v, decimals) : std::string();
}

inline std::string format_opt_exact(const std::optional<double>& v) {
  return v ? format_exact(*v) : std::string();
}

}  // namespace bsm
