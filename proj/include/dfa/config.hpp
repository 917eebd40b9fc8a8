#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dfa/errors.hpp"

namespace dfa {

// "4/255" is parsed as an exact rational before conversion; plain decimals
// pass through strtod.
inline double parse_fraction(const std::string& s) {
  if (s.empty()) throw ConfigError("empty numeric value");
  const auto slash = s.find('/');
  if (slash == std::string::npos) {
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse number '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError("cannot parse number '" + s + "'");
    return v;
  }
  const std::string num = s.substr(0, slash), den = s.substr(slash + 1);
  std::size_t p1 = 0, p2 = 0;
  long long n, d;
  try {
    n = std::stoll(num, &p1);
    d = std::stoll(den, &p2);
  } catch (const std::exception&) {
    throw ConfigError("cannot parse fraction '" + s + "'");
  }
  if (p1 != num.size() || p2 != den.size() || d == 0)
    throw ConfigError("cannot parse fraction '" + s + "'");
  return static_cast<double>(n) / static_cast<double>(d);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string format_double_key(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Stable digest of a canonicalized key-value map; stamps every artifact a run
// produces.
inline std::string config_hash(std::vector<std::pair<std::string, std::string>> kv) {
  std::sort(kv.begin(), kv.end());
  std::string canon;
  for (const auto& [k, v] : kv) {
    canon += k;
    canon += '=';
    canon += v;
    canon += '\n';
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

}  // namespace dfa
