#pragma once

#include <charconv>
#include <string>

namespace cmcdrop {

// Shortest decimal string that round-trips to the same double; keeps CSV
// output byte-stable across runs and platforms.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace cmcdrop
