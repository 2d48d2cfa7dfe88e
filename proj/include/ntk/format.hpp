#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace ntk {

// Shortest round-trippable decimal form; used for every CSV payload so
// identical runs are bitwise identical.
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace ntk
