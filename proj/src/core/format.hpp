#ifndef SFV_FORMAT_HPP
#define SFV_FORMAT_HPP

#include <charconv>
#include <cmath>
#include <string>

namespace sfv::detail {

// Shortest round-trip decimal form; "nan"/"inf" spelled out for CSV readers.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace sfv::detail

#endif  // SFV_FORMAT_HPP
