#pragma once

// Minimal writer for canonical JSON text: caller controls key order, no
// insignificant whitespace, doubles in shortest round-trip form.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "dsm/core/error.hpp"

namespace dsm::cjson {

inline void append_string(std::string &out, std::string_view s) {
  out += '"';
  for (unsigned char c : s) {
    switch (c) {
    case '"': out += "\\\""; break;
    case '\\': out += "\\\\"; break;
    case '\b': out += "\\b"; break;
    case '\f': out += "\\f"; break;
    case '\n': out += "\\n"; break;
    case '\r': out += "\\r"; break;
    case '\t': out += "\\t"; break;
    default:
      if (c < 0x20) {
        static constexpr char hex[] = "0123456789abcdef";
        out += "\\u00";
        out += hex[c >> 4];
        out += hex[c & 0xf];
      } else {
        out += static_cast<char>(c);
      }
    }
  }
  out += '"';
}

inline void append_number(std::string &out, double v) {
  if (!std::isfinite(v))
    throw Error(Errc::invariant_violation, "number", "non-finite value");
  if (v == 0.0 && std::signbit(v)) {
    out += "-0.0"; // "-0" would parse back as integer zero
    return;
  }
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  out.append(buf.data(), end);
}

inline void append_number(std::string &out, std::int64_t v) {
  std::array<char, 24> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  out.append(buf.data(), end);
}

inline void append_number(std::string &out, std::uint64_t v) {
  std::array<char, 24> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  out.append(buf.data(), end);
}

inline void append_key(std::string &out, std::string_view key) {
  append_string(out, key);
  out += ':';
}

inline void append_array(std::string &out, std::span<const double> values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i)
      out += ',';
    append_number(out, values[i]);
  }
  out += ']';
}

/// Object with keys in std::map (lexicographic) order.
inline void append_object(std::string &out,
                          const std::map<std::string, double> &values) {
  out += '{';
  bool first = true;
  for (const auto &[k, v] : values) {
    if (!first)
      out += ',';
    first = false;
    append_key(out, k);
    append_number(out, v);
  }
  out += '}';
}

inline void append_object(std::string &out,
                          const std::map<std::string, std::string> &values) {
  out += '{';
  bool first = true;
  for (const auto &[k, v] : values) {
    if (!first)
      out += ',';
    first = false;
    append_key(out, k);
    append_string(out, v);
  }
  out += '}';
}

} // namespace dsm::cjson
