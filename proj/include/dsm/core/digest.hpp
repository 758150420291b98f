#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "dsm/core/error.hpp"

namespace dsm {

namespace detail {

template <std::size_t N>
std::array<unsigned char, N> evp_digest(const EVP_MD *md, std::string_view data) {
  std::array<unsigned char, N> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, md, nullptr) != 1 || len != N)
    throw Error(Errc::io_error, "digest", "EVP_Digest failed");
  return out;
}

} // namespace detail

template <std::size_t N>
std::string to_hex(const std::array<unsigned char, N> &bytes) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  s.reserve(2 * N);
  for (unsigned char b : bytes) {
    s += hex[b >> 4];
    s += hex[b & 0xf];
  }
  return s;
}

inline std::string sha256_hex(std::string_view data) {
  return to_hex(detail::evp_digest<32>(EVP_sha256(), data));
}

inline std::array<unsigned char, 20> sha1(std::string_view data) {
  return detail::evp_digest<20>(EVP_sha1(), data);
}

inline std::string base64(const unsigned char *data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  int len = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

} // namespace dsm
