#pragma once

// MQTT 3.1.1 framing for the packet subset the gateway speaks:
// CONNECT/CONNACK, PUBLISH/PUBACK (QoS 0/1), SUBSCRIBE/SUBACK,
// UNSUBSCRIBE/UNSUBACK, PINGREQ/PINGRESP, DISCONNECT.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "dsm/core/error.hpp"

namespace dsm::mqtt {

enum class PacketType : std::uint8_t {
  connect = 1,
  connack = 2,
  publish = 3,
  puback = 4,
  subscribe = 8,
  suback = 9,
  unsubscribe = 10,
  unsuback = 11,
  pingreq = 12,
  pingresp = 13,
  disconnect = 14,
};

inline constexpr std::size_t max_payload_bytes = 256 * 1024;
inline constexpr std::uint32_t max_remaining_length = 268'435'455;

struct Connect {
  std::string client_id;
  std::uint16_t keep_alive = 60;
  bool clean_session = true;
  std::optional<std::string> username; // accepted, ignored
  std::optional<std::string> password;
  bool operator==(const Connect &) const = default;
};

struct Connack {
  bool session_present = false;
  std::uint8_t return_code = 0;
  bool operator==(const Connack &) const = default;
};

struct Publish {
  std::string topic;
  std::string payload;
  std::uint8_t qos = 0;
  bool dup = false;
  bool retain = false;
  std::uint16_t packet_id = 0; // only when qos > 0
  bool operator==(const Publish &) const = default;
};

struct Puback {
  std::uint16_t packet_id = 0;
  bool operator==(const Puback &) const = default;
};

struct Subscribe {
  std::uint16_t packet_id = 0;
  std::vector<std::pair<std::string, std::uint8_t>> topics;
  bool operator==(const Subscribe &) const = default;
};

struct Suback {
  std::uint16_t packet_id = 0;
  std::vector<std::uint8_t> return_codes; // 0x00, 0x01 or 0x80
  bool operator==(const Suback &) const = default;
};

struct Unsubscribe {
  std::uint16_t packet_id = 0;
  std::vector<std::string> topics;
  bool operator==(const Unsubscribe &) const = default;
};

struct Unsuback {
  std::uint16_t packet_id = 0;
  bool operator==(const Unsuback &) const = default;
};

struct Pingreq {
  bool operator==(const Pingreq &) const = default;
};
struct Pingresp {
  bool operator==(const Pingresp &) const = default;
};
struct Disconnect {
  bool operator==(const Disconnect &) const = default;
};

using Packet = std::variant<Connect, Connack, Publish, Puback, Subscribe, Suback, Unsubscribe,
                            Unsuback, Pingreq, Pingresp, Disconnect>;

namespace detail {

inline void put_u16(std::string &out, std::uint16_t v) {
  out += static_cast<char>(v >> 8);
  out += static_cast<char>(v & 0xff);
}

inline void put_str(std::string &out, std::string_view s) {
  if (s.size() > 0xffff)
    throw Error(Errc::protocol_error, "string", "longer than 65535 bytes");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out += s;
}

inline void put_remaining_length(std::string &out, std::size_t n) {
  if (n > max_remaining_length)
    throw Error(Errc::protocol_error, "remaining_length", "too large");
  do {
    std::uint8_t byte = n % 128;
    n /= 128;
    if (n > 0)
      byte |= 0x80;
    out += static_cast<char>(byte);
  } while (n > 0);
}

inline std::size_t remaining_length_size(std::size_t n) {
  std::size_t k = 1;
  while (n >= 128) {
    n /= 128;
    ++k;
  }
  return k;
}

inline std::string frame(std::uint8_t first, const std::string &body) {
  std::string out;
  out.reserve(body.size() + 5);
  out += static_cast<char>(first);
  put_remaining_length(out, body.size());
  out += body;
  return out;
}

class Cursor {
public:
  explicit Cursor(std::string_view s) : s_(s) {}

  std::uint8_t u8(const char *what) {
    need(1, what);
    return static_cast<std::uint8_t>(s_[pos_++]);
  }
  std::uint16_t u16(const char *what) {
    need(2, what);
    auto hi = static_cast<std::uint8_t>(s_[pos_]);
    auto lo = static_cast<std::uint8_t>(s_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>(hi << 8 | lo);
  }
  std::string str(const char *what) {
    auto n = u16(what);
    need(n, what);
    std::string out(s_.substr(pos_, n));
    pos_ += n;
    if (out.find('\0') != std::string::npos)
      throw Error(Errc::protocol_error, what, "string contains U+0000");
    return out;
  }
  std::string rest() {
    std::string out(s_.substr(pos_));
    pos_ = s_.size();
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

private:
  void need(std::size_t n, const char *what) const {
    if (s_.size() - pos_ < n)
      throw Error(Errc::protocol_error, what, "truncated packet");
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

inline void expect_flags(std::uint8_t flags, std::uint8_t want, const char *what) {
  if (flags != want)
    throw Error(Errc::protocol_error, what, "reserved fixed-header flags");
}

} // namespace detail

inline std::string encode(const Connect &p) {
  std::string b;
  detail::put_str(b, "MQTT");
  b += static_cast<char>(4);
  std::uint8_t flags = 0;
  if (p.clean_session)
    flags |= 0x02;
  if (p.password)
    flags |= 0x40;
  if (p.username)
    flags |= 0x80;
  b += static_cast<char>(flags);
  detail::put_u16(b, p.keep_alive);
  detail::put_str(b, p.client_id);
  if (p.username)
    detail::put_str(b, *p.username);
  if (p.password)
    detail::put_str(b, *p.password);
  return detail::frame(0x10, b);
}

inline std::string encode(const Connack &p) {
  std::string b;
  b += static_cast<char>(p.session_present ? 1 : 0);
  b += static_cast<char>(p.return_code);
  return detail::frame(0x20, b);
}

inline std::string encode(const Publish &p) {
  if (p.qos > 1)
    throw Error(Errc::protocol_error, "qos", "only QoS 0 and 1 are supported");
  if (p.payload.size() > max_payload_bytes)
    throw Error(Errc::protocol_error, "payload", "exceeds 256 KiB");
  std::string b;
  detail::put_str(b, p.topic);
  if (p.qos > 0)
    detail::put_u16(b, p.packet_id);
  b += p.payload;
  std::uint8_t first = 0x30 | (p.dup ? 0x08 : 0) | (p.qos << 1) | (p.retain ? 1 : 0);
  return detail::frame(first, b);
}

/// Size in bytes of the PUBLISH frame carrying this topic and payload.
inline std::size_t publish_frame_size(std::size_t topic_len, std::size_t payload_len, int qos) {
  std::size_t body = 2 + topic_len + (qos > 0 ? 2 : 0) + payload_len;
  return 1 + detail::remaining_length_size(body) + body;
}

inline std::string encode(const Puback &p) {
  std::string b;
  detail::put_u16(b, p.packet_id);
  return detail::frame(0x40, b);
}

inline std::string encode(const Subscribe &p) {
  std::string b;
  detail::put_u16(b, p.packet_id);
  for (const auto &[f, q] : p.topics) {
    detail::put_str(b, f);
    b += static_cast<char>(q);
  }
  return detail::frame(0x82, b);
}

inline std::string encode(const Suback &p) {
  std::string b;
  detail::put_u16(b, p.packet_id);
  for (auto rc : p.return_codes)
    b += static_cast<char>(rc);
  return detail::frame(0x90, b);
}

inline std::string encode(const Unsubscribe &p) {
  std::string b;
  detail::put_u16(b, p.packet_id);
  for (const auto &f : p.topics)
    detail::put_str(b, f);
  return detail::frame(0xA2, b);
}

inline std::string encode(const Unsuback &p) {
  std::string b;
  detail::put_u16(b, p.packet_id);
  return detail::frame(0xB0, b);
}

inline std::string encode(const Pingreq &) { return std::string("\xC0\x00", 2); }
inline std::string encode(const Pingresp &) { return std::string("\xD0\x00", 2); }
inline std::string encode(const Disconnect &) { return std::string("\xE0\x00", 2); }

inline std::string encode(const Packet &p) {
  return std::visit([](const auto &v) { return encode(v); }, p);
}

/// Decodes one packet from its fixed-header byte and body.
inline Packet decode_body(std::uint8_t first, std::string_view body) {
  const auto type = first >> 4;
  const std::uint8_t flags = first & 0x0f;
  detail::Cursor c(body);
  auto finish = [&](Packet p, const char *what) {
    if (!c.done())
      throw Error(Errc::protocol_error, what, "trailing bytes");
    return p;
  };
  switch (type) {
  case 1: {
    detail::expect_flags(flags, 0, "connect");
    Connect p;
    if (c.str("protocol_name") != "MQTT")
      throw Error(Errc::protocol_error, "protocol_name", "expected MQTT");
    if (c.u8("protocol_level") != 4)
      throw Error(Errc::protocol_error, "protocol_level", "only 3.1.1 (level 4)");
    auto cf = c.u8("connect_flags");
    if (cf & 0x01)
      throw Error(Errc::protocol_error, "connect_flags", "reserved bit set");
    if (cf & 0x04)
      throw Error(Errc::protocol_error, "will", "will messages are not supported");
    if (cf & 0x38)
      throw Error(Errc::protocol_error, "connect_flags", "will qos/retain without will");
    if ((cf & 0x40) && !(cf & 0x80))
      throw Error(Errc::protocol_error, "connect_flags", "password without username");
    p.clean_session = cf & 0x02;
    p.keep_alive = c.u16("keep_alive");
    p.client_id = c.str("client_id");
    if (cf & 0x80)
      p.username = c.str("username");
    if (cf & 0x40)
      p.password = c.str("password");
    return finish(p, "connect");
  }
  case 2: {
    detail::expect_flags(flags, 0, "connack");
    Connack p;
    auto ack = c.u8("connack_flags");
    if (ack & 0xfe)
      throw Error(Errc::protocol_error, "connack_flags", "reserved bits set");
    p.session_present = ack & 1;
    p.return_code = c.u8("return_code");
    return finish(p, "connack");
  }
  case 3: {
    Publish p;
    p.dup = flags & 0x08;
    p.qos = (flags >> 1) & 0x03;
    p.retain = flags & 0x01;
    if (p.qos > 1)
      throw Error(Errc::protocol_error, "qos", "only QoS 0 and 1 are supported");
    p.topic = c.str("topic");
    if (p.qos > 0) {
      p.packet_id = c.u16("packet_id");
      if (p.packet_id == 0)
        throw Error(Errc::protocol_error, "packet_id", "must be nonzero");
    }
    p.payload = c.rest();
    if (p.payload.size() > max_payload_bytes)
      throw Error(Errc::protocol_error, "payload", "exceeds 256 KiB");
    return p;
  }
  case 4: {
    detail::expect_flags(flags, 0, "puback");
    Puback p{c.u16("packet_id")};
    return finish(p, "puback");
  }
  case 8: {
    detail::expect_flags(flags, 2, "subscribe");
    Subscribe p;
    p.packet_id = c.u16("packet_id");
    while (!c.done()) {
      auto f = c.str("filter");
      auto q = c.u8("requested_qos");
      if (q > 2)
        throw Error(Errc::protocol_error, "requested_qos", "reserved bits set");
      p.topics.emplace_back(std::move(f), q);
    }
    if (p.topics.empty())
      throw Error(Errc::protocol_error, "subscribe", "no topic filters");
    return p;
  }
  case 9: {
    detail::expect_flags(flags, 0, "suback");
    Suback p;
    p.packet_id = c.u16("packet_id");
    while (!c.done())
      p.return_codes.push_back(c.u8("return_code"));
    return p;
  }
  case 10: {
    detail::expect_flags(flags, 2, "unsubscribe");
    Unsubscribe p;
    p.packet_id = c.u16("packet_id");
    while (!c.done())
      p.topics.push_back(c.str("filter"));
    if (p.topics.empty())
      throw Error(Errc::protocol_error, "unsubscribe", "no topic filters");
    return p;
  }
  case 11: {
    detail::expect_flags(flags, 0, "unsuback");
    Unsuback p{c.u16("packet_id")};
    return finish(p, "unsuback");
  }
  case 12:
    detail::expect_flags(flags, 0, "pingreq");
    return finish(Pingreq{}, "pingreq");
  case 13:
    detail::expect_flags(flags, 0, "pingresp");
    return finish(Pingresp{}, "pingresp");
  case 14:
    detail::expect_flags(flags, 0, "disconnect");
    return finish(Disconnect{}, "disconnect");
  default:
    throw Error(Errc::protocol_error, "packet_type", "unsupported type " + std::to_string(type));
  }
}

/// Incremental frame splitter for a byte stream.
class FrameReader {
public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  /// Next complete packet, or nullopt if more bytes are needed.
  std::optional<Packet> next() {
    if (buf_.empty())
      return std::nullopt;
    std::size_t len = 0;
    std::size_t mult = 1;
    std::size_t i = 1;
    while (true) {
      if (i >= buf_.size())
        return std::nullopt;
      if (i > 4)
        throw Error(Errc::protocol_error, "remaining_length", "more than 4 bytes");
      auto b = static_cast<std::uint8_t>(buf_[i]);
      len += (b & 0x7f) * mult;
      mult *= 128;
      ++i;
      if (!(b & 0x80))
        break;
    }
    if (len > max_payload_bytes + 65536 + 4)
      throw Error(Errc::protocol_error, "payload", "exceeds 256 KiB");
    if (buf_.size() < i + len)
      return std::nullopt;
    auto first = static_cast<std::uint8_t>(buf_[0]);
    auto pkt = decode_body(first, std::string_view(buf_).substr(i, len));
    buf_.erase(0, i + len);
    return pkt;
  }

  std::size_t buffered() const { return buf_.size(); }

private:
  std::string buf_;
};

} // namespace dsm::mqtt
