#pragma once

// Minimal RFC 6455 text-frame WebSocket server and client.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dsm/core/digest.hpp"
#include "dsm/net/socket.hpp"

namespace dsm::net {

namespace ws {

inline constexpr std::string_view guid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

inline std::string accept_key(std::string_view key) {
  auto h = sha1(std::string(key) + std::string(guid));
  return base64(h.data(), h.size());
}

enum Opcode : std::uint8_t { continuation = 0, text = 1, binary = 2, close = 8, ping = 9, pong = 10 };

struct Frame {
  bool fin = true;
  std::uint8_t opcode = text;
  std::string payload;
};

inline std::string encode_frame(std::uint8_t opcode, std::string_view payload, bool mask,
                                std::uint32_t mask_key = 0) {
  std::string out;
  out += static_cast<char>(0x80 | opcode);
  const std::uint8_t mbit = mask ? 0x80 : 0;
  const auto n = payload.size();
  if (n < 126) {
    out += static_cast<char>(mbit | n);
  } else if (n <= 0xFFFF) {
    out += static_cast<char>(mbit | 126);
    out += static_cast<char>(n >> 8);
    out += static_cast<char>(n & 0xFF);
  } else {
    out += static_cast<char>(mbit | 127);
    for (int i = 7; i >= 0; --i)
      out += static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF);
  }
  if (!mask)
    return out + std::string(payload);
  unsigned char k[4] = {static_cast<unsigned char>(mask_key >> 24), static_cast<unsigned char>(mask_key >> 16),
                        static_cast<unsigned char>(mask_key >> 8), static_cast<unsigned char>(mask_key)};
  out.append(reinterpret_cast<const char *>(k), 4);
  for (std::size_t i = 0; i < n; ++i)
    out += static_cast<char>(payload[i] ^ k[i % 4]);
  return out;
}

/// Splits a byte stream into frames. require_mask enforces the
/// client-to-server masking rule.
class FrameParser {
public:
  explicit FrameParser(bool require_mask, std::size_t max_payload = 1 << 20)
      : require_mask_(require_mask), max_(max_payload) {}

  void feed(std::string_view b) { buf_.append(b); }

  std::optional<Frame> next() {
    if (buf_.size() < 2)
      return std::nullopt;
    auto b0 = static_cast<std::uint8_t>(buf_[0]);
    auto b1 = static_cast<std::uint8_t>(buf_[1]);
    if (b0 & 0x70)
      throw Error(Errc::protocol_error, "websocket", "reserved bits set");
    bool masked = b1 & 0x80;
    if (masked != require_mask_)
      throw Error(Errc::protocol_error, "websocket", require_mask_ ? "unmasked client frame" : "masked server frame");
    std::uint64_t n = b1 & 0x7F;
    std::size_t pos = 2;
    if (n == 126) {
      if (buf_.size() < 4)
        return std::nullopt;
      n = (static_cast<std::uint8_t>(buf_[2]) << 8) | static_cast<std::uint8_t>(buf_[3]);
      pos = 4;
    } else if (n == 127) {
      if (buf_.size() < 10)
        return std::nullopt;
      n = 0;
      for (int i = 0; i < 8; ++i)
        n = (n << 8) | static_cast<std::uint8_t>(buf_[2 + i]);
      pos = 10;
    }
    if (n > max_)
      throw Error(Errc::protocol_error, "websocket", "frame too large");
    std::size_t need = pos + (masked ? 4 : 0) + n;
    if (buf_.size() < need)
      return std::nullopt;
    Frame f;
    f.fin = b0 & 0x80;
    f.opcode = b0 & 0x0F;
    f.payload = buf_.substr(pos + (masked ? 4 : 0), n);
    if (masked)
      for (std::size_t i = 0; i < n; ++i)
        f.payload[i] = static_cast<char>(f.payload[i] ^ buf_[pos + i % 4]);
    buf_.erase(0, need);
    return f;
  }

private:
  bool require_mask_;
  std::size_t max_;
  std::string buf_;
};

/// Reads an HTTP header block; leftover bytes past the blank line go to rest.
inline std::optional<std::string> read_head(const Socket &s, std::string &rest) {
  std::string buf;
  char tmp[1024];
  while (true) {
    auto end = buf.find("\r\n\r\n");
    if (end != std::string::npos) {
      rest = buf.substr(end + 4);
      return buf.substr(0, end + 2);
    }
    if (buf.size() > 16384)
      return std::nullopt;
    auto n = s.recv_some(tmp, sizeof tmp);
    if (n <= 0)
      return std::nullopt;
    buf.append(tmp, static_cast<std::size_t>(n));
  }
}

inline std::string lower(std::string s) {
  for (auto &c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::map<std::string, std::string> parse_headers(const std::string &head) {
  std::map<std::string, std::string> h;
  std::size_t pos = head.find("\r\n");
  while (pos != std::string::npos && pos + 2 < head.size()) {
    auto end = head.find("\r\n", pos + 2);
    auto line = head.substr(pos + 2, end - pos - 2);
    auto colon = line.find(':');
    if (colon != std::string::npos) {
      auto v = line.substr(colon + 1);
      while (!v.empty() && v.front() == ' ')
        v.erase(0, 1);
      h[lower(line.substr(0, colon))] = v;
    }
    pos = end;
  }
  return h;
}

} // namespace ws

/// Broadcasting text-frame server. Inbound text messages are handed to the
/// message callback on the connection's reader thread.
class WsServer {
public:
  using ClientId = std::uint64_t;
  using OnMessage = std::function<void(ClientId, const std::string &)>;

  WsServer(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}
  ~WsServer() { stop(); }

  void on_message(OnMessage f) {
    std::lock_guard lock(mu_);
    on_message_ = std::move(f);
  }

  void start() {
    listener_ = tcp_listen(host_, port_);
    port_ = bound_port(listener_);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false))
      return;
    listener_.shutdown();
    if (acceptor_.joinable())
      acceptor_.join();
    std::map<ClientId, std::shared_ptr<Conn>> conns;
    {
      std::lock_guard lock(mu_);
      conns.swap(conns_);
    }
    for (auto &[id, c] : conns)
      c->sock.shutdown();
    for (auto &[id, c] : conns)
      if (c->reader.joinable())
        c->reader.join();
    listener_.close();
  }

  std::uint16_t port() const { return port_; }

  /// Sends to every connected client; returns how many received it.
  std::size_t broadcast(const std::string &text) {
    auto frame = ws::encode_frame(ws::text, text, false);
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (auto &[id, c] : conns_) {
      if (c->open && c->sock.send_all(frame))
        ++n;
    }
    return n;
  }

  bool send_to(ClientId id, const std::string &text) {
    auto frame = ws::encode_frame(ws::text, text, false);
    std::lock_guard lock(mu_);
    auto it = conns_.find(id);
    return it != conns_.end() && it->second->open && it->second->sock.send_all(frame);
  }

  std::size_t clients() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto &[id, c] : conns_)
      n += c->open ? 1 : 0;
    return n;
  }

private:
  struct Conn {
    Socket sock;
    std::thread reader;
    std::atomic<bool> open{false};
  };

  void accept_loop() {
    while (running_) {
      auto s = tcp_accept(listener_);
      if (!s.valid())
        return;
      auto c = std::make_shared<Conn>();
      c->sock = std::move(s);
      std::lock_guard lock(mu_);
      ClientId id = ++next_id_;
      conns_[id] = c;
      c->reader = std::thread([this, id, c] { serve(id, *c); });
    }
  }

  void serve(ClientId id, Conn &c) {
    std::string rest;
    auto head = ws::read_head(c.sock, rest);
    if (!head)
      return finish(c);
    auto h = ws::parse_headers(*head);
    bool ok = head->rfind("GET ", 0) == 0 && ws::lower(h["upgrade"]) == "websocket" && h.count("sec-websocket-key");
    if (!ok) {
      c.sock.send_all("HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      return finish(c);
    }
    std::string resp = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                       "Sec-WebSocket-Accept: " +
                       ws::accept_key(h["sec-websocket-key"]) + "\r\n\r\n";
    {
      std::lock_guard lock(mu_); // keep broadcasts from interleaving with the handshake
      if (!c.sock.send_all(resp))
        return finish(c);
      c.open = true;
    }
    ws::FrameParser parser(true);
    parser.feed(rest);
    std::string partial;
    char buf[8192];
    while (true) {
      try {
        while (auto f = parser.next()) {
          if (f->opcode == ws::close) {
            send_raw(c, ws::encode_frame(ws::close, f->payload.substr(0, 2), false));
            return finish(c);
          }
          if (f->opcode == ws::ping) {
            send_raw(c, ws::encode_frame(ws::pong, f->payload, false));
            continue;
          }
          if (f->opcode == ws::text || f->opcode == ws::continuation) {
            partial += f->payload;
            if (f->fin) {
              OnMessage cb;
              {
                std::lock_guard lock(mu_);
                cb = on_message_;
              }
              if (cb)
                cb(id, partial);
              partial.clear();
            }
          }
        }
      } catch (const Error &) {
        return finish(c);
      }
      auto n = c.sock.recv_some(buf, sizeof buf);
      if (n <= 0)
        return finish(c);
      parser.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    }
  }

  void send_raw(Conn &c, const std::string &frame) {
    std::lock_guard lock(mu_);
    c.sock.send_all(frame);
  }

  void finish(Conn &c) {
    c.open = false;
    c.sock.shutdown();
  }

  std::string host_;
  std::uint16_t port_;
  Socket listener_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  mutable std::mutex mu_;
  std::map<ClientId, std::shared_ptr<Conn>> conns_;
  ClientId next_id_ = 0;
  OnMessage on_message_;
};

/// Blocking client; received text messages queue up for recv().
class WsClient {
public:
  ~WsClient() { close(); }

  bool connect(const std::string &host, std::uint16_t port, const std::string &path = "/") {
    sock_ = tcp_connect(host, port);
    if (!sock_.valid())
      return false;
    std::random_device rd;
    rng_.seed(rd());
    unsigned char nonce[16];
    for (auto &b : nonce)
      b = static_cast<unsigned char>(rng_());
    auto key = base64(nonce, sizeof nonce);
    std::string req = "GET " + path + " HTTP/1.1\r\nHost: " + host + ":" + std::to_string(port) +
                      "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
                      "\r\nSec-WebSocket-Version: 13\r\n\r\n";
    if (!sock_.send_all(req))
      return false;
    std::string rest;
    auto head = ws::read_head(sock_, rest);
    if (!head || head->rfind("HTTP/1.1 101", 0) != 0)
      return false;
    auto h = ws::parse_headers(*head);
    if (h["sec-websocket-accept"] != ws::accept_key(key))
      return false;
    open_ = true;
    reader_ = std::thread([this, rest] { read_loop(rest); });
    return true;
  }

  bool send(const std::string &text) {
    std::lock_guard lock(write_mu_);
    return open_ && sock_.send_all(ws::encode_frame(ws::text, text, true, static_cast<std::uint32_t>(rng_())));
  }

  /// Next received message, waiting up to timeout.
  std::optional<std::string> recv(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !inbox_.empty() || !open_; });
    if (inbox_.empty())
      return std::nullopt;
    auto m = std::move(inbox_.front());
    inbox_.pop_front();
    return m;
  }

  bool open() const { return open_; }

  void close() {
    if (open_) {
      std::lock_guard lock(write_mu_);
      sock_.send_all(ws::encode_frame(ws::close, std::string("\x03\xE8", 2), true, 0x01020304));
    }
    sock_.shutdown();
    if (reader_.joinable())
      reader_.join();
    sock_.close();
    open_ = false;
  }

private:
  void read_loop(std::string rest) {
    ws::FrameParser parser(false);
    parser.feed(rest);
    char buf[8192];
    std::string partial;
    while (true) {
      try {
        while (auto f = parser.next()) {
          if (f->opcode == ws::close)
            goto done;
          if (f->opcode == ws::text || f->opcode == ws::continuation) {
            partial += f->payload;
            if (f->fin) {
              std::lock_guard lock(mu_);
              inbox_.push_back(std::move(partial));
              partial.clear();
              cv_.notify_all();
            }
          }
        }
      } catch (const Error &) {
        goto done;
      }
      auto n = sock_.recv_some(buf, sizeof buf);
      if (n <= 0)
        break;
      parser.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    }
  done:
    std::lock_guard lock(mu_);
    open_ = false;
    cv_.notify_all();
  }

  Socket sock_;
  std::thread reader_;
  std::atomic<bool> open_{false};
  std::mutex mu_, write_mu_;
  std::condition_variable cv_;
  std::deque<std::string> inbox_;
  std::mt19937 rng_;
};

} // namespace dsm::net
