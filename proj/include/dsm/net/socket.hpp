#pragma once

// Thin POSIX TCP helpers (IPv4).

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

#include "dsm/core/error.hpp"

namespace dsm::net {

class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket &&o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket &operator=(Socket &&o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket &) = delete;
  Socket &operator=(const Socket &) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  /// Wakes any thread blocked in recv/accept on this socket.
  void shutdown() const {
    if (fd_ >= 0)
      ::shutdown(fd_, SHUT_RDWR);
  }

  bool send_all(std::string_view data) const {
    while (!data.empty()) {
      auto n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR)
          continue;
        return false;
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
  }

  /// Bytes read, 0 on orderly close, -1 on error or timeout.
  long recv_some(char *buf, std::size_t cap) const {
    while (true) {
      auto n = ::recv(fd_, buf, cap, 0);
      if (n < 0 && errno == EINTR)
        continue;
      return n;
    }
  }

  void set_recv_timeout_ms(int ms) const {
    timeval tv{ms / 1000, (ms % 1000) * 1000};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }

  void set_nodelay() const {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

private:
  int fd_ = -1;
};

inline sockaddr_in make_addr(const std::string &host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1)
    throw Error(Errc::config_invalid, "host", "not an IPv4 address: " + host);
  return addr;
}

/// Listening socket; port 0 picks an ephemeral port (see bound_port).
inline Socket tcp_listen(const std::string &host, std::uint16_t port, int backlog = 64) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid())
    throw Error(Errc::io_error, "socket", std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto addr = make_addr(host, port);
  if (::bind(s.fd(), reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0)
    throw Error(Errc::io_error, host + ":" + std::to_string(port), std::string("bind: ") + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0)
    throw Error(Errc::io_error, "listen", std::strerror(errno));
  return s;
}

inline std::uint16_t bound_port(const Socket &s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr *>(&addr), &len);
  return ntohs(addr.sin_port);
}

/// Blocks until a client arrives; invalid socket once the listener is shut down.
inline Socket tcp_accept(const Socket &listener) {
  while (true) {
    int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      Socket s(fd);
      s.set_nodelay();
      return s;
    }
    if (errno == EINTR || errno == ECONNABORTED)
      continue;
    return Socket();
  }
}

/// Connects with a timeout; invalid socket on failure.
inline Socket tcp_connect(const std::string &host, std::uint16_t port, int timeout_ms = 2000) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!s.valid())
    return Socket();
  sockaddr_in addr;
  try {
    addr = make_addr(host, port);
  } catch (const Error &) {
    return Socket();
  }
  int rc = ::connect(s.fd(), reinterpret_cast<sockaddr *>(&addr), sizeof addr);
  if (rc != 0 && errno != EINPROGRESS)
    return Socket();
  if (rc != 0) {
    pollfd p{s.fd(), POLLOUT, 0};
    if (::poll(&p, 1, timeout_ms) != 1)
      return Socket();
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0)
      return Socket();
  }
  int fl = ::fcntl(s.fd(), F_GETFL);
  ::fcntl(s.fd(), F_SETFL, fl & ~O_NONBLOCK);
  s.set_nodelay();
  return s;
}

} // namespace dsm::net
