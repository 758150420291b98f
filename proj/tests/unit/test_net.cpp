#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "dsm/net/websocket.hpp"

using namespace dsm;
using namespace dsm::net;
using namespace std::chrono_literals;

namespace {

bool wait_for(const std::function<bool()> &pred, std::chrono::milliseconds limit = 2000ms) {
  auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (pred())
      return true;
    std::this_thread::sleep_for(2ms);
  }
  return pred();
}

Socket raw_upgrade(std::uint16_t port, std::string &rest) {
  auto s = tcp_connect("127.0.0.1", port);
  s.send_all("GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
             "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n");
  auto head = ws::read_head(s, rest);
  EXPECT_TRUE(head.has_value());
  if (head) {
    EXPECT_NE(head->find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);
  }
  return s;
}

} // namespace

TEST(WebSocket, AcceptKeyKnownAnswer) {
  EXPECT_EQ(ws::accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(WebSocket, FrameHeaderBytes) {
  // unmasked "Hello" from the protocol's own examples
  EXPECT_EQ(ws::encode_frame(ws::text, "Hello", false), std::string("\x81\x05Hello", 7));
  auto masked = ws::encode_frame(ws::text, "Hello", true, 0x37fa213d);
  EXPECT_EQ(masked, std::string("\x81\x85\x37\xfa\x21\x3d\x7f\x9f\x4d\x51\x58", 11));
}

TEST(WebSocket, LengthEncodingsRoundTrip) {
  for (std::size_t n : {0u, 1u, 125u, 126u, 127u, 65535u, 65536u, 200000u}) {
    std::string payload(n, 'a');
    for (std::size_t i = 0; i < n; ++i)
      payload[i] = static_cast<char>('a' + i % 26);
    for (bool mask : {false, true}) {
      auto bytes = ws::encode_frame(ws::text, payload, mask, 0xA1B2C3D4);
      std::size_t header = (n < 126 ? 2 : n <= 0xFFFF ? 4 : 10) + (mask ? 4 : 0);
      EXPECT_EQ(bytes.size(), header + n);
      ws::FrameParser p(mask);
      // byte-at-a-time for small frames, whole for big ones
      if (n < 300) {
        for (std::size_t i = 0; i + 1 < bytes.size(); ++i) {
          p.feed(bytes.substr(i, 1));
          EXPECT_FALSE(p.next().has_value());
        }
        p.feed(bytes.substr(bytes.size() - 1));
      } else {
        p.feed(bytes);
      }
      auto f = p.next();
      ASSERT_TRUE(f.has_value());
      EXPECT_EQ(f->payload, payload);
      EXPECT_EQ(f->opcode, ws::text);
      EXPECT_TRUE(f->fin);
    }
  }
}

TEST(WebSocket, ParserRejections) {
  ws::FrameParser server(true);
  server.feed(ws::encode_frame(ws::text, "x", false));
  EXPECT_THROW(server.next(), Error);
  ws::FrameParser client(false);
  client.feed(ws::encode_frame(ws::text, "x", true, 1));
  EXPECT_THROW(client.next(), Error);
  ws::FrameParser rsv(false);
  rsv.feed(std::string("\xC1\x01x", 3));
  EXPECT_THROW(rsv.next(), Error);
  ws::FrameParser big(false, 10);
  big.feed(ws::encode_frame(ws::text, std::string(11, 'z'), false));
  EXPECT_THROW(big.next(), Error);
}

TEST(WebSocket, EchoAndBroadcast) {
  WsServer server("127.0.0.1", 0);
  server.on_message([&](WsServer::ClientId id, const std::string &m) { server.send_to(id, "echo:" + m); });
  server.start();
  WsClient a, b;
  ASSERT_TRUE(a.connect("127.0.0.1", server.port()));
  ASSERT_TRUE(b.connect("127.0.0.1", server.port()));
  ASSERT_TRUE(wait_for([&] { return server.clients() == 2; }));

  ASSERT_TRUE(a.send("hi"));
  auto r = a.recv(2000ms);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(*r, "echo:hi");
  EXPECT_FALSE(b.recv(50ms).has_value());

  std::string big(70000, 'q');
  ASSERT_TRUE(b.send(big));
  r = b.recv(2000ms);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(*r, "echo:" + big);

  EXPECT_EQ(server.broadcast("{\"kind\":\"frame\"}"), 2u);
  for (auto *c : {&a, &b}) {
    auto m = c->recv(2000ms);
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(*m, "{\"kind\":\"frame\"}");
  }
  // order is preserved per client
  for (int i = 0; i < 50; ++i)
    server.broadcast(std::to_string(i));
  for (int i = 0; i < 50; ++i) {
    auto m = a.recv(2000ms);
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(*m, std::to_string(i));
  }

  a.close();
  EXPECT_TRUE(wait_for([&] { return server.clients() == 1; }));
  server.stop();
  EXPECT_TRUE(wait_for([&] { return !b.open(); }));
}

TEST(WebSocket, ServerDropsUnmaskedClientFrames) {
  WsServer server("127.0.0.1", 0);
  int got = 0;
  server.on_message([&](WsServer::ClientId, const std::string &) { ++got; });
  server.start();
  std::string rest;
  auto s = raw_upgrade(server.port(), rest);
  ASSERT_TRUE(wait_for([&] { return server.clients() == 1; }));
  s.send_all(ws::encode_frame(ws::text, "no mask", false));
  char buf[64];
  s.set_recv_timeout_ms(2000);
  EXPECT_LE(s.recv_some(buf, sizeof buf), 0);
  EXPECT_EQ(got, 0);
  EXPECT_TRUE(wait_for([&] { return server.clients() == 0; }));
}

TEST(WebSocket, PingGetsPongAndFragmentsReassemble) {
  WsServer server("127.0.0.1", 0);
  std::vector<std::string> got;
  std::mutex mu;
  server.on_message([&](WsServer::ClientId, const std::string &m) {
    std::lock_guard lock(mu);
    got.push_back(m);
  });
  server.start();
  std::string rest;
  auto s = raw_upgrade(server.port(), rest);
  s.send_all(ws::encode_frame(ws::ping, "abc", true, 7));
  ws::FrameParser p(false);
  p.feed(rest);
  char buf[256];
  std::optional<ws::Frame> f;
  while (!(f = p.next())) {
    auto n = s.recv_some(buf, sizeof buf);
    ASSERT_GT(n, 0);
    p.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
  EXPECT_EQ(f->opcode, ws::pong);
  EXPECT_EQ(f->payload, "abc");

  auto first = ws::encode_frame(ws::text, "hel", true, 9);
  first[0] = static_cast<char>(ws::text); // FIN clear
  s.send_all(first + ws::encode_frame(ws::continuation, "lo", true, 11));
  ASSERT_TRUE(wait_for([&] {
    std::lock_guard lock(mu);
    return got.size() == 1;
  }));
  EXPECT_EQ(got[0], "hello");
}

TEST(WebSocket, PlainHttpIsRefused) {
  WsServer server("127.0.0.1", 0);
  server.start();
  auto s = tcp_connect("127.0.0.1", server.port());
  s.send_all("GET / HTTP/1.1\r\nHost: x\r\n\r\n");
  std::string rest;
  auto head = ws::read_head(s, rest);
  ASSERT_TRUE(head.has_value());
  EXPECT_EQ(head->rfind("HTTP/1.1 400", 0), 0u);
}
