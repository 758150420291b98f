#include <atomic>
#include <cmath>
#include <set>
#include <chrono>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "dsm/broker/client.hpp"
#include "dsm/broker/local_transport.hpp"
#include "dsm/broker/server.hpp"
#include "dsm/broker/sync_responder.hpp"
#include "dsm/node/sensor_node.hpp"

using namespace dsm;
using namespace dsm::broker;
using namespace std::chrono_literals;

namespace {

std::string bytes(std::initializer_list<int> v) {
  std::string s;
  for (int b : v)
    s += static_cast<char>(b);
  return s;
}

mqtt::Packet roundtrip(const mqtt::Packet &p) {
  mqtt::FrameReader r;
  r.feed(mqtt::encode(p));
  auto out = r.next();
  EXPECT_TRUE(out.has_value());
  EXPECT_EQ(r.buffered(), 0u);
  return *out;
}

/// Sink that decodes what the core sends it.
struct RecordingSink : Sink {
  void send(std::string b) override {
    reader.feed(b);
    while (auto p = reader.next())
      packets.push_back(*p);
  }
  void close() override { closed = true; }
  std::vector<mqtt::Publish> publishes() const {
    std::vector<mqtt::Publish> out;
    for (const auto &p : packets)
      if (auto *pub = std::get_if<mqtt::Publish>(&p))
        out.push_back(*pub);
    return out;
  }
  mqtt::FrameReader reader;
  std::vector<mqtt::Packet> packets;
  bool closed = false;
};

template <class F> bool eventually(F f, std::chrono::milliseconds limit = 3000ms) {
  auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (f())
      return true;
    std::this_thread::sleep_for(5ms);
  }
  return f();
}

struct Received {
  std::mutex mu;
  std::vector<mqtt::Publish> all;
  void add(const mqtt::Publish &p) {
    std::lock_guard lock(mu);
    all.push_back(p);
  }
  std::size_t size() {
    std::lock_guard lock(mu);
    return all.size();
  }
  std::vector<mqtt::Publish> copy() {
    std::lock_guard lock(mu);
    return all;
  }
};

BrokerOptions fast() {
  BrokerOptions o;
  o.redeliver_timeout = 100ms;
  o.max_redeliveries = 5;
  return o;
}

} // namespace

// ---- codec ----

TEST(MqttCodec, ConnectBitExact) {
  mqtt::Connect c;
  c.client_id = "n1";
  c.keep_alive = 60;
  EXPECT_EQ(mqtt::encode(c), bytes({0x10, 0x0E, 0, 4, 'M', 'Q', 'T', 'T', 4, 0x02, 0, 60, 0, 2, 'n', '1'}));
}

TEST(MqttCodec, PublishBitExact) {
  mqtt::Publish p;
  p.topic = "a/b";
  p.payload = "x";
  p.qos = 1;
  p.packet_id = 1;
  auto enc = mqtt::encode(p);
  EXPECT_EQ(enc, bytes({0x32, 8, 0, 3, 'a', '/', 'b', 0, 1, 'x'}));
  EXPECT_EQ(mqtt::publish_frame_size(3, 1, 1), enc.size());
  p.dup = true;
  EXPECT_EQ(static_cast<unsigned char>(mqtt::encode(p)[0]), 0x3A);
}

TEST(MqttCodec, FrameSizeMatchesEncodingAcrossLengthBoundaries) {
  for (std::size_t n : {0u, 1u, 120u, 121u, 122u, 127u, 128u, 16380u, 16383u, 16384u, 200000u}) {
    for (int qos : {0, 1}) {
      mqtt::Publish p;
      p.topic = "dsm/v1/s/n/c/raw";
      p.payload.assign(n, 'z');
      p.qos = static_cast<std::uint8_t>(qos);
      p.packet_id = qos ? 7 : 0;
      EXPECT_EQ(mqtt::encode(p).size(), mqtt::publish_frame_size(p.topic.size(), n, qos)) << n;
    }
  }
}

TEST(MqttCodec, RoundTripEveryPacketType) {
  mqtt::Connect c;
  c.client_id = "abc";
  c.keep_alive = 5;
  c.username = "u";
  c.password = "p";
  mqtt::Publish p;
  p.topic = "t/1";
  p.payload = std::string(300, '\0');
  p.qos = 1;
  p.dup = true;
  p.packet_id = 65535;
  std::vector<mqtt::Packet> all{c,
                                mqtt::Connack{false, 0},
                                p,
                                mqtt::Puback{42},
                                mqtt::Subscribe{3, {{"a/+", 1}, {"#", 0}}},
                                mqtt::Suback{3, {1, 0x80}},
                                mqtt::Unsubscribe{4, {"a/+"}},
                                mqtt::Unsuback{4},
                                mqtt::Pingreq{},
                                mqtt::Pingresp{},
                                mqtt::Disconnect{}};
  for (const auto &pkt : all)
    EXPECT_EQ(roundtrip(pkt), pkt) << pkt.index();
}

TEST(MqttCodec, ByteAtATimeFeeding) {
  mqtt::Publish p;
  p.topic = "x/y";
  p.payload = std::string(1000, 'q');
  auto enc = mqtt::encode(p) + mqtt::encode(mqtt::Pingreq{});
  mqtt::FrameReader r;
  std::vector<mqtt::Packet> got;
  for (char ch : enc) {
    r.feed(std::string_view(&ch, 1));
    while (auto pkt = r.next())
      got.push_back(*pkt);
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(std::get<mqtt::Publish>(got[0]), p);
}

TEST(MqttCodec, RejectsViolations) {
  auto decode = [](const std::string &b) {
    mqtt::FrameReader r;
    r.feed(b);
    return r.next();
  };
  // QoS 2
  EXPECT_THROW(decode(bytes({0x34, 5, 0, 1, 'a', 0, 1})), Error);
  // reserved flags on PUBACK
  EXPECT_THROW(decode(bytes({0x41, 2, 0, 1})), Error);
  // SUBSCRIBE must carry flags 0010
  EXPECT_THROW(decode(bytes({0x80, 6, 0, 1, 0, 1, 'a', 0})), Error);
  // five length bytes
  EXPECT_THROW(decode(bytes({0x30, 0xFF, 0xFF, 0xFF, 0xFF, 0x01})), Error);
  // oversize publish payload
  mqtt::Publish big;
  big.topic = "a";
  big.payload.assign(mqtt::max_payload_bytes + 1, 'x');
  EXPECT_THROW(mqtt::encode(big), Error);
  std::string body;
  body += '\0';
  body += '\1';
  body += 'a';
  body += std::string(mqtt::max_payload_bytes + 1, 'x');
  std::string frame(1, '\x30');
  std::size_t n = body.size();
  do {
    unsigned char b = n % 128;
    n /= 128;
    if (n)
      b |= 0x80;
    frame += static_cast<char>(b);
  } while (n);
  try {
    decode(frame + body);
    FAIL() << "oversize payload decoded";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::protocol_error);
  }
}

// ---- topic filters ----

TEST(TopicFilter, Examples) {
  EXPECT_TRUE(match_topic("dsm/v1/+/+/+/features", "dsm/v1/plant1/node07/vib_head_x/features"));
  EXPECT_FALSE(match_topic("dsm/v1/+/+/+/features", "dsm/v1/plant1/node07/vib_head_x/raw"));
  EXPECT_TRUE(match_topic("dsm/v1/plant1/#", "dsm/v1/plant1/node07/_node/cmd"));
  EXPECT_TRUE(match_topic("dsm/v1/plant1/#", "dsm/v1/plant1"));
  EXPECT_TRUE(match_topic("#", "a"));
  EXPECT_FALSE(match_topic("a/+", "a"));
  EXPECT_FALSE(match_topic("a", "a/b"));
  for (auto bad : {"", "a//b", "a/#/b", "a/b#", "a+/b", "/", "a/"})
    EXPECT_THROW(parse_filter(bad), Error) << bad;
  EXPECT_FALSE(valid_topic_name("a/+/c"));
  EXPECT_FALSE(valid_topic_name("a//c"));
  EXPECT_TRUE(valid_topic_name("dsm/v1/s/n/c/raw"));
}

TEST(TopicFilter, AgreesWithRecursiveMatcher) {
  std::mt19937 rng(1234);
  const std::vector<std::string> words{"a", "b", "c"};
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<std::string> t(1 + pick(4));
    for (auto &w : t)
      w = words[pick(3)];
    std::vector<std::string> f(1 + pick(4));
    for (std::size_t i = 0; i < f.size(); ++i) {
      auto r = pick(5);
      f[i] = r < 3 ? words[r] : "+";
    }
    if (pick(3) == 0)
      f.back() = "#";
    std::string ft, tt;
    for (std::size_t i = 0; i < f.size(); ++i)
      ft += (i ? "/" : "") + f[i];
    for (std::size_t i = 0; i < t.size(); ++i)
      tt += (i ? "/" : "") + t[i];
    ASSERT_EQ(match_topic(ft, tt), dsm::testing::reference_match(f, t)) << ft << " vs " << tt;
  }
}

// ---- routing core ----

TEST(BrokerCore, FanOutToEverySubscriber) {
  BrokerCore core;
  std::vector<std::shared_ptr<RecordingSink>> sinks;
  std::vector<SessionId> ids;
  for (int i = 0; i < 3; ++i) {
    sinks.push_back(std::make_shared<RecordingSink>());
    ids.push_back(core.connect("s" + std::to_string(i), sinks.back()));
    core.subscribe(ids.back(), {{"dsm/v1/+/+/+/features", 1}});
  }
  EXPECT_EQ(core.publish(local_publisher, "dsm/v1/p/n/c/features", "m", 1), 3u);
  for (auto &s : sinks) {
    ASSERT_EQ(s->publishes().size(), 1u);
    EXPECT_EQ(s->publishes()[0].payload, "m");
    EXPECT_EQ(s->publishes()[0].qos, 1);
  }
  EXPECT_EQ(core.publish(local_publisher, "dsm/v1/p/n/c/raw", "m", 1), 0u);
}

TEST(BrokerCore, OverlappingFiltersDeliverOnceAtHighestQos) {
  BrokerCore core;
  auto sink = std::make_shared<RecordingSink>();
  auto id = core.connect("s", sink);
  EXPECT_EQ(core.subscribe(id, {{"a/#", 0}, {"a/+", 1}, {"a//", 1}}), (std::vector<std::uint8_t>{0, 1, 0x80}));
  EXPECT_EQ(core.subscribe(id, {{"z", 2}}), (std::vector<std::uint8_t>{1}));
  core.publish(local_publisher, "a/b", "x", 1);
  core.publish(local_publisher, "a/b", "y", 0);
  auto got = sink->publishes();
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].qos, 1);
  EXPECT_EQ(got[1].qos, 0);
  core.unsubscribe(id, {"a/+"});
  core.publish(local_publisher, "a/b", "z", 1);
  EXPECT_EQ(sink->publishes().back().qos, 0);
}

TEST(BrokerCore, RedeliveryWithDupThenEviction) {
  BrokerCore core(fast());
  auto sink = std::make_shared<RecordingSink>();
  auto id = core.connect("s", sink);
  core.subscribe(id, {{"t", 1}});
  core.publish(local_publisher, "t", "m", 1);
  auto t = Clock::now();
  EXPECT_EQ(core.redeliver_tick(t + 50ms), 0u);
  for (int i = 1; i <= 5; ++i)
    EXPECT_EQ(core.redeliver_tick(t + i * 150ms), 1u);
  auto got = sink->publishes();
  ASSERT_EQ(got.size(), 6u);
  EXPECT_FALSE(got[0].dup);
  for (std::size_t i = 1; i < got.size(); ++i) {
    EXPECT_TRUE(got[i].dup);
    EXPECT_EQ(got[i].packet_id, got[0].packet_id);
  }
  EXPECT_TRUE(core.alive(id));
  core.redeliver_tick(t + 6 * 150ms);
  EXPECT_FALSE(core.alive(id));
  EXPECT_TRUE(sink->closed);
  EXPECT_EQ(core.metrics().evictions, 1u);
}

TEST(BrokerCore, AckStopsRedelivery) {
  BrokerCore core(fast());
  auto sink = std::make_shared<RecordingSink>();
  auto id = core.connect("s", sink);
  core.subscribe(id, {{"t", 1}});
  core.publish(local_publisher, "t", "m", 1);
  core.puback(id, sink->publishes()[0].packet_id);
  EXPECT_EQ(core.inflight(id), 0u);
  EXPECT_EQ(core.redeliver_tick(Clock::now() + 1s), 0u);
}

TEST(BrokerCore, ClientIdReuseClosesOldSession) {
  BrokerCore core;
  auto a = std::make_shared<RecordingSink>();
  auto b = std::make_shared<RecordingSink>();
  auto ia = core.connect("same", a);
  auto ib = core.connect("same", b);
  EXPECT_TRUE(a->closed);
  EXPECT_FALSE(core.alive(ia));
  EXPECT_TRUE(core.alive(ib));
}

TEST(BrokerCore, LocalHandlerMayPublish) {
  BrokerCore core;
  auto sink = std::make_shared<RecordingSink>();
  auto id = core.connect("s", sink);
  core.subscribe(id, {{"out", 0}});
  core.local_subscribe("in", [&](const std::string &, const std::string &p) {
    core.publish(local_publisher, "out", p + "!", 0);
  });
  core.publish(local_publisher, "in", "hi", 0);
  ASSERT_EQ(sink->publishes().size(), 1u);
  EXPECT_EQ(sink->publishes()[0].payload, "hi!");
  EXPECT_THROW(core.publish(local_publisher, "a/#", "x", 0), Error);
}

TEST(BrokerCore, MetricsText) {
  BrokerCore core;
  core.publish(local_publisher, "x", "y", 0);
  auto text = render_metrics(core.metrics());
  EXPECT_NE(text.find("dsm_broker_messages_in_total 1\n"), std::string::npos);
  EXPECT_NE(text.find("# TYPE dsm_broker_connections gauge"), std::string::npos);
}

// ---- sync responder ----

TEST(SyncResponder, AnswersAndIgnoresGarbage) {
  BrokerCore core;
  std::int64_t ref = 1000;
  SyncResponder responder(core, [&] { return ref++; });
  LocalTransport t(core, "n");
  ASSERT_TRUE(t.connect());
  std::vector<nlohmann::json> got;
  t.set_handler([&](const std::string &, const std::string &p) {
    auto j = nlohmann::json::parse(p, nullptr, false);
    if (j.is_object() && j.value("type", "") == "resp")
      got.push_back(j);
  });
  const std::string topic = "dsm/v1/s/n/_node/sync";
  ASSERT_TRUE(t.subscribe(topic, 0));
  std::string req = R"({"type":"req","req_id":"n-0","t1":5})";
  t.publish(topic, req, 0);
  t.publish(topic, req, 0); // replay gets a fresh answer
  t.publish(topic, "not json", 0);
  t.publish(topic, R"({"type":"req","t1":5})", 0);
  ASSERT_EQ(got.size(), 2u);
  for (const auto &r : got) {
    EXPECT_EQ(r["req_id"], "n-0");
    EXPECT_EQ(r["t1"], 5);
    EXPECT_GE(r["t3"].get<std::int64_t>(), r["t2"].get<std::int64_t>());
  }
  EXPECT_GT(got[1]["t2"].get<std::int64_t>(), got[0]["t3"].get<std::int64_t>());
  EXPECT_EQ(responder.answered(), 2u);
  EXPECT_EQ(responder.malformed(), 2u);
}

namespace {

/// Adds a fixed one-way latency to sync traffic by advancing a shared
/// virtual clock in each direction.
class DelayedTransport : public node::Transport {
public:
  DelayedTransport(BrokerCore &core, std::int64_t &now, std::int64_t up, std::int64_t down)
      : inner_(core, "delayed"), now_(now), up_(up), down_(down) {}
  bool connect() override { return inner_.connect(); }
  bool connected() const override { return inner_.connected(); }
  bool publish(const std::string &t, const std::string &p, int q) override {
    bool sync = t.ends_with("/sync");
    if (sync)
      now_ += up_;
    bool ok = inner_.publish(t, p, q);
    return ok;
  }
  bool subscribe(const std::string &f, int q) override { return inner_.subscribe(f, q); }
  void set_handler(node::MessageHandler h) override {
    inner_.set_handler([this, h](const std::string &t, const std::string &p) {
      if (t.ends_with("/sync") && p.find("\"resp\"") != std::string::npos)
        now_ += down_;
      h(t, p);
    });
  }

private:
  LocalTransport inner_;
  std::int64_t &now_;
  std::int64_t up_, down_;
};

class ConstSource : public node::SignalSource {
public:
  double sample(const std::string &, std::int64_t t) override {
    return 20.0 + std::sin(2 * 3.141592653589793 * static_cast<double>(t) * 1e-6);
  }
};

node::NodeConfig tiny_node(const std::string &id) {
  node::NodeConfig c;
  c.node_id = id;
  c.site = "plant1";
  c.mode = ProcessingMode::features;
  c.decimation_factor = 2;
  node::NodeChannel ch;
  ch.descriptor.topic = build_topic("plant1", id, "amb_temp", TopicKind::features);
  ch.descriptor.quantity = {QuantityKind::temperature};
  ch.descriptor.range_min = -40;
  ch.descriptor.range_max = 85;
  ch.descriptor.fs_hz = 4;
  ch.descriptor.window = 4;
  ch.descriptor.mode = ProcessingMode::features;
  ch.signal = "amb_temp";
  c.channels.push_back(ch);
  return c;
}

} // namespace

TEST(SyncResponder, ClosedLoopSymmetricLinkWithinOneMicrosecond) {
  for (std::int64_t offset : {-250000, -3, 0, 4999, 1234567}) {
    BrokerCore core;
    std::int64_t now = 1'700'000'000'000'000;
    SyncResponder responder(core, [&] { return now; });
    DelayedTransport link(core, now, 5000, 5000);
    ConstSource src;
    auto cfg = tiny_node("n1");
    cfg.clock.true_offset_us = offset;
    node::SensorNode n(cfg, link, [&] { return now; }, &src);
    n.start(now);
    n.step(now + 1000);
    n.step(now + 2000);
    ASSERT_TRUE(n.last_sync().has_value()) << offset;
    EXPECT_EQ(n.last_sync()->delay_us, 10000);
    EXPECT_LE(std::abs(n.clock().corrected_us(now) - now), 1) << offset;
  }
}

TEST(SyncResponder, AsymmetricLinkErrorIsHalfTheAsymmetry) {
  BrokerCore core;
  std::int64_t now = 1'700'000'000'000'000;
  SyncResponder responder(core, [&] { return now; });
  DelayedTransport link(core, now, 2000, 8000);
  ConstSource src;
  auto cfg = tiny_node("n1");
  cfg.clock.true_offset_us = 777;
  node::SensorNode n(cfg, link, [&] { return now; }, &src);
  n.start(now);
  n.step(now + 1000);
  n.step(now + 2000);
  ASSERT_TRUE(n.last_sync().has_value());
  EXPECT_LE(std::abs(std::abs(n.clock().corrected_us(now) - now) - 3000), 1);
}

// ---- TCP ----

TEST(BrokerTcp, ConnectPublishSubscribeAndOrder) {
  BrokerCore core(fast());
  BrokerServer server(core, "127.0.0.1", 0, 20ms);
  server.start();
  MqttClient sub("127.0.0.1", server.port(), "sub");
  MqttClient pub("127.0.0.1", server.port(), "pub");
  Received rx;
  sub.set_raw_observer([&](const mqtt::Publish &p) { rx.add(p); });
  ASSERT_TRUE(sub.connect());
  ASSERT_TRUE(pub.connect());
  ASSERT_TRUE(sub.subscribe("dsm/v1/#", 1));
  EXPECT_FALSE(sub.subscribe("bad//filter", 1));
  for (int i = 0; i < 200; ++i)
    ASSERT_TRUE(pub.publish("dsm/v1/s/n/c/raw", std::to_string(i), i % 2));
  ASSERT_TRUE(pub.ping());
  ASSERT_TRUE(sub.ping());
  auto got = rx.copy();
  ASSERT_EQ(got.size(), 200u);
  for (int i = 0; i < 200; ++i)
    EXPECT_EQ(got[i].payload, std::to_string(i));
  auto m = core.metrics();
  EXPECT_EQ(m.connections_live, 2u);
  EXPECT_GT(m.bytes_in, 0u);
  EXPECT_GT(m.bytes_out, 0u);
}

TEST(BrokerTcp, QosOneWithNoSubscribersIsStillAcked) {
  BrokerCore core;
  BrokerServer server(core);
  server.start();
  MqttClient pub("127.0.0.1", server.port(), "lonely");
  ASSERT_TRUE(pub.connect());
  EXPECT_TRUE(pub.publish("nobody/listens", "x", 1));
}

TEST(BrokerTcp, LostAckCausesExactlyOneDuplicate) {
  BrokerCore core(fast());
  BrokerServer server(core, "127.0.0.1", 0, 20ms);
  server.start();
  MqttClient sub("127.0.0.1", server.port(), "sub");
  MqttClient pub("127.0.0.1", server.port(), "pub");
  Received rx;
  sub.set_raw_observer([&](const mqtt::Publish &p) { rx.add(p); });
  sub.set_ack_policy([](const mqtt::Publish &p) { return p.dup; }); // first ack lost
  ASSERT_TRUE(sub.connect());
  ASSERT_TRUE(pub.connect());
  ASSERT_TRUE(sub.subscribe("t", 1));
  ASSERT_TRUE(pub.publish("t", "once", 1));
  ASSERT_TRUE(eventually([&] { return rx.size() >= 2; }));
  std::this_thread::sleep_for(400ms); // several more timeouts: nothing else may arrive
  auto got = rx.copy();
  ASSERT_EQ(got.size(), 2u);
  EXPECT_FALSE(got[0].dup);
  EXPECT_TRUE(got[1].dup);
  EXPECT_EQ(got[1].payload, "once");
  EXPECT_EQ(got[1].packet_id, got[0].packet_id);
}

TEST(BrokerTcp, EverySecondAckDroppedStillDeliversAll) {
  BrokerCore core(fast());
  BrokerServer server(core, "127.0.0.1", 0, 20ms);
  server.start();
  MqttClient sub("127.0.0.1", server.port(), "sub");
  MqttClient pub("127.0.0.1", server.port(), "pub");
  Received rx;
  std::atomic<int> originals{0};
  sub.set_raw_observer([&](const mqtt::Publish &p) { rx.add(p); });
  sub.set_ack_policy([&](const mqtt::Publish &p) { return p.dup || (originals++ % 2 == 0); });
  ASSERT_TRUE(sub.connect());
  ASSERT_TRUE(pub.connect());
  ASSERT_TRUE(sub.subscribe("t/+", 1));
  for (int i = 0; i < 50; ++i)
    ASSERT_TRUE(pub.publish("t/" + std::to_string(i), std::to_string(i), 1));
  ASSERT_TRUE(eventually([&] { return rx.size() >= 75; }));
  std::this_thread::sleep_for(300ms);
  auto got = rx.copy();
  EXPECT_EQ(got.size(), 75u);
  std::set<std::string> distinct;
  for (const auto &p : got)
    distinct.insert(p.payload);
  EXPECT_EQ(distinct.size(), 50u);
  EXPECT_TRUE(sub.connected());
}

TEST(BrokerTcp, SilentSubscriberIsEvicted) {
  BrokerCore core(fast());
  BrokerServer server(core, "127.0.0.1", 0, 20ms);
  server.start();
  MqttClient sub("127.0.0.1", server.port(), "mute");
  MqttClient pub("127.0.0.1", server.port(), "pub");
  Received rx;
  sub.set_raw_observer([&](const mqtt::Publish &p) { rx.add(p); });
  sub.set_ack_policy([](const mqtt::Publish &) { return false; });
  ASSERT_TRUE(sub.connect());
  ASSERT_TRUE(pub.connect());
  ASSERT_TRUE(sub.subscribe("t", 1));
  ASSERT_TRUE(pub.publish("t", "m", 1));
  ASSERT_TRUE(eventually([&] { return !sub.connected(); }));
  EXPECT_EQ(rx.size(), 6u); // original plus five redeliveries
  EXPECT_EQ(core.metrics().evictions, 1u);
}

TEST(BrokerTcp, ClientIdTakeover) {
  BrokerCore core;
  BrokerServer server(core);
  server.start();
  MqttClient a("127.0.0.1", server.port(), "dup");
  MqttClient b("127.0.0.1", server.port(), "dup");
  ASSERT_TRUE(a.connect());
  ASSERT_TRUE(b.connect());
  EXPECT_TRUE(eventually([&] { return !a.connected(); }));
  EXPECT_TRUE(b.ping());
}

TEST(BrokerTcp, ProtocolViolationsDropTheConnection) {
  BrokerCore core;
  BrokerServer server(core);
  server.start();
  auto expect_closed = [&](const std::string &payload) -> std::string {
    auto s = net::tcp_connect("127.0.0.1", server.port());
    EXPECT_TRUE(s.valid());
    s.set_recv_timeout_ms(2000);
    EXPECT_TRUE(s.send_all(payload));
    char buf[64];
    long n;
    std::string in;
    while ((n = s.recv_some(buf, sizeof buf)) > 0)
      in.append(buf, static_cast<std::size_t>(n));
    EXPECT_EQ(n, 0) << "connection not closed";
    return in;
  };
  // PUBLISH before CONNECT
  expect_closed(bytes({0x30, 3, 0, 1, 'a'}));
  // oversize payload after a valid CONNECT
  mqtt::Connect c;
  c.client_id = "big";
  std::string frame = mqtt::encode(c);
  std::size_t len = 3 + mqtt::max_payload_bytes + 1;
  frame += '\x30';
  std::size_t n = len;
  do {
    unsigned char b = n % 128;
    n /= 128;
    if (n)
      b |= 0x80;
    frame += static_cast<char>(b);
  } while (n);
  frame += bytes({0, 1, 'a'});
  frame += std::string(mqtt::max_payload_bytes + 1, 'x');
  auto in = expect_closed(frame);
  EXPECT_EQ(in, mqtt::encode(mqtt::Connack{false, 0}));
  // a wildcard in a published topic
  expect_closed(mqtt::encode(c) + bytes({0x30, 5, 0, 3, 'a', '/', '#'}));
}

TEST(BrokerTcp, NodeEndToEnd) {
  BrokerCore core;
  BrokerServer server(core);
  server.start();
  std::atomic<std::int64_t> now{1'700'000'000'000'000};
  SyncResponder responder(core, [&] { return now.load(); });
  MqttClient node_link("127.0.0.1", server.port(), "n1");
  MqttClient watcher("127.0.0.1", server.port(), "watcher");
  MqttClient operator_link("127.0.0.1", server.port(), "op");
  Received rx;
  watcher.set_raw_observer([&](const mqtt::Publish &p) { rx.add(p); });
  ASSERT_TRUE(watcher.connect());
  ASSERT_TRUE(watcher.subscribe("dsm/v1/plant1/#", 1));
  ASSERT_TRUE(operator_link.connect());

  ConstSource src;
  auto cfg = tiny_node("n1");
  cfg.clock.true_offset_us = 4000;
  node::SensorNode n(cfg, node_link, [&] { return now.load(); }, &src);
  n.start(now);
  for (int i = 0; i < 4; ++i) {
    now += 500'000;
    n.step(now);
    node_link.barrier();
  }
  ASSERT_TRUE(operator_link.publish(n.cmd_topic(), R"({"req_id":"r1","cmd":"ping"})", 1));
  now += 500'000;
  n.step(now);
  node_link.barrier();
  watcher.ping();

  int features = 0, acks = 0;
  for (const auto &p : rx.copy()) {
    auto t = parse_topic(p.topic);
    if (t.kind == TopicKind::features) {
      auto m = decode_message(p.payload);
      EXPECT_EQ(m.node_id, "n1");
      ++features;
    }
    if (p.topic == n.ack_topic() && p.payload.find("\"r1\"") != std::string::npos)
      ++acks;
  }
  EXPECT_GE(features, 2);
  EXPECT_EQ(acks, 1);
  EXPECT_GE(n.stats().syncs, 1u);
  EXPECT_LE(std::abs(n.clock().corrected_us(now) - now), 4000 / 2 + 50000);
}
