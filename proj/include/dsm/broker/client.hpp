#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include "dsm/broker/mqtt_codec.hpp"
#include "dsm/net/socket.hpp"
#include "dsm/node/transport.hpp"

namespace dsm::broker {

/// Blocking MQTT 3.1.1 client. A reader thread dispatches inbound
/// publishes to the handler and wakes callers waiting for acks.
class MqttClient : public node::Transport {
public:
  struct Options {
    std::chrono::milliseconds ack_timeout{2000};
    std::uint16_t keep_alive = 0;
    int connect_timeout_ms = 1000;
  };

  MqttClient(std::string host, std::uint16_t port, std::string client_id)
      : MqttClient(std::move(host), port, std::move(client_id), Options()) {}
  MqttClient(std::string host, std::uint16_t port, std::string client_id, Options opts)
      : host_(std::move(host)), port_(port), client_id_(std::move(client_id)), opts_(opts) {}

  ~MqttClient() override { disconnect(); }

  bool connect() override {
    if (connected_)
      return true;
    teardown();
    auto s = net::tcp_connect(host_, port_, opts_.connect_timeout_ms);
    if (!s.valid())
      return false;
    {
      std::lock_guard lock(mu_);
      sock_ = std::move(s);
      connack_.reset();
      pings_sent_ = pongs_ = 0;
      reading_ = true;
    }
    reader_ = std::thread([this] { read_loop(); });
    mqtt::Connect c;
    c.client_id = client_id_;
    c.keep_alive = opts_.keep_alive;
    if (!write(mqtt::encode(c)))
      return fail();
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, opts_.ack_timeout, [&] { return connack_.has_value() || !reading_; });
    if (!connack_ || *connack_ != 0) {
      lock.unlock();
      return fail();
    }
    connected_ = true;
    return true;
  }

  bool connected() const override { return connected_; }

  bool publish(const std::string &topic, const std::string &payload, int qos) override {
    if (!connected_)
      return false;
    mqtt::Publish p;
    p.topic = topic;
    p.payload = payload;
    p.qos = static_cast<std::uint8_t>(qos > 0 ? 1 : 0);
    if (p.qos == 0)
      return write(mqtt::encode(p));
    p.packet_id = next_id();
    if (!write(mqtt::encode(p)))
      return false;
    return wait_ack(p.packet_id, acked_);
  }

  bool subscribe(const std::string &filter, int qos) override {
    auto codes = subscribe_many({{filter, static_cast<std::uint8_t>(qos)}});
    return codes.size() == 1 && codes[0] != 0x80;
  }

  /// SUBACK return codes; empty if no SUBACK arrived.
  std::vector<std::uint8_t> subscribe_many(std::vector<std::pair<std::string, std::uint8_t>> topics) {
    if (!connected_)
      return {};
    mqtt::Subscribe s;
    s.packet_id = next_id();
    s.topics = std::move(topics);
    if (!write(mqtt::encode(s)))
      return {};
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, opts_.ack_timeout, [&] { return subacks_.count(s.packet_id) || !reading_; });
    auto it = subacks_.find(s.packet_id);
    if (it == subacks_.end())
      return {};
    auto codes = std::move(it->second);
    subacks_.erase(it);
    return codes;
  }

  bool unsubscribe(const std::string &filter) {
    if (!connected_)
      return false;
    mqtt::Unsubscribe u;
    u.packet_id = next_id();
    u.topics = {filter};
    if (!write(mqtt::encode(u)))
      return false;
    return wait_ack(u.packet_id, unsubacked_);
  }

  void set_handler(node::MessageHandler h) override {
    std::lock_guard lock(mu_);
    handler_ = std::move(h);
  }

  /// Round trip through the broker. Since the broker handles one
  /// connection's packets in order, a PINGRESP means everything sent
  /// before it has been routed.
  bool ping() {
    if (!connected_)
      return false;
    std::uint64_t want;
    {
      std::lock_guard lock(mu_);
      want = ++pings_sent_;
    }
    if (!write(mqtt::encode(mqtt::Pingreq{})))
      return false;
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, opts_.ack_timeout, [&] { return pongs_ >= want || !reading_; }) && pongs_ >= want;
  }

  void barrier() override { ping(); }

  /// Polite close: DISCONNECT, then the socket.
  void disconnect() {
    if (connected_)
      write(mqtt::encode(mqtt::Disconnect{}));
    teardown();
  }

  /// Abrupt close, as if the network dropped.
  void drop() { teardown(); }

  /// Test hook: return false to withhold the PUBACK for an inbound QoS 1
  /// publish.
  void set_ack_policy(std::function<bool(const mqtt::Publish &)> f) {
    std::lock_guard lock(mu_);
    ack_policy_ = std::move(f);
  }

  /// Test hook: sees every inbound PUBLISH with its flags.
  void set_raw_observer(std::function<void(const mqtt::Publish &)> f) {
    std::lock_guard lock(mu_);
    raw_observer_ = std::move(f);
  }

  const std::string &client_id() const { return client_id_; }

private:
  bool fail() {
    teardown();
    return false;
  }

  void teardown() {
    connected_ = false;
    {
      std::lock_guard lock(mu_);
      sock_.shutdown();
    }
    if (reader_.joinable())
      reader_.join();
    std::scoped_lock lock(mu_, write_mu_);
    sock_.close();
    reading_ = false;
  }

  std::uint16_t next_id() {
    std::lock_guard lock(mu_);
    next_id_ = next_id_ == 65535 ? 1 : next_id_ + 1;
    return next_id_;
  }

  bool write(const std::string &bytes) {
    std::lock_guard lock(write_mu_);
    if (!sock_.send_all(bytes)) {
      connected_ = false;
      return false;
    }
    return true;
  }

  bool wait_ack(std::uint16_t id, std::set<std::uint16_t> &acks) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, opts_.ack_timeout, [&] { return acks.count(id) || !reading_; });
    return acks.erase(id) > 0;
  }

  void read_loop() {
    mqtt::FrameReader reader;
    std::vector<char> buf(64 * 1024);
    while (true) {
      auto n = sock_.recv_some(buf.data(), buf.size());
      if (n <= 0)
        break;
      reader.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)));
      try {
        while (auto p = reader.next())
          dispatch(*p);
      } catch (const Error &) {
        break;
      }
    }
    {
      std::lock_guard lock(mu_);
      reading_ = false;
    }
    connected_ = false;
    cv_.notify_all();
  }

  void dispatch(mqtt::Packet &packet) {
    if (auto *p = std::get_if<mqtt::Publish>(&packet)) {
      node::MessageHandler h;
      std::function<bool(const mqtt::Publish &)> policy;
      std::function<void(const mqtt::Publish &)> observer;
      {
        std::lock_guard lock(mu_);
        h = handler_;
        policy = ack_policy_;
        observer = raw_observer_;
      }
      if (observer)
        observer(*p);
      if (h)
        h(p->topic, p->payload);
      if (p->qos == 1 && (!policy || policy(*p)))
        write(mqtt::encode(mqtt::Puback{p->packet_id}));
      return;
    }
    std::lock_guard lock(mu_);
    if (auto *c = std::get_if<mqtt::Connack>(&packet))
      connack_ = c->return_code;
    else if (auto *a = std::get_if<mqtt::Puback>(&packet))
      acked_.insert(a->packet_id);
    else if (auto *s = std::get_if<mqtt::Suback>(&packet))
      subacks_[s->packet_id] = s->return_codes;
    else if (auto *u = std::get_if<mqtt::Unsuback>(&packet))
      unsubacked_.insert(u->packet_id);
    else if (std::holds_alternative<mqtt::Pingresp>(packet))
      ++pongs_;
    cv_.notify_all();
  }

  std::string host_;
  std::uint16_t port_;
  std::string client_id_;
  Options opts_;
  net::Socket sock_;
  std::thread reader_;
  std::atomic<bool> connected_{false};
  std::mutex mu_, write_mu_;
  std::condition_variable cv_;
  bool reading_ = false;
  std::optional<std::uint8_t> connack_;
  std::set<std::uint16_t> acked_, unsubacked_;
  std::map<std::uint16_t, std::vector<std::uint8_t>> subacks_;
  std::uint64_t pings_sent_ = 0, pongs_ = 0;
  std::uint16_t next_id_ = 0;
  node::MessageHandler handler_;
  std::function<bool(const mqtt::Publish &)> ack_policy_;
  std::function<void(const mqtt::Publish &)> raw_observer_;
};

} // namespace dsm::broker
