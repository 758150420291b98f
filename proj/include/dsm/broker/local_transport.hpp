#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>

#include "dsm/broker/core.hpp"
#include "dsm/node/transport.hpp"

namespace dsm::broker {

/// In-process session on a BrokerCore. Deliveries arrive synchronously on
/// the routing thread, so barrier() has nothing to wait for.
class LocalTransport : public node::Transport {
public:
  LocalTransport(BrokerCore &core, std::string client_id)
      : core_(core), client_id_(std::move(client_id)), sink_(std::make_shared<Inbox>(this)) {}

  ~LocalTransport() override {
    sink_->owner = nullptr;
    if (session_)
      core_.disconnect(session_);
  }

  bool connect() override {
    if (connected())
      return true;
    if (!up_)
      return false;
    session_ = core_.connect(client_id_, sink_);
    sink_->closed = false;
    return true;
  }

  bool connected() const override { return session_ && !sink_->closed && core_.alive(session_); }

  bool publish(const std::string &topic, const std::string &payload, int qos) override {
    if (!up_ || !connected())
      return false;
    core_.publish(session_, topic, payload, static_cast<std::uint8_t>(qos > 0 ? 1 : 0));
    return true;
  }

  bool subscribe(const std::string &filter, int qos) override {
    if (!connected())
      return false;
    auto codes = core_.subscribe(session_, {{filter, static_cast<std::uint8_t>(qos)}});
    return codes.at(0) != 0x80;
  }

  void set_handler(node::MessageHandler h) override {
    std::lock_guard lock(mu_);
    handler_ = std::move(h);
  }

  /// Simulates losing (false) or regaining (true) the broker.
  void set_up(bool up) {
    up_ = up;
    if (!up && session_) {
      core_.disconnect(session_);
      session_ = 0;
    }
  }

private:
  struct Inbox : Sink {
    explicit Inbox(LocalTransport *o) : owner(o) {}
    void send(std::string bytes) override {
      if (!owner)
        return;
      reader.feed(bytes);
      while (auto p = reader.next()) {
        if (auto *pub = std::get_if<mqtt::Publish>(&*p)) {
          owner->deliver(*pub);
        }
      }
    }
    void close() override { closed = true; }
    LocalTransport *owner;
    mqtt::FrameReader reader;
    std::atomic<bool> closed{false};
  };

  void deliver(const mqtt::Publish &p) {
    node::MessageHandler h;
    {
      std::lock_guard lock(mu_);
      h = handler_;
    }
    if (h)
      h(p.topic, p.payload);
    if (p.qos == 1)
      core_.puback(session_, p.packet_id);
  }

  BrokerCore &core_;
  std::string client_id_;
  std::shared_ptr<Inbox> sink_;
  SessionId session_ = 0;
  std::atomic<bool> up_{true};
  std::mutex mu_;
  node::MessageHandler handler_;
};

} // namespace dsm::broker
