#pragma once

#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

namespace dsm::node {

using MessageHandler = std::function<void(const std::string &topic, const std::string &payload)>;

/// What a node needs from its uplink. Implementations: MQTT over TCP, the
/// in-process broker, and test doubles.
class Transport {
public:
  virtual ~Transport() = default;
  /// Attempts to (re)connect; true when connected afterwards.
  virtual bool connect() = 0;
  virtual bool connected() const = 0;
  /// True once the transport has accepted the message (PUBACK for QoS 1).
  virtual bool publish(const std::string &topic, const std::string &payload, int qos) = 0;
  virtual bool subscribe(const std::string &filter, int qos) = 0;
  virtual void set_handler(MessageHandler h) = 0;
  /// Returns once everything sent so far has been routed by the broker and
  /// everything the broker routed to us before that has been handed to the
  /// handler.
  virtual void barrier() {}
};

/// Records publishes; can be told to fail, to model an unreachable broker.
class CaptureTransport : public Transport {
public:
  struct Sent {
    std::string topic;
    std::string payload;
    int qos;
  };

  bool connect() override {
    if (!up_)
      return false;
    connected_ = true;
    return true;
  }
  bool connected() const override { return connected_; }
  bool publish(const std::string &topic, const std::string &payload, int qos) override {
    if (!connected_ || !up_) {
      connected_ = false;
      return false;
    }
    std::lock_guard lock(mu_);
    sent_.push_back({topic, payload, qos});
    return true;
  }
  bool subscribe(const std::string &filter, int) override {
    if (!connected_)
      return false;
    filters_.push_back(filter);
    return true;
  }
  void set_handler(MessageHandler h) override { handler_ = std::move(h); }

  void set_up(bool up) {
    up_ = up;
    if (!up)
      connected_ = false;
  }
  void deliver(const std::string &topic, const std::string &payload) {
    if (handler_)
      handler_(topic, payload);
  }

  std::vector<Sent> sent() const {
    std::lock_guard lock(mu_);
    return sent_;
  }
  void clear() {
    std::lock_guard lock(mu_);
    sent_.clear();
  }
  const std::vector<std::string> &filters() const { return filters_; }

private:
  mutable std::mutex mu_;
  bool up_ = true;
  bool connected_ = false;
  std::vector<Sent> sent_;
  std::vector<std::string> filters_;
  MessageHandler handler_;
};

} // namespace dsm::node
