#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>

#include <json.hpp>

#include "dsm/broker/core.hpp"

namespace dsm::broker {

/// Answers node time-sync requests on dsm/v1/+/+/_node/sync from the
/// gateway's reference clock. t2 is read on receipt and t3 just before the
/// reply is routed.
class SyncResponder {
public:
  using RefClock = std::function<std::int64_t()>;

  SyncResponder(BrokerCore &core, RefClock ref) : core_(core), ref_(std::move(ref)) {
    sub_ = core_.local_subscribe("dsm/v1/+/+/_node/sync",
                                 [this](const std::string &topic, const std::string &payload) {
                                   handle(topic, payload);
                                 });
  }
  ~SyncResponder() { core_.local_unsubscribe(sub_); }
  SyncResponder(const SyncResponder &) = delete;
  SyncResponder &operator=(const SyncResponder &) = delete;

  std::uint64_t answered() const { return answered_; }
  std::uint64_t malformed() const { return malformed_; }

private:
  void handle(const std::string &topic, const std::string &payload) {
    const std::int64_t t2 = ref_();
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::exception &) {
      ++malformed_;
      return;
    }
    if (!doc.is_object() || doc.value("type", "") != "req") {
      if (!doc.is_object() || doc.value("type", "") != "resp")
        ++malformed_;
      return; // our own responses come back through the same filter
    }
    if (!doc.contains("req_id") || !doc["req_id"].is_string() || !doc.contains("t1") ||
        !doc["t1"].is_number_integer()) {
      ++malformed_;
      return;
    }
    nlohmann::json resp{{"type", "resp"}, {"req_id", doc["req_id"]}, {"t1", doc["t1"]}, {"t2", t2}};
    resp["t3"] = ref_();
    ++answered_;
    core_.publish(local_publisher, topic, resp.dump(), 0);
  }

  BrokerCore &core_;
  RefClock ref_;
  int sub_ = 0;
  std::atomic<std::uint64_t> answered_{0};
  std::atomic<std::uint64_t> malformed_{0};
};

} // namespace dsm::broker
