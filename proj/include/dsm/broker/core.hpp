#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dsm/broker/mqtt_codec.hpp"
#include "dsm/broker/topic_filter.hpp"

namespace dsm::broker {

/// Outbound side of one client connection. send() must not block on the
/// network; close() tears the connection down.
class Sink {
public:
  virtual ~Sink() = default;
  virtual void send(std::string bytes) = 0;
  virtual void close() = 0;
};

using LocalHandler = std::function<void(const std::string &topic, const std::string &payload)>;
using SessionId = std::uint64_t;
using Clock = std::chrono::steady_clock;

inline constexpr SessionId local_publisher = 0;

struct BrokerMetrics {
  std::uint64_t connections_live = 0;
  std::uint64_t connections_total = 0;
  std::uint64_t messages_in = 0;
  std::uint64_t messages_routed = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t redeliveries = 0;
  std::uint64_t evictions = 0;
};

struct BrokerOptions {
  std::chrono::milliseconds redeliver_timeout{1000};
  int max_redeliveries = 5;
};

/// Routing authority. Every operation runs under one (recursive) lock, so
/// routes are totally ordered and a local handler may publish in turn.
/// Local handlers run inline on the publishing thread; if they block, the
/// publisher blocks with them.
class BrokerCore {
public:
  explicit BrokerCore(BrokerOptions opts = {}) : opts_(opts) {}

  /// Registers a session. A live session with the same client id is closed
  /// first.
  SessionId connect(const std::string &client_id, std::shared_ptr<Sink> sink) {
    std::shared_ptr<Sink> old;
    SessionId id;
    {
      std::lock_guard lock(mu_);
      for (auto it = sessions_.begin(); it != sessions_.end(); ++it) {
        if (it->second.client_id == client_id) {
          old = it->second.sink;
          sessions_.erase(it);
          ++metrics_.evictions;
          break;
        }
      }
      id = next_session_++;
      Session s;
      s.client_id = client_id;
      s.sink = std::move(sink);
      s.connected_at = Clock::now();
      sessions_.emplace(id, std::move(s));
      ++metrics_.connections_total;
    }
    if (old)
      old->close();
    return id;
  }

  void disconnect(SessionId id) {
    std::lock_guard lock(mu_);
    sessions_.erase(id);
  }

  bool alive(SessionId id) const {
    std::lock_guard lock(mu_);
    return sessions_.count(id) > 0;
  }

  std::vector<std::uint8_t> subscribe(SessionId id,
                                      const std::vector<std::pair<std::string, std::uint8_t>> &topics) {
    std::lock_guard lock(mu_);
    std::vector<std::uint8_t> codes;
    auto it = sessions_.find(id);
    for (const auto &[text, qos] : topics) {
      if (it == sessions_.end()) {
        codes.push_back(0x80);
        continue;
      }
      try {
        auto f = parse_filter(text);
        std::uint8_t granted = std::min<std::uint8_t>(qos, 1);
        auto &subs = it->second.subs;
        auto same = std::find_if(subs.begin(), subs.end(), [&](const Sub &s) { return s.filter.text == text; });
        if (same != subs.end())
          same->qos = granted;
        else
          subs.push_back({std::move(f), granted});
        codes.push_back(granted);
      } catch (const Error &) {
        codes.push_back(0x80);
      }
    }
    return codes;
  }

  void unsubscribe(SessionId id, const std::vector<std::string> &filters) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end())
      return;
    auto &subs = it->second.subs;
    for (const auto &f : filters)
      subs.erase(std::remove_if(subs.begin(), subs.end(), [&](const Sub &s) { return s.filter.text == f; }),
                 subs.end());
  }

  int local_subscribe(const std::string &filter, LocalHandler h) {
    std::lock_guard lock(mu_);
    int id = next_local_++;
    locals_.emplace(id, Local{parse_filter(filter), std::move(h)});
    return id;
  }

  void local_unsubscribe(int id) {
    std::lock_guard lock(mu_);
    locals_.erase(id);
  }

  /// Routes one publish. Each matching session receives it once, at the
  /// highest QoS among its matching subscriptions capped by the publish
  /// QoS; each matching local handler is called once. Returns the number
  /// of deliveries.
  std::size_t publish(SessionId from, const std::string &topic, const std::string &payload, std::uint8_t qos) {
    if (!valid_topic_name(topic))
      throw Error(Errc::protocol_error, "topic", "invalid topic name");
    std::lock_guard lock(mu_);
    ++metrics_.messages_in;
    (void)from;
    std::size_t n = 0;
    for (auto &[sid, s] : sessions_) {
      int best = -1;
      for (const auto &sub : s.subs)
        if (match_topic(sub.filter, topic))
          best = std::max<int>(best, sub.qos);
      if (best < 0)
        continue;
      mqtt::Publish p;
      p.topic = topic;
      p.payload = payload;
      p.qos = static_cast<std::uint8_t>(std::min<int>(best, qos));
      if (p.qos == 1) {
        p.packet_id = allocate_id(s);
        s.inflight[p.packet_id] = Inflight{p, Clock::now(), 0};
      }
      s.sink->send(mqtt::encode(p));
      ++n;
    }
    for (auto &[lid, l] : locals_) {
      if (match_topic(l.filter, topic)) {
        l.handler(topic, payload);
        ++n;
      }
    }
    metrics_.messages_routed += n;
    return n;
  }

  void puback(SessionId id, std::uint16_t packet_id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it != sessions_.end())
      it->second.inflight.erase(packet_id);
  }

  /// Resends QoS 1 deliveries unacknowledged for longer than the timeout,
  /// with the dup flag. A session whose delivery is still unacknowledged
  /// after max_redeliveries resends is evicted.
  std::size_t redeliver_tick(Clock::time_point now) {
    std::vector<std::shared_ptr<Sink>> evicted;
    std::size_t resent = 0;
    {
      std::lock_guard lock(mu_);
      for (auto it = sessions_.begin(); it != sessions_.end();) {
        bool evict = false;
        for (auto &[pid, f] : it->second.inflight) {
          if (now - f.sent_at < opts_.redeliver_timeout)
            continue;
          if (f.attempts >= opts_.max_redeliveries) {
            evict = true;
            break;
          }
          ++f.attempts;
          f.sent_at = now;
          f.packet.dup = true;
          it->second.sink->send(mqtt::encode(f.packet));
          ++resent;
          ++metrics_.redeliveries;
        }
        if (evict) {
          evicted.push_back(it->second.sink);
          it = sessions_.erase(it);
          ++metrics_.evictions;
        } else {
          ++it;
        }
      }
    }
    for (auto &s : evicted)
      s->close();
    return resent;
  }

  std::size_t inflight(SessionId id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? 0 : it->second.inflight.size();
  }

  void add_bytes_in(std::size_t n) { bytes_in_ += n; }
  void add_bytes_out(std::size_t n) { bytes_out_ += n; }

  BrokerMetrics metrics() const {
    std::lock_guard lock(mu_);
    auto m = metrics_;
    m.connections_live = sessions_.size();
    m.bytes_in = bytes_in_;
    m.bytes_out = bytes_out_;
    return m;
  }

private:
  struct Sub {
    TopicFilter filter;
    std::uint8_t qos;
  };
  struct Inflight {
    mqtt::Publish packet;
    Clock::time_point sent_at;
    int attempts;
  };
  struct Session {
    std::string client_id;
    std::shared_ptr<Sink> sink;
    std::vector<Sub> subs;
    std::map<std::uint16_t, Inflight> inflight;
    std::uint16_t next_packet_id = 1;
    Clock::time_point connected_at;
  };
  struct Local {
    TopicFilter filter;
    LocalHandler handler;
  };

  static std::uint16_t allocate_id(Session &s) {
    for (int tries = 0; tries < 65535; ++tries) {
      std::uint16_t id = s.next_packet_id;
      s.next_packet_id = s.next_packet_id == 65535 ? 1 : s.next_packet_id + 1;
      if (!s.inflight.count(id))
        return id;
    }
    throw Error(Errc::protocol_error, s.client_id, "packet identifiers exhausted");
  }

  BrokerOptions opts_;
  mutable std::recursive_mutex mu_;
  std::map<SessionId, Session> sessions_;
  std::map<int, Local> locals_;
  SessionId next_session_ = 1;
  int next_local_ = 1;
  BrokerMetrics metrics_;
  std::atomic<std::uint64_t> bytes_in_{0};
  std::atomic<std::uint64_t> bytes_out_{0};
};

inline std::string render_metrics(const BrokerMetrics &m) {
  std::string s;
  auto line = [&](const char *name, const char *type, std::uint64_t v) {
    s += "# TYPE ";
    s += name;
    s += ' ';
    s += type;
    s += '\n';
    s += name;
    s += ' ';
    s += std::to_string(v);
    s += '\n';
  };
  line("dsm_broker_connections", "gauge", m.connections_live);
  line("dsm_broker_connections_total", "counter", m.connections_total);
  line("dsm_broker_messages_in_total", "counter", m.messages_in);
  line("dsm_broker_messages_routed_total", "counter", m.messages_routed);
  line("dsm_broker_bytes_in_total", "counter", m.bytes_in);
  line("dsm_broker_bytes_out_total", "counter", m.bytes_out);
  line("dsm_broker_redeliveries_total", "counter", m.redeliveries);
  line("dsm_broker_sessions_evicted_total", "counter", m.evictions);
  return s;
}

} // namespace dsm::broker
