#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dsm/broker/core.hpp"
#include "dsm/net/socket.hpp"

namespace dsm::broker {

namespace detail {

/// One client connection: a reader thread feeding the core and a writer
/// thread draining the outbound queue, so routing never waits on a socket.
class Connection : public Sink, public std::enable_shared_from_this<Connection> {
public:
  Connection(net::Socket sock, BrokerCore &core, std::atomic<std::uint64_t> &auto_ids)
      : sock_(std::move(sock)), core_(core), auto_ids_(auto_ids) {}

  void start() {
    auto self = shared_from_this();
    writer_ = std::thread([self] { self->write_loop(); });
    reader_ = std::thread([self] { self->read_loop(); });
  }

  void send(std::string bytes) override {
    {
      std::lock_guard lock(mu_);
      if (closed_)
        return;
      out_.push_back(std::move(bytes));
    }
    cv_.notify_one();
  }

  void close() override {
    {
      std::lock_guard lock(mu_);
      if (closed_)
        return;
      closed_ = true;
    }
    sock_.shutdown();
    cv_.notify_all();
  }

  void join() {
    if (reader_.joinable())
      reader_.join();
    if (writer_.joinable())
      writer_.join();
  }

  bool finished() const { return done_.load(); }

private:
  void write_loop() {
    while (true) {
      std::string chunk;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return closed_ || !out_.empty(); });
        if (out_.empty())
          return; // closed and drained
        chunk = std::move(out_.front());
        out_.pop_front();
      }
      if (!sock_.send_all(chunk)) {
        close();
        return;
      }
      core_.add_bytes_out(chunk.size());
    }
  }

  void read_loop() {
    mqtt::FrameReader reader;
    std::vector<char> buf(64 * 1024);
    bool open = true;
    while (open) {
      auto n = sock_.recv_some(buf.data(), buf.size());
      if (n <= 0)
        break;
      core_.add_bytes_in(static_cast<std::size_t>(n));
      reader.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)));
      try {
        while (open) {
          auto p = reader.next();
          if (!p)
            break;
          open = handle(*p);
        }
      } catch (const Error &) {
        open = false; // protocol violation: drop the connection
      }
    }
    if (session_)
      core_.disconnect(session_);
    close();
    done_ = true;
  }

  bool handle(mqtt::Packet &packet) {
    if (auto *c = std::get_if<mqtt::Connect>(&packet)) {
      if (session_)
        return false; // second CONNECT is a protocol violation
      std::string id = c->client_id;
      if (id.empty()) {
        if (!c->clean_session) {
          send(mqtt::encode(mqtt::Connack{false, 2}));
          return false;
        }
        id = "auto-" + std::to_string(++auto_ids_);
      }
      if (c->keep_alive > 0)
        sock_.set_recv_timeout_ms(c->keep_alive * 1500);
      session_ = core_.connect(id, shared_from_this());
      send(mqtt::encode(mqtt::Connack{false, 0}));
      return true;
    }
    if (!session_)
      return false;
    if (auto *p = std::get_if<mqtt::Publish>(&packet)) {
      if (!valid_topic_name(p->topic))
        return false;
      core_.publish(session_, p->topic, p->payload, p->qos);
      if (p->qos == 1)
        send(mqtt::encode(mqtt::Puback{p->packet_id}));
      return true;
    }
    if (auto *a = std::get_if<mqtt::Puback>(&packet)) {
      core_.puback(session_, a->packet_id);
      return true;
    }
    if (auto *s = std::get_if<mqtt::Subscribe>(&packet)) {
      auto codes = core_.subscribe(session_, s->topics);
      send(mqtt::encode(mqtt::Suback{s->packet_id, codes}));
      return true;
    }
    if (auto *u = std::get_if<mqtt::Unsubscribe>(&packet)) {
      core_.unsubscribe(session_, u->topics);
      send(mqtt::encode(mqtt::Unsuback{u->packet_id}));
      return true;
    }
    if (std::holds_alternative<mqtt::Pingreq>(packet)) {
      send(mqtt::encode(mqtt::Pingresp{}));
      return true;
    }
    return false; // DISCONNECT or a server-to-client packet type
  }

  net::Socket sock_;
  BrokerCore &core_;
  std::atomic<std::uint64_t> &auto_ids_;
  SessionId session_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> out_;
  bool closed_ = false;
  std::atomic<bool> done_{false};
  std::thread reader_, writer_;
};

} // namespace detail

/// TCP front end for a BrokerCore, plus the QoS 1 redelivery timer.
class BrokerServer {
public:
  BrokerServer(BrokerCore &core, std::string host = "127.0.0.1", std::uint16_t port = 0,
               std::chrono::milliseconds tick = std::chrono::milliseconds(50))
      : core_(core), host_(std::move(host)), port_(port), tick_(tick) {}

  ~BrokerServer() { stop(); }

  void start() {
    listener_ = net::tcp_listen(host_, port_);
    port_ = net::bound_port(listener_);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    timer_ = std::thread([this] { timer_loop(); });
  }

  void stop() {
    if (!running_.exchange(false))
      return;
    listener_.shutdown();
    timer_cv_.notify_all();
    if (acceptor_.joinable())
      acceptor_.join();
    if (timer_.joinable())
      timer_.join();
    std::vector<std::shared_ptr<detail::Connection>> conns;
    {
      std::lock_guard lock(mu_);
      conns.swap(conns_);
    }
    for (auto &c : conns)
      c->close();
    for (auto &c : conns)
      c->join();
    listener_.close();
  }

  std::uint16_t port() const { return port_; }
  const std::string &host() const { return host_; }

private:
  void accept_loop() {
    while (running_) {
      auto s = net::tcp_accept(listener_);
      if (!s.valid())
        return;
      auto conn = std::make_shared<detail::Connection>(std::move(s), core_, auto_ids_);
      std::lock_guard lock(mu_);
      reap();
      conns_.push_back(conn);
      conn->start();
    }
  }

  void reap() {
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->finished()) {
        (*it)->close();
        (*it)->join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void timer_loop() {
    std::unique_lock lock(timer_mu_);
    while (running_) {
      timer_cv_.wait_for(lock, tick_);
      if (!running_)
        return;
      core_.redeliver_tick(Clock::now());
    }
  }

  BrokerCore &core_;
  std::string host_;
  std::uint16_t port_;
  std::chrono::milliseconds tick_;
  net::Socket listener_;
  std::atomic<bool> running_{false};
  std::thread acceptor_, timer_;
  std::mutex mu_;
  std::vector<std::shared_ptr<detail::Connection>> conns_;
  std::atomic<std::uint64_t> auto_ids_{0};
  std::mutex timer_mu_;
  std::condition_variable timer_cv_;
};

} // namespace dsm::broker
