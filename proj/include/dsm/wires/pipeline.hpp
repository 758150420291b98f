#pragma once

#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dsm/wires/graph.hpp"
#include "dsm/wires/stages.hpp"

namespace dsm::wires {

struct PipelineStats {
  std::uint64_t consumed = 0;
  std::uint64_t emitted = 0;
  std::uint64_t join_drops = 0;
  std::uint64_t window_drops = 0;
  std::uint64_t dead = 0;
  std::uint64_t commands_forwarded = 0;
  std::uint64_t acks_relayed = 0;

  bool conserved() const { return consumed == emitted + join_drops + window_drops + dead; }
};

/// A running graph. Every stage owns a worker thread and an ordered inbox;
/// inboxes are bounded (pushes block) except at subscribers, whose pushes
/// come from broker callbacks that must never wait on the graph.
class Pipeline {
public:
  Pipeline(GraphSpec spec, PipelineContext ctx) : spec_(std::move(spec)), ctx_(std::move(ctx)) {
    auto problems = validate_graph(spec_);
    if (!problems.empty()) {
      LoadResult r{spec_, problems};
      throw Error(Errc::graph_invalid, "graph", r.summary());
    }
  }

  ~Pipeline() { stop(); }

  Pipeline(const Pipeline &) = delete;
  Pipeline &operator=(const Pipeline &) = delete;

  /// Throws StartupFailure before any record is consumed.
  void start() {
    for (const auto &s : spec_.stages) {
      auto node = std::make_unique<Node>();
      node->stage = make_stage(s, ctx_, counters_);
      node->unbounded = s.kind == "subscriber";
      index_[s.id] = nodes_.size();
      nodes_.push_back(std::move(node));
    }
    for (std::size_t e = 0; e < spec_.edges.size(); ++e) {
      const auto &edge = spec_.edges[e];
      auto from = index_.at(edge.from.stage), to = index_.at(edge.to.stage);
      nodes_[from]->routes[edge.from.port].push_back({e, to, edge.to.port});
      nodes_[to]->upstream.insert(from);
    }
    for (auto &n : nodes_)
      n->open_upstream = n->upstream.size();
    for (auto &n : nodes_)
      n->stage->prepare(); // may throw: nothing is running yet
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      nodes_[i]->worker = std::thread([this, i] { run(i); });
    running_ = true;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      nodes_[i]->stage->open([this, i](std::string topic, std::string payload) {
        Item item;
        item.raw = true;
        item.port = std::move(topic);
        item.payload = std::move(payload);
        push(i, std::move(item));
      });
    }
  }

  /// Blocks until every record pushed so far has been fully processed.
  void wait_idle() {
    std::unique_lock lock(idle_mu_);
    idle_cv_.wait(lock, [&] { return inflight_ == 0; });
  }

  /// Ends input, drains every queue in topological order and flushes held
  /// records (join partners, window remainders) to their fate.
  void stop() {
    if (!running_)
      return;
    running_ = false;
    for (auto &n : nodes_)
      n->stage->shut();
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i]->upstream.empty())
        close(i);
    for (auto &n : nodes_)
      if (n->worker.joinable())
        n->worker.join();
    for (auto &n : nodes_)
      if (auto *em = dynamic_cast<EmitterStage *>(n->stage.get()))
        em->stop_ws();
  }

  PipelineStats stats() const {
    PipelineStats s;
    s.consumed = counters_.consumed;
    s.emitted = counters_.emitted;
    s.join_drops = counters_.join_drops;
    s.window_drops = counters_.window_drops;
    s.dead = counters_.dead;
    s.commands_forwarded = counters_.commands_forwarded;
    s.acks_relayed = counters_.acks_relayed;
    return s;
  }

  /// WebSocket port of an hmi emitter stage.
  std::uint16_t hmi_port(const std::string &stage) const {
    auto it = index_.find(stage);
    if (it == index_.end())
      return 0;
    auto *em = dynamic_cast<EmitterStage *>(nodes_[it->second]->stage.get());
    return em ? em->ws_port() : 0;
  }

  const PipelineContext &context() const { return ctx_; }
  const GraphSpec &spec() const { return spec_; }

private:
  struct Item {
    bool raw = false;
    std::string port; // input port, or the topic for raw items
    std::string payload;
    WireRecord record;
    std::size_t edge = 0;
  };
  struct Route {
    std::size_t edge;
    std::size_t target;
    std::string port;
  };
  struct Node {
    std::unique_ptr<Stage> stage;
    std::map<std::string, std::vector<Route>> routes;
    std::set<std::size_t> upstream;
    std::size_t open_upstream = 0;
    bool unbounded = false;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Item> inbox;
    bool closed = false;
    std::thread worker;
  };

  void push(std::size_t i, Item item) {
    auto &n = *nodes_[i];
    {
      std::lock_guard lock(idle_mu_);
      ++inflight_;
    }
    std::unique_lock lock(n.mu);
    if (!n.unbounded)
      n.cv.wait(lock, [&] { return n.inbox.size() < ctx_.queue_capacity || n.closed; });
    n.inbox.push_back(std::move(item));
    n.cv.notify_all();
  }

  void close(std::size_t i) {
    auto &n = *nodes_[i];
    std::lock_guard lock(n.mu);
    n.closed = true;
    n.cv.notify_all();
  }

  void done_one() {
    std::lock_guard lock(idle_mu_);
    if (--inflight_ == 0)
      idle_cv_.notify_all();
  }

  void run(std::size_t i) {
    auto &n = *nodes_[i];
    EmitFn emit = [this, &n](const std::string &port, WireRecord r) {
      auto it = n.routes.find(port);
      if (it == n.routes.end())
        return; // optional port left open
      const auto &routes = it->second;
      for (std::size_t k = 0; k < routes.size(); ++k) {
        WireRecord copy = k + 1 == routes.size() ? std::move(r) : r;
        if (k > 0) {
          copy.lineage = 0; // fan-out copies do not multiply the accounting
          copy.id = next_record_id();
        }
        if (ctx_.on_edge)
          ctx_.on_edge(routes[k].edge, true, copy.id);
        Item item;
        item.port = routes[k].port;
        item.edge = routes[k].edge;
        item.record = std::move(copy);
        push(routes[k].target, std::move(item));
      }
    };
    while (true) {
      Item item;
      {
        std::unique_lock lock(n.mu);
        n.cv.wait(lock, [&] { return !n.inbox.empty() || n.closed; });
        if (n.inbox.empty())
          break;
        item = std::move(n.inbox.front());
        n.inbox.pop_front();
        n.cv.notify_all();
      }
      const auto lineage = item.raw ? 0 : item.record.lineage;
      try {
        if (item.raw) {
          n.stage->ingest(item.port, item.payload, emit);
        } else {
          if (ctx_.on_edge)
            ctx_.on_edge(item.edge, false, item.record.id);
          n.stage->process(item.port, std::move(item.record), emit);
        }
      } catch (const std::exception &) {
        counters_.dead += lineage; // a stage bug must not lose accounting
      }
      done_one();
    }
    try {
      n.stage->finish(emit);
    } catch (const std::exception &) {
    }
    std::set<std::size_t> targets;
    for (const auto &[port, routes] : n.routes)
      for (const auto &r : routes)
        targets.insert(r.target);
    for (auto target : targets) {
      auto &t = *nodes_[target];
      bool last;
      {
        std::lock_guard lock(t.mu);
        last = t.open_upstream > 0 && --t.open_upstream == 0;
      }
      if (last)
        close(target);
    }
  }

  GraphSpec spec_;
  PipelineContext ctx_;
  Counters counters_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::map<std::string, std::size_t> index_;
  bool running_ = false;
  std::mutex idle_mu_;
  std::condition_variable idle_cv_;
  std::uint64_t inflight_ = 0;
};

} // namespace dsm::wires
