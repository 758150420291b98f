#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dsm/cloud/sink.hpp"

namespace dsm::cloud {

enum class SendResult {
  acked,   // stored or already stored
  rejected, // the sink refused the content; retrying cannot help
  failed,  // transport failure, outcome unknown: retry
};

struct BatchMeta {
  std::string gateway_id;
  std::int64_t sent_at_us = 0;
};

using SendFn = std::function<SendResult(const std::string &batch_id, const std::string &body, const BatchMeta &)>;

struct UplinkOptions {
  std::string session_id = "run";
  std::string gateway_id = "gateway";
  std::size_t batch_lines = 64;
  int max_attempts = 10; // per flush; a batch still unsent stays queued
  std::chrono::milliseconds backoff{0};
};

struct UplinkStats {
  std::uint64_t lines = 0;
  std::uint64_t batches = 0;
  std::uint64_t attempts = 0;
  std::uint64_t failures = 0;
  std::uint64_t acked = 0;
  std::uint64_t rejected = 0;
};

/// Gateway side of the cloud link: buffers lines, cuts them into batches
/// whose id is the content hash, and retries each batch until acked. Batches
/// are immutable once cut, so every retry carries the same id.
class Uplink {
public:
  Uplink(UplinkOptions opts, SendFn send, std::function<std::int64_t()> now_us = {})
      : opts_(std::move(opts)), send_(std::move(send)), now_(std::move(now_us)) {}

  /// An emitted record in its JSON form.
  void add_record(const nlohmann::json &record) {
    auto j = record;
    j.erase("samples");
    j.erase("fs_hz");
    j["session_id"] = opts_.session_id;
    j["kind"] = "record";
    add_line(j.dump());
  }

  void add_label(std::int64_t t_us, bool defect, double p, double severity) {
    nlohmann::json j{{"session_id", opts_.session_id}, {"kind", "label"}, {"t_us", t_us},
                     {"defect", defect ? 1 : 0},     {"p", p},          {"severity", severity}};
    add_line(j.dump());
  }

  void add_line(std::string line) {
    std::lock_guard lock(mu_);
    pending_.push_back(std::move(line));
    ++stats_.lines;
    if (pending_.size() >= opts_.batch_lines)
      cut();
  }

  /// Sends everything queued. True when nothing is left undelivered.
  bool flush() {
    std::lock_guard send_lock(send_mu_);
    {
      std::lock_guard lock(mu_);
      if (!pending_.empty())
        cut();
    }
    while (true) {
      Batch b;
      {
        std::lock_guard lock(mu_);
        if (outbox_.empty())
          return true;
        b = outbox_.front();
      }
      auto r = deliver(b);
      std::lock_guard lock(mu_);
      if (r == SendResult::failed)
        return false;
      outbox_.pop_front();
      if (r == SendResult::acked) {
        ++stats_.acked;
        acked_.push_back(b.id);
      } else {
        ++stats_.rejected;
      }
    }
  }

  std::size_t queued_batches() const {
    std::lock_guard lock(mu_);
    return outbox_.size();
  }

  UplinkStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  std::vector<std::string> acked_ids() const {
    std::lock_guard lock(mu_);
    return acked_;
  }

private:
  struct Batch {
    std::string id;
    std::string body;
  };

  void cut() {
    std::string body;
    for (const auto &l : pending_)
      body += l + "\n";
    pending_.clear();
    outbox_.push_back({batch_id_of(body), std::move(body)});
    ++stats_.batches;
  }

  SendResult deliver(const Batch &b) {
    for (int attempt = 0; attempt < opts_.max_attempts; ++attempt) {
      if (attempt > 0 && opts_.backoff.count() > 0)
        std::this_thread::sleep_for(opts_.backoff * (1 << std::min(attempt - 1, 6)));
      BatchMeta meta{opts_.gateway_id, now_ ? now_() : 0};
      SendResult r;
      try {
        r = send_(b.id, b.body, meta);
      } catch (const std::exception &) {
        r = SendResult::failed;
      }
      std::lock_guard lock(mu_);
      ++stats_.attempts;
      if (r != SendResult::failed)
        return r;
      ++stats_.failures;
    }
    return SendResult::failed;
  }

  UplinkOptions opts_;
  SendFn send_;
  std::function<std::int64_t()> now_;
  mutable std::mutex mu_;
  std::mutex send_mu_;
  std::vector<std::string> pending_;
  std::deque<Batch> outbox_;
  std::vector<std::string> acked_;
  UplinkStats stats_;
};

/// Direct delivery into a store, for in-process runs.
inline SendFn store_sender(SinkStore &store) {
  return [&store](const std::string &id, const std::string &body, const BatchMeta &) {
    auto ack = store.ingest(id, body);
    return ack.ok ? SendResult::acked : SendResult::rejected;
  };
}

/// Fails a fraction of sends. Half the failures lose the request, the other
/// half deliver it and lose the ack, so the sink sees duplicates.
inline SendFn with_faults(SendFn inner, double failure_rate, std::uint64_t seed,
                          std::shared_ptr<std::uint64_t> injected = nullptr) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  auto mu = std::make_shared<std::mutex>();
  return [=](const std::string &id, const std::string &body, const BatchMeta &meta) {
    double u;
    bool after;
    {
      std::lock_guard lock(*mu);
      u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
      after = ((*rng)() & 1) != 0;
      if (u < failure_rate && injected)
        ++*injected;
    }
    if (u >= failure_rate)
      return inner(id, body, meta);
    if (after)
      inner(id, body, meta);
    return SendResult::failed;
  };
}

} // namespace dsm::cloud
