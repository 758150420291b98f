#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "dsm/wires/record.hpp"

namespace dsm::wires {

/// Tolerance join over N time-ordered inputs.
///
/// The earliest pending record E (ties go to the lower input index) merges
/// with the head of every other input when each head lies in
/// [E.t, E.t + tol]. E is dropped as soon as some input provably has no
/// partner for it: its head is later than E.t + tol, or it is empty and has
/// already been seen past E.t + tol. Otherwise the join waits. Decisions
/// depend only on per-input order, never on how inputs interleave, so the
/// output equals the offline greedy alignment of the complete streams.
class JoinCore {
public:
  JoinCore(std::vector<std::string> inputs, std::int64_t tolerance_us, std::string stage_id = "join",
           std::size_t max_pending = 4096)
      : names_(std::move(inputs)), tol_(tolerance_us), stage_(std::move(stage_id)), max_pending_(max_pending),
        fifo_(names_.size()), last_(names_.size()) {}

  void push(std::size_t input, WireRecord r, std::vector<WireRecord> &out) {
    if (last_[input] && r.t_us < *last_[input]) {
      drop(r); // out of order on its own input: cannot be aligned
      return;
    }
    last_[input] = r.t_us;
    fifo_[input].push_back(std::move(r));
    if (fifo_[input].size() > max_pending_) {
      drop(fifo_[input].front()); // a silent partner input: shed the oldest
      fifo_[input].pop_front();
    }
    while (step(false, out)) {
    }
  }

  /// No more input will arrive: settle everything still pending.
  void close(std::vector<WireRecord> &out) {
    while (step(true, out)) {
    }
  }

  std::uint64_t dropped_records() const { return dropped_records_; }
  std::uint64_t dropped_lineage() const { return dropped_lineage_; }
  std::size_t pending() const {
    std::size_t n = 0;
    for (const auto &f : fifo_)
      n += f.size();
    return n;
  }
  const std::vector<std::string> &inputs() const { return names_; }

private:
  bool step(bool final, std::vector<WireRecord> &out) {
    std::optional<std::size_t> e;
    for (std::size_t i = 0; i < fifo_.size(); ++i)
      if (!fifo_[i].empty() && (!e || fifo_[i].front().t_us < fifo_[*e].front().t_us))
        e = i;
    if (!e)
      return false;
    const std::int64_t t = fifo_[*e].front().t_us;
    if (!final)
      for (std::size_t i = 0; i < fifo_.size(); ++i)
        if (fifo_[i].empty() && (!last_[i] || *last_[i] < t))
          return false; // an earlier record may still arrive on i
    bool fail = false, wait = false;
    for (std::size_t j = 0; j < fifo_.size(); ++j) {
      if (j == *e)
        continue;
      if (!fifo_[j].empty()) {
        if (fifo_[j].front().t_us > t + tol_)
          fail = true;
      } else if (final || (last_[j] && *last_[j] > t + tol_)) {
        fail = true;
      } else {
        wait = true;
      }
    }
    if (fail) {
      drop(fifo_[*e].front());
      fifo_[*e].pop_front();
      return true;
    }
    if (wait)
      return false;
    out.push_back(merge());
    return true;
  }

  WireRecord merge() {
    WireRecord m;
    m.node_id = "gateway";
    m.channel = stage_;
    m.lineage = 0;
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < fifo_.size(); ++i) {
      auto r = std::move(fifo_[i].front());
      fifo_[i].pop_front();
      sum += r.t_us;
      m.lineage += r.lineage;
      for (const auto &[k, v] : r.values)
        m.values[names_[i] + "." + k] = v;
      for (const auto &[k, v] : r.tags)
        m.tags.emplace(k, v);
    }
    m.t_us = sum / static_cast<std::int64_t>(fifo_.size());
    m.id = next_record_id();
    return m;
  }

  void drop(const WireRecord &r) {
    ++dropped_records_;
    dropped_lineage_ += r.lineage;
  }

  std::vector<std::string> names_;
  std::int64_t tol_;
  std::string stage_;
  std::size_t max_pending_;
  std::vector<std::deque<WireRecord>> fifo_;
  std::vector<std::optional<std::int64_t>> last_;
  std::uint64_t dropped_records_ = 0;
  std::uint64_t dropped_lineage_ = 0;
};

} // namespace dsm::wires
