#pragma once

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/digest.hpp"
#include "dsm/core/error.hpp"
#include "dsm/measurement/topic.hpp"
#include "dsm/quality/dataset.hpp"

namespace dsm::cloud {

namespace fs = std::filesystem;

/// Content hash of a batch body; the id a sender must present.
inline std::string batch_id_of(std::string_view body) { return sha256_hex(body); }

/// A batch body is NDJSON. Every line names its session and kind:
///   {"session_id":..,"kind":"record","t_us":..,"node_id":..,"channel":..,"values":{..},"tags":{..}}
///   {"session_id":..,"kind":"label","t_us":..,"defect":0|1,"p":..,"severity":..}
inline std::vector<nlohmann::json> parse_batch(std::string_view body) {
  std::vector<nlohmann::json> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < body.size()) {
    auto end = body.find('\n', pos);
    if (end == std::string_view::npos)
      end = body.size();
    auto line = body.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty() || line == "\r")
      continue;
    auto where = "line " + std::to_string(line_no);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw Error(Errc::malformed_batch, where, "not a JSON object");
    if (!j.contains("session_id") || !j["session_id"].is_string() || !is_token(j["session_id"].get<std::string>()))
      throw Error(Errc::malformed_batch, where, "session_id must be a token");
    if (!j.contains("t_us") || !j["t_us"].is_number_integer())
      throw Error(Errc::malformed_batch, where, "t_us must be an integer");
    auto kind = j.value("kind", "");
    if (kind == "record") {
      if (!j.contains("values") || !j["values"].is_object())
        throw Error(Errc::malformed_batch, where, "record without values");
      for (const auto &[k, v] : j["values"].items())
        if (!v.is_number())
          throw Error(Errc::malformed_batch, where, "value " + k + " is not a number");
    } else if (kind == "label") {
      if (!j.contains("defect") || !(j["defect"] == 0 || j["defect"] == 1))
        throw Error(Errc::malformed_batch, where, "label defect must be 0 or 1");
    } else {
      throw Error(Errc::malformed_batch, where, "kind must be record or label");
    }
    out.push_back(std::move(j));
  }
  return out;
}

struct IngestAck {
  std::string batch_id;
  bool ok = false;
  bool duplicate = false;
  std::size_t stored = 0;
  std::string error;

  nlohmann::json to_json() const {
    nlohmann::json j{{"batch_id", batch_id}, {"ok", ok}};
    if (ok) {
      j["duplicate"] = duplicate;
      j["stored"] = stored;
    } else {
      j["error"] = error;
    }
    return j;
  }
};

struct SessionSummary {
  std::string session_id;
  std::size_t records = 0;
  std::size_t labels = 0;
};

/// Export picks the nearest label no further than this from a record.
inline constexpr std::int64_t label_reach_us = 1'000'000;

/// Flat-file store: sessions/<id>.ndjson plus an index of accepted batch ids.
/// A batch is appended exactly once however often it is delivered.
class SinkStore {
public:
  explicit SinkStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "sessions", ec);
    if (ec)
      throw Error(Errc::io_error, root_.string(), ec.message());
    std::ifstream in(index_path());
    std::string id;
    while (std::getline(in, id))
      if (!id.empty())
        done_.insert(id);
  }

  IngestAck ingest(const std::string &claimed_id, const std::string &body) {
    IngestAck ack;
    ack.batch_id = batch_id_of(body);
    if (!claimed_id.empty() && claimed_id != ack.batch_id) {
      ack.error = "MalformedBatch(batch_id): does not match content";
      return ack;
    }
    std::vector<nlohmann::json> lines;
    try {
      lines = parse_batch(body);
    } catch (const Error &e) {
      ack.error = e.what();
      return ack;
    }
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return !busy_.count(ack.batch_id); }); // a concurrent copy finishes first
      if (done_.count(ack.batch_id)) {
        ack.ok = ack.duplicate = true;
        return ack;
      }
      busy_.insert(ack.batch_id);
    }
    std::map<std::string, std::string> by_session;
    for (const auto &j : lines)
      by_session[j["session_id"].get<std::string>()] += j.dump() + "\n";
    try {
      for (const auto &[sid, text] : by_session) {
        auto w = writer(sid);
        std::lock_guard lock(w->mu);
        std::ofstream out(session_path(sid), std::ios::binary | std::ios::app);
        out << text;
        if (!out)
          throw Error(Errc::io_error, sid, "append failed");
      }
    } catch (...) {
      std::lock_guard lock(mu_);
      busy_.erase(ack.batch_id);
      cv_.notify_all();
      throw;
    }
    std::lock_guard lock(mu_);
    std::ofstream(index_path(), std::ios::app) << ack.batch_id << '\n';
    done_.insert(ack.batch_id);
    busy_.erase(ack.batch_id);
    cv_.notify_all();
    ack.ok = true;
    ack.stored = lines.size();
    return ack;
  }

  std::vector<SessionSummary> sessions() const {
    std::vector<SessionSummary> out;
    for (const auto &sid : session_ids()) {
      SessionSummary s{sid};
      for (const auto &j : read_session(sid))
        (j["kind"] == "label" ? s.labels : s.records)++;
      out.push_back(s);
    }
    return out;
  }

  /// Sessions matching the filter: empty or "*" is all, "a,b" a list, "pre*" a prefix.
  std::vector<std::string> select(const std::string &filter) const {
    std::vector<std::string> out;
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos <= filter.size()) {
      auto c = filter.find(',', pos);
      if (c == std::string::npos)
        c = filter.size();
      if (c > pos)
        parts.push_back(filter.substr(pos, c - pos));
      pos = c + 1;
    }
    for (const auto &sid : session_ids()) {
      bool keep = parts.empty();
      for (const auto &p : parts)
        if (p == "*" || p == sid || (p.back() == '*' && sid.rfind(p.substr(0, p.size() - 1), 0) == 0))
          keep = true;
      if (keep)
        out.push_back(sid);
    }
    return out;
  }

  /// Feature records joined with the nearest ground-truth label of their
  /// session, ordered by (session, t_us). Scoring outputs are not features.
  std::vector<quality::SessionRecord> export_dataset(const std::string &filter) const {
    auto ids = select(filter);
    if (ids.empty())
      throw Error(Errc::no_sessions, filter.empty() ? "*" : filter, "no stored session matches");
    std::vector<quality::SessionRecord> out;
    for (const auto &sid : ids) {
      std::vector<std::pair<std::int64_t, int>> labels;
      std::vector<quality::SessionRecord> rows;
      for (const auto &j : read_session(sid)) {
        if (j["kind"] == "label") {
          labels.emplace_back(j["t_us"].get<std::int64_t>(), j["defect"].get<int>());
          continue;
        }
        quality::SessionRecord r;
        r.session_id = sid;
        r.t_us = j["t_us"].get<std::int64_t>();
        for (const auto &[k, v] : j["values"].items())
          if (!is_scoring_output(k))
            r.features[k] = v.get<double>();
        rows.push_back(std::move(r));
      }
      std::stable_sort(labels.begin(), labels.end(), [](auto &a, auto &b) { return a.first < b.first; });
      std::stable_sort(rows.begin(), rows.end(), [](auto &a, auto &b) { return a.t_us < b.t_us; });
      for (auto &r : rows) {
        auto it = std::lower_bound(labels.begin(), labels.end(), std::make_pair(r.t_us, -1));
        const std::pair<std::int64_t, int> *best = nullptr;
        if (it != labels.end())
          best = &*it;
        if (it != labels.begin() && (!best || r.t_us - std::prev(it)->first <= best->first - r.t_us))
          best = &*std::prev(it); // ties go to the earlier label
        if (best && std::llabs(best->first - r.t_us) <= label_reach_us)
          r.label = best->second;
        out.push_back(std::move(r));
      }
    }
    return out;
  }

  std::string export_text(const std::string &filter) const {
    std::string s;
    for (const auto &r : export_dataset(filter))
      s += quality::record_line(r) + "\n";
    return s;
  }

  std::vector<nlohmann::json> read_session(const std::string &sid) const {
    std::vector<nlohmann::json> out;
    std::ifstream in(session_path(sid));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty())
        out.push_back(nlohmann::json::parse(line));
    return out;
  }

  const fs::path &root() const { return root_; }

private:
  struct Writer {
    std::mutex mu;
  };

  static bool is_scoring_output(const std::string &k) {
    return k == "risk" || k == "risk_alarm" || k.rfind("rec_", 0) == 0;
  }

  std::shared_ptr<Writer> writer(const std::string &sid) {
    std::lock_guard lock(mu_);
    auto &w = writers_[sid];
    if (!w)
      w = std::make_shared<Writer>();
    return w;
  }

  std::vector<std::string> session_ids() const {
    std::vector<std::string> ids;
    std::error_code ec;
    for (const auto &e : fs::directory_iterator(root_ / "sessions", ec))
      if (e.path().extension() == ".ndjson")
        ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  fs::path session_path(const std::string &sid) const { return root_ / "sessions" / (sid + ".ndjson"); }
  fs::path index_path() const { return root_ / "batches.idx"; }

  fs::path root_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::set<std::string> done_, busy_;
  std::map<std::string, std::shared_ptr<Writer>> writers_;
};

} // namespace dsm::cloud
