#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/dsp/features.hpp"
#include "dsm/net/websocket.hpp"
#include "dsm/quality/model.hpp"
#include "dsm/quality/recommend.hpp"
#include "dsm/wires/graph.hpp"
#include "dsm/wires/join.hpp"
#include "dsm/wires/record.hpp"

namespace dsm::wires {

using MessageFn = std::function<void(const std::string &topic, const std::string &payload)>;

/// What a running graph may touch outside itself.
struct PipelineContext {
  /// Returns a handle for unsubscribe. Handlers may run on any thread and
  /// must not block.
  std::function<int(const std::string &filter, MessageFn)> subscribe;
  std::function<void(int)> unsubscribe;
  std::function<void(const std::string &topic, const std::string &payload, int qos)> publish;
  std::function<void(const std::string &line)> cloud;
  std::function<std::int64_t()> now_us;
  std::shared_ptr<quality::ModelSlot> model = std::make_shared<quality::ModelSlot>();
  std::string base_dir = ".";
  std::size_t queue_capacity = 1024;
  /// Sees every record a terminal stage emits (after emission).
  std::function<void(const std::string &stage, const WireRecord &)> on_emit;
  /// Test hook: edge index, true when sent / false when received, record id.
  std::function<void(std::size_t edge, bool sent, std::uint64_t id)> on_edge;

  std::string resolve(const std::string &path) const {
    std::filesystem::path p(path);
    return p.is_absolute() ? path : (std::filesystem::path(base_dir) / p).string();
  }
};

struct Counters {
  std::atomic<std::uint64_t> consumed{0};
  std::atomic<std::uint64_t> emitted{0};
  std::atomic<std::uint64_t> join_drops{0};
  std::atomic<std::uint64_t> window_drops{0};
  std::atomic<std::uint64_t> dead{0};
  std::atomic<std::uint64_t> commands_forwarded{0};
  std::atomic<std::uint64_t> acks_relayed{0};
};

using EmitFn = std::function<void(const std::string &port, WireRecord)>;

class Stage {
public:
  Stage(StageSpec spec, PipelineContext &ctx, Counters &counters)
      : spec_(std::move(spec)), ctx_(ctx), counters_(counters) {}
  virtual ~Stage() = default;

  /// Acquires resources; throws StartupFailure. Runs before any record flows.
  virtual void prepare() {}
  /// Starts external input (subscriptions); called once all stages are prepared.
  virtual void open(const std::function<void(std::string topic, std::string payload)> &) {}
  /// Ends external input.
  virtual void shut() {}
  virtual void process(const std::string &port, WireRecord r, const EmitFn &emit) = 0;
  /// No more input: flush whatever is held.
  virtual void finish(const EmitFn &) {}
  /// Raw broker input (subscriber stages only).
  virtual void ingest(const std::string &, const std::string &, const EmitFn &) {}

  const StageSpec &spec() const { return spec_; }
  const std::string &id() const { return spec_.id; }

protected:
  [[noreturn]] void startup_failure(const std::string &why) const {
    throw Error(Errc::startup_failure, spec_.id, why);
  }

  void dead_letter(WireRecord r, const std::string &reason, const EmitFn &emit) {
    counters_.dead += r.lineage;
    r.lineage = 0;
    r.tags["dead_letter"] = reason;
    emit("dead", std::move(r));
  }

  void terminal(const WireRecord &r) {
    counters_.emitted += r.lineage;
    if (ctx_.on_emit)
      ctx_.on_emit(spec_.id, r);
  }

  StageSpec spec_;
  PipelineContext &ctx_;
  Counters &counters_;
};

class SubscriberStage : public Stage {
public:
  using Stage::Stage;

  void open(const std::function<void(std::string, std::string)> &deliver) override {
    if (!ctx_.subscribe)
      startup_failure("no broker handle");
    handle_ = ctx_.subscribe(spec_.params["filter"].get<std::string>(),
                             [deliver](const std::string &t, const std::string &p) { deliver(t, p); });
  }

  void shut() override {
    if (handle_ && ctx_.unsubscribe)
      ctx_.unsubscribe(*handle_);
    handle_.reset();
  }

  void ingest(const std::string &topic, const std::string &payload, const EmitFn &emit) override {
    ++counters_.consumed;
    WireRecord r;
    try {
      r = record_from_message(decode_message(payload));
    } catch (const Error &first) {
      auto doc = nlohmann::json::parse(payload, nullptr, false);
      try {
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("t_us"))
          throw first;
        r = record_from_json(doc);
      } catch (const std::exception &) {
        ++counters_.dead; // undecodable: counted, nothing downstream can use it
        return;
      }
    }
    r.tags["topic"] = topic;
    emit("out", std::move(r));
  }

  void process(const std::string &, WireRecord, const EmitFn &) override {}

private:
  std::optional<int> handle_;
};

/// Re-chunks sample streams per source into size-sample windows every hop samples.
class WindowStage : public Stage {
public:
  using Stage::Stage;

  void prepare() override {
    size_ = spec_.params["size"].get<std::size_t>();
    hop_ = spec_.params["hop"].get<std::size_t>();
  }

  void process(const std::string &, WireRecord r, const EmitFn &emit) override {
    if (r.samples.empty() || !(r.fs_hz > 0)) {
      dead_letter(std::move(r), "window: record has no sample stream", emit);
      return;
    }
    auto &b = buf_[r.node_id + "/" + r.channel];
    if (b.samples.empty() || b.fs != r.fs_hz) {
      if (!b.samples.empty())
        counters_.window_drops += std::exchange(b.lineage, 0);
      b = {};
      b.t0 = r.t_us;
      b.fs = r.fs_hz;
      b.node = r.node_id;
      b.channel = r.channel;
    }
    b.lineage += r.lineage;
    b.samples.insert(b.samples.end(), r.samples.begin(), r.samples.end());
    while (b.samples.size() >= size_) {
      WireRecord w;
      w.node_id = b.node;
      w.channel = b.channel;
      w.t_us = b.t0;
      w.fs_hz = b.fs;
      w.samples.assign(b.samples.begin(), b.samples.begin() + static_cast<std::ptrdiff_t>(size_));
      w.lineage = std::exchange(b.lineage, 0);
      w.id = next_record_id();
      b.samples.erase(b.samples.begin(), b.samples.begin() + static_cast<std::ptrdiff_t>(hop_));
      b.t0 += std::llround(static_cast<double>(hop_) * 1e6 / b.fs);
      emit("out", std::move(w));
    }
  }

  void finish(const EmitFn &) override {
    for (auto &[k, b] : buf_)
      counters_.window_drops += std::exchange(b.lineage, 0);
    buf_.clear();
  }

private:
  struct Buf {
    std::int64_t t0 = 0;
    double fs = 0;
    std::string node, channel;
    std::vector<double> samples;
    std::uint64_t lineage = 0;
  };
  std::size_t size_ = 0, hop_ = 0;
  std::map<std::string, Buf> buf_;
};

/// Keeps the named features, computing any the record lacks from its samples.
class FeatureStage : public Stage {
public:
  using Stage::Stage;

  void prepare() override {
    for (const auto &n : spec_.params["names"])
      names_.push_back(n.get<std::string>());
  }

  void process(const std::string &, WireRecord r, const EmitFn &emit) override {
    std::map<std::string, double> out;
    std::optional<FeatureMap> computed;
    for (const auto &n : names_) {
      if (auto it = r.values.find(n); it != r.values.end()) {
        out[n] = it->second;
        continue;
      }
      if (!computed) {
        if (r.samples.size() < 2) {
          dead_letter(std::move(r), "MissingFeature(" + n + ")", emit);
          return;
        }
        try {
          computed = r.fs_hz > 0 ? dsp::full_features(r.samples, r.fs_hz).to_map()
                                 : dsp::window_features(r.samples).to_map();
        } catch (const Error &e) {
          dead_letter(std::move(r), e.what(), emit);
          return;
        }
      }
      auto it = computed->find(n);
      if (it == computed->end()) {
        dead_letter(std::move(r), "MissingFeature(" + n + ")", emit);
        return;
      }
      out[n] = it->second;
    }
    r.values = std::move(out);
    r.samples.clear();
    r.fs_hz = 0;
    emit("out", std::move(r));
  }

private:
  std::vector<std::string> names_;
};

class JoinStage : public Stage {
public:
  using Stage::Stage;

  void prepare() override {
    std::vector<std::string> names;
    for (const auto &n : spec_.params["inputs"])
      names.push_back(n.get<std::string>());
    core_.emplace(names, spec_.params["tolerance_us"].get<std::int64_t>(), spec_.id,
                  spec_.params.value("max_pending", std::size_t{4096}));
  }

  void process(const std::string &port, WireRecord r, const EmitFn &emit) override {
    const auto &names = core_->inputs();
    auto i = static_cast<std::size_t>(std::find(names.begin(), names.end(), port) - names.begin());
    std::vector<WireRecord> out;
    core_->push(i, std::move(r), out);
    settle(out, emit);
  }

  void finish(const EmitFn &emit) override {
    std::vector<WireRecord> out;
    core_->close(out);
    settle(out, emit);
  }

private:
  void settle(std::vector<WireRecord> &out, const EmitFn &emit) {
    auto lineage = core_->dropped_lineage();
    counters_.join_drops += lineage - reported_;
    reported_ = lineage;
    for (auto &m : out)
      emit("out", std::move(m));
  }

  std::optional<JoinCore> core_;
  std::uint64_t reported_ = 0;
};

/// Adds risk and risk_alarm from the current model and, with a candidate
/// grid, the recommended setting. Each record reads the model slot once.
class ScoreStage : public Stage {
public:
  using Stage::Stage;

  void prepare() override {
    auto path = ctx_.resolve(spec_.params["model_path"].get<std::string>());
    try {
      ctx_.model->set(quality::load_model(path));
    } catch (const Error &e) {
      startup_failure(e.what());
    }
    if (spec_.params.contains("recommend")) {
      const auto &g = spec_.params["recommend"];
      grid_ = quality::grid_of(g["spindle_rpm"].get<std::vector<double>>(), g["feed_mm_s"].get<std::vector<double>>());
    }
  }

  void process(const std::string &, WireRecord r, const EmitFn &emit) override {
    auto model = ctx_.model->get();
    if (!model) {
      dead_letter(std::move(r), "no model loaded", emit);
      return;
    }
    double risk;
    std::optional<quality::Recommendation> rec;
    try {
      risk = quality::predict_risk(*model, r.values);
      if (!grid_.empty())
        rec = quality::recommend_parameters(*model, r.values, grid_, quality::machine_surrogate);
    } catch (const Error &e) {
      dead_letter(std::move(r), e.what(), emit);
      return;
    }
    r.values["risk"] = risk;
    r.values["risk_alarm"] = risk >= model->threshold ? 1.0 : 0.0;
    if (rec) {
      r.values["rec_spindle_rpm"] = rec->candidate.spindle_rpm;
      r.values["rec_feed_mm_s"] = rec->candidate.feed_mm_s;
      r.values["rec_risk"] = rec->risk;
    }
    r.tags["model_version"] = model->version;
    emit("out", std::move(r));
  }

private:
  std::vector<quality::Candidate> grid_;
};

/// Tags each record with whether `field` reached `level`; never filters.
class ThresholdStage : public Stage {
public:
  using Stage::Stage;

  void process(const std::string &, WireRecord r, const EmitFn &emit) override {
    const auto field = spec_.params["field"].get<std::string>();
    auto it = r.values.find(field);
    r.tags["threshold." + field] =
        it == r.values.end() ? "missing" : (it->second >= spec_.params["level"].get<double>() ? "above" : "below");
    emit("out", std::move(r));
  }
};

class LoggerStage : public Stage {
public:
  using Stage::Stage;

  void prepare() override {
    path_ = ctx_.resolve(spec_.params["path"].get<std::string>());
    auto dir = std::filesystem::path(path_).parent_path();
    std::error_code ec;
    if (!dir.empty())
      std::filesystem::create_directories(dir, ec);
    out_.open(path_, std::ios::trunc);
    if (!out_)
      startup_failure("cannot open " + path_);
  }

  void process(const std::string &, WireRecord r, const EmitFn &) override {
    out_ << record_json(r).dump() << '\n';
    terminal(r);
  }

  void finish(const EmitFn &) override { out_.flush(); }

private:
  std::string path_;
  std::ofstream out_;
};

/// cloud: one NDJSON line per record to the uplink. topic: republish.
/// hmi: WebSocket push of every record as {"kind":"frame", ...}; inbound
/// set_params commands are forwarded to the machine with origin "operator"
/// and the machine's acks are relayed as {"kind":"ack", ...}.
class EmitterStage : public Stage {
public:
  using Stage::Stage;
  ~EmitterStage() override { stop_ws(); }

  void prepare() override {
    target_ = spec_.params["target"].get<std::string>();
    if (target_ == "cloud" && !ctx_.cloud)
      startup_failure("no cloud uplink configured");
    if (target_ == "topic" && !ctx_.publish)
      startup_failure("no broker handle");
    if (target_ == "hmi") {
      cmd_topic_ = spec_.params.value("machine_cmd_topic", "");
      ack_topic_ = spec_.params.value("machine_ack_topic", "");
      auto_apply_ = spec_.params.value("auto_apply", false);
      try {
        ws_ = std::make_unique<net::WsServer>(spec_.params.value("host", "127.0.0.1"),
                                              static_cast<std::uint16_t>(spec_.params.value("port", 0)));
        ws_->on_message([this](net::WsServer::ClientId c, const std::string &m) { on_command(c, m); });
        ws_->start();
      } catch (const Error &e) {
        startup_failure(e.what());
      }
    }
  }

  void open(const std::function<void(std::string, std::string)> &) override {
    if (target_ == "hmi" && !ack_topic_.empty() && ctx_.subscribe)
      ack_sub_ = ctx_.subscribe(ack_topic_, [this](const std::string &, const std::string &p) { on_ack(p); });
  }

  void shut() override {
    if (ack_sub_ && ctx_.unsubscribe)
      ctx_.unsubscribe(*ack_sub_);
    ack_sub_.reset();
  }

  void process(const std::string &, WireRecord r, const EmitFn &) override {
    auto j = record_json(r);
    if (target_ == "cloud") {
      ctx_.cloud(j.dump());
    } else if (target_ == "topic") {
      ctx_.publish(spec_.params["topic"].get<std::string>(), j.dump(), spec_.params.value("qos", 1));
    } else {
      j["kind"] = "frame";
      ws_->broadcast(j.dump());
      if (auto_apply_)
        maybe_auto_apply(r);
    }
    terminal(r);
  }

  void finish(const EmitFn &) override {}

  std::uint16_t ws_port() const { return ws_ ? ws_->port() : 0; }
  void stop_ws() {
    if (ws_)
      ws_->stop();
  }

private:
  void on_command(net::WsServer::ClientId client, const std::string &text) {
    auto doc = nlohmann::json::parse(text, nullptr, false);
    auto reply_error = [&](const std::string &why) {
      ws_->send_to(client, nlohmann::json{{"kind", "error"}, {"reason", why}}.dump());
    };
    if (doc.is_discarded() || !doc.is_object())
      return reply_error("MalformedDocument(command)");
    if (doc.value("cmd", "") != "set_params")
      return reply_error("UnknownCommand(" + doc.value("cmd", std::string()) + ")");
    if (!doc.contains("args") || !doc["args"].is_object() || !doc.contains("req_id") || !doc["req_id"].is_string())
      return reply_error("MalformedDocument(args/req_id)");
    if (cmd_topic_.empty() || !ctx_.publish)
      return reply_error("no machine command topic configured");
    forward(doc["req_id"].get<std::string>(), doc["args"], "operator");
  }

  void forward(const std::string &req_id, const nlohmann::json &args, const std::string &origin) {
    {
      std::lock_guard lock(mu_);
      pending_.insert(req_id);
    }
    nlohmann::json cmd{{"cmd", "set_params"}, {"args", args}, {"req_id", req_id}, {"origin", origin}};
    ctx_.publish(cmd_topic_, cmd.dump(), 1);
    ++counters_.commands_forwarded;
  }

  void on_ack(const std::string &payload) {
    auto doc = nlohmann::json::parse(payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("req_id") || !doc["req_id"].is_string())
      return;
    auto id = doc["req_id"].get<std::string>();
    {
      std::lock_guard lock(mu_);
      if (!pending_.erase(id))
        return;
      if (id == auto_inflight_)
        auto_inflight_.clear();
    }
    doc["kind"] = "ack";
    ws_->broadcast(doc.dump());
    ++counters_.acks_relayed;
  }

  void maybe_auto_apply(const WireRecord &r) {
    if (cmd_topic_.empty() || r.values.count("risk_alarm") == 0 || r.values.at("risk_alarm") < 1 ||
        !r.values.count("rec_spindle_rpm"))
      return;
    std::string id;
    {
      std::lock_guard lock(mu_);
      if (!auto_inflight_.empty())
        return;
      id = auto_inflight_ = spec_.id + "-auto-" + std::to_string(++auto_seq_);
    }
    forward(id, {{"spindle_rpm", r.values.at("rec_spindle_rpm")}, {"feed_mm_s", r.values.at("rec_feed_mm_s")}},
            "auto");
  }

  std::string target_, cmd_topic_, ack_topic_;
  bool auto_apply_ = false;
  std::unique_ptr<net::WsServer> ws_;
  std::optional<int> ack_sub_;
  std::mutex mu_;
  std::set<std::string> pending_;
  std::string auto_inflight_;
  std::uint64_t auto_seq_ = 0;
};

inline std::unique_ptr<Stage> make_stage(const StageSpec &s, PipelineContext &ctx, Counters &c) {
  if (s.kind == "subscriber")
    return std::make_unique<SubscriberStage>(s, ctx, c);
  if (s.kind == "window")
    return std::make_unique<WindowStage>(s, ctx, c);
  if (s.kind == "feature")
    return std::make_unique<FeatureStage>(s, ctx, c);
  if (s.kind == "join")
    return std::make_unique<JoinStage>(s, ctx, c);
  if (s.kind == "score")
    return std::make_unique<ScoreStage>(s, ctx, c);
  if (s.kind == "threshold")
    return std::make_unique<ThresholdStage>(s, ctx, c);
  if (s.kind == "emitter")
    return std::make_unique<EmitterStage>(s, ctx, c);
  if (s.kind == "logger")
    return std::make_unique<LoggerStage>(s, ctx, c);
  throw Error(Errc::graph_invalid, s.id, "unknown stage kind " + s.kind);
}

} // namespace dsm::wires
