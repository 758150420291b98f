#pragma once

// HTTP face of the sink and the uplink's HTTP sender. Pulls in httplib, so
// include it only where a server or client is actually needed.

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dsm/cloud/uplink.hpp"

namespace dsm::cloud {

struct Address {
  std::string host = "127.0.0.1";
  int port = 0;
};

/// "host:port" or ":port" or "port".
inline Address parse_address(const std::string &text) {
  Address a;
  auto colon = text.rfind(':');
  std::string port = colon == std::string::npos ? text : text.substr(colon + 1);
  if (colon != std::string::npos && colon > 0)
    a.host = text.substr(0, colon);
  try {
    std::size_t used = 0;
    a.port = std::stoi(port, &used);
    if (used != port.size() || a.port < 0 || a.port > 65535)
      throw std::invalid_argument("port");
  } catch (const std::exception &) {
    throw Error(Errc::config_invalid, "address", "expected host:port, got " + text);
  }
  return a;
}

inline void reply_json(httplib::Response &res, int status, const nlohmann::json &j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

/// POST /v1/ingest, GET /v1/sessions, GET /v1/export?session=...
class SinkServer {
public:
  SinkServer(SinkStore &store, std::string host = "127.0.0.1", int port = 0)
      : store_(store), host_(std::move(host)), port_(port) {
    srv_.Post("/v1/ingest", [this](const httplib::Request &req, httplib::Response &res) {
      try {
        auto ack = store_.ingest(req.get_header_value("X-Batch-Id"), req.body);
        reply_json(res, ack.ok ? 200 : 400, ack.to_json());
      } catch (const std::exception &e) {
        reply_json(res, 500, {{"ok", false}, {"error", e.what()}});
      }
    });
    srv_.Get("/v1/sessions", [this](const httplib::Request &, httplib::Response &res) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto &s : store_.sessions())
        list.push_back({{"session_id", s.session_id}, {"records", s.records}, {"labels", s.labels}});
      reply_json(res, 200, {{"sessions", list}});
    });
    srv_.Get("/v1/export", [this](const httplib::Request &req, httplib::Response &res) {
      try {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto &r : store_.export_dataset(req.get_param_value("session")))
          rows.push_back(nlohmann::json::parse(quality::record_line(r)));
        reply_json(res, 200, {{"records", rows}});
      } catch (const Error &e) {
        reply_json(res, e.code() == Errc::no_sessions ? 404 : 500, {{"error", e.what()}});
      }
    });
  }

  ~SinkServer() { stop(); }

  void start() {
    if (port_ == 0)
      port_ = srv_.bind_to_any_port(host_);
    else if (!srv_.bind_to_port(host_, port_))
      port_ = -1;
    if (port_ <= 0)
      throw Error(Errc::startup_failure, "cloud-sink", "cannot bind " + host_);
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }

  void stop() {
    srv_.stop();
    if (thread_.joinable())
      thread_.join();
  }

  int port() const { return port_; }

private:
  SinkStore &store_;
  std::string host_;
  int port_;
  httplib::Server srv_;
  std::thread thread_;
};

/// Sends batches to a sink over HTTP. A 4xx answer is a rejection; anything
/// else that is not a 200 ack is a transport failure.
inline SendFn http_sender(const Address &sink) {
  auto client = std::make_shared<httplib::Client>(sink.host, sink.port);
  client->set_connection_timeout(2);
  client->set_read_timeout(5);
  auto mu = std::make_shared<std::mutex>();
  return [client, mu](const std::string &id, const std::string &body, const BatchMeta &meta) {
    httplib::Headers h{{"X-Batch-Id", id}, {"X-Gateway-Id", meta.gateway_id},
                       {"X-Sent-At", std::to_string(meta.sent_at_us)}};
    std::lock_guard lock(*mu);
    auto res = client->Post("/v1/ingest", h, body, "application/x-ndjson");
    if (!res)
      return SendResult::failed;
    if (res->status == 200) {
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      return !j.is_discarded() && j.value("ok", false) && j.value("batch_id", "") == id ? SendResult::acked
                                                                                        : SendResult::failed;
    }
    return res->status >= 400 && res->status < 500 ? SendResult::rejected : SendResult::failed;
  };
}

/// GET /v1/export from a running sink, as dataset lines.
inline std::string fetch_export(const Address &sink, const std::string &filter) {
  httplib::Client c(sink.host, sink.port);
  c.set_connection_timeout(2);
  auto res = c.Get("/v1/export", httplib::Params{{"session", filter}}, httplib::Headers{});
  if (!res)
    throw Error(Errc::gateway_unreachable, sink.host + ":" + std::to_string(sink.port), "sink not reachable");
  auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (res->status == 404)
    throw Error(Errc::no_sessions, filter, j.is_discarded() ? "" : j.value("error", ""));
  if (res->status != 200 || j.is_discarded())
    throw Error(Errc::io_error, "export", "sink answered " + std::to_string(res->status));
  std::string out;
  for (const auto &r : j["records"])
    out += quality::record_line(quality::record_from_line(r.dump())) + "\n";
  return out;
}

} // namespace dsm::cloud
