#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/broker/topic_filter.hpp"
#include "dsm/core/error.hpp"
#include "dsm/dsp/features.hpp"
#include "dsm/wires/record.hpp"

namespace dsm::wires {

enum class ViolationKind {
  parse_error,
  duplicate_id,
  unknown_stage_kind,
  missing_param,
  bad_param,
  dangling_edge,
  type_mismatch,
  cycle_detected,
  unconnected_input,
  unconnected_output,
};

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
  case ViolationKind::parse_error: return "ParseError";
  case ViolationKind::duplicate_id: return "DuplicateId";
  case ViolationKind::unknown_stage_kind: return "UnknownStageKind";
  case ViolationKind::missing_param: return "MissingParam";
  case ViolationKind::bad_param: return "BadParam";
  case ViolationKind::dangling_edge: return "DanglingEdge";
  case ViolationKind::type_mismatch: return "TypeMismatch";
  case ViolationKind::cycle_detected: return "CycleDetected";
  case ViolationKind::unconnected_input: return "UnconnectedInput";
  case ViolationKind::unconnected_output: return "UnconnectedOutput";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string subject;
  std::string detail;
  std::vector<std::string> path; // stage ids along a cycle

  std::string text() const {
    std::string s = std::string(to_string(kind)) + "(" + subject + ")";
    if (!detail.empty())
      s += ": " + detail;
    return s;
  }
};

struct StageSpec {
  std::string id;
  std::string kind;
  nlohmann::json params = nlohmann::json::object();
};

struct Port {
  std::string stage;
  std::string port;
  std::string text() const { return stage + "." + port; }
  bool operator==(const Port &) const = default;
};

struct EdgeSpec {
  Port from;
  Port to;
};

struct GraphSpec {
  std::vector<StageSpec> stages;
  std::vector<EdgeSpec> edges;

  const StageSpec *find(const std::string &id) const {
    for (const auto &s : stages)
      if (s.id == id)
        return &s;
    return nullptr;
  }
};

inline const std::set<std::string> &stage_kinds() {
  static const std::set<std::string> k{"subscriber", "window", "feature", "join",
                                       "score",      "threshold", "emitter", "logger"};
  return k;
}

inline bool is_terminal(const std::string &kind) { return kind == "emitter" || kind == "logger"; }

struct PortTable {
  std::map<std::string, RecordType> inputs;
  std::map<std::string, RecordType> outputs;
  std::set<std::string> optional_outputs;
};

/// Ports of a stage; unknown kinds have none. Join ports follow the
/// `inputs` param (ignored if malformed).
inline PortTable ports_of(const StageSpec &s) {
  PortTable t;
  const auto &p = s.params;
  if (s.kind == "subscriber") {
    RecordType out = RecordType::any;
    if (p.is_object() && p.contains("type") && p["type"].is_string())
      out = record_type_from(p["type"].get<std::string>()).value_or(RecordType::any);
    t.outputs["out"] = out;
  } else if (s.kind == "window") {
    t.inputs["in"] = RecordType::samples;
    t.outputs["out"] = RecordType::samples;
  } else if (s.kind == "feature") {
    t.inputs["in"] = RecordType::any;
    t.outputs["out"] = RecordType::features;
    t.outputs["dead"] = RecordType::any;
    t.optional_outputs.insert("dead");
  } else if (s.kind == "join") {
    if (p.is_object() && p.contains("inputs") && p["inputs"].is_array())
      for (const auto &n : p["inputs"])
        if (n.is_string())
          t.inputs[n.get<std::string>()] = RecordType::features;
    t.outputs["out"] = RecordType::features;
  } else if (s.kind == "score") {
    t.inputs["in"] = RecordType::features;
    t.outputs["out"] = RecordType::scored;
    t.outputs["dead"] = RecordType::any;
    t.optional_outputs.insert("dead");
  } else if (s.kind == "threshold") {
    t.inputs["in"] = RecordType::any;
    t.outputs["out"] = RecordType::any;
  } else if (s.kind == "emitter" || s.kind == "logger") {
    t.inputs["in"] = RecordType::any;
  }
  return t;
}

namespace detail {

inline void check_params(const StageSpec &s, std::vector<Violation> &out) {
  const auto &p = s.params;
  auto missing = [&](const std::string &k) { out.push_back({ViolationKind::missing_param, s.id + "." + k, "", {}}); };
  auto bad = [&](const std::string &k, const std::string &why) {
    out.push_back({ViolationKind::bad_param, s.id + "." + k, why, {}});
  };
  std::set<std::string> allowed;
  auto need = [&](const std::string &k) {
    allowed.insert(k);
    if (!p.contains(k)) {
      missing(k);
      return false;
    }
    return true;
  };
  auto may = [&](const std::string &k) {
    allowed.insert(k);
    return p.contains(k);
  };
  auto positive_int = [&](const std::string &k) {
    return p[k].is_number_integer() && p[k].get<std::int64_t>() >= 1;
  };

  if (s.kind == "subscriber") {
    if (need("filter")) {
      if (!p["filter"].is_string())
        bad("filter", "expected a string");
      else
        try {
          broker::parse_filter(p["filter"].get<std::string>());
        } catch (const Error &e) {
          bad("filter", e.what());
        }
    }
    if (may("type") && (!p["type"].is_string() || !record_type_from(p["type"].get<std::string>())))
      bad("type", "expected samples, features, scored or any");
  } else if (s.kind == "window") {
    bool size_ok = need("size") && positive_int("size") && p["size"].get<std::int64_t>() >= 2;
    if (p.contains("size") && !size_ok)
      bad("size", "expected an integer >= 2");
    if (need("hop")) {
      if (!positive_int("hop"))
        bad("hop", "expected an integer >= 1");
      else if (size_ok && p["hop"].get<std::int64_t>() > p["size"].get<std::int64_t>())
        bad("hop", "hop must not exceed size");
    }
  } else if (s.kind == "feature") {
    if (need("names")) {
      if (!p["names"].is_array() || p["names"].empty())
        bad("names", "expected a non-empty array");
      else
        for (const auto &n : p["names"])
          if (!n.is_string() || !dsp::is_known_feature(n.get<std::string>()))
            bad("names", "unknown feature " + n.dump());
    }
  } else if (s.kind == "join") {
    if (need("inputs")) {
      std::set<std::string> seen;
      if (!p["inputs"].is_array() || p["inputs"].size() < 2)
        bad("inputs", "expected at least two input names");
      else
        for (const auto &n : p["inputs"])
          if (!n.is_string() || !is_token(n.get<std::string>()) || !seen.insert(n.get<std::string>()).second)
            bad("inputs", "input names must be distinct tokens");
    }
    if (need("tolerance_us") && !(p["tolerance_us"].is_number_integer() && p["tolerance_us"].get<std::int64_t>() > 0))
      bad("tolerance_us", "expected an integer > 0");
    if (may("max_pending") && !positive_int("max_pending"))
      bad("max_pending", "expected an integer >= 1");
  } else if (s.kind == "score") {
    if (need("model_path") && !p["model_path"].is_string())
      bad("model_path", "expected a string");
    if (may("recommend")) {
      const auto &r = p["recommend"];
      auto grid_ok = [&](const char *k) {
        if (!r.is_object() || !r.contains(k) || !r[k].is_array() || r[k].empty())
          return false;
        return std::all_of(r[k].begin(), r[k].end(), [](const auto &v) { return v.is_number(); });
      };
      if (!grid_ok("spindle_rpm") || !grid_ok("feed_mm_s") || r.size() != 2)
        bad("recommend", "expected {spindle_rpm: [..], feed_mm_s: [..]}");
    }
  } else if (s.kind == "threshold") {
    if (need("field") && !p["field"].is_string())
      bad("field", "expected a string");
    if (need("level") && !p["level"].is_number())
      bad("level", "expected a number");
  } else if (s.kind == "emitter") {
    std::string target;
    if (need("target")) {
      if (p["target"].is_string())
        target = p["target"].get<std::string>();
      if (target != "cloud" && target != "hmi" && target != "topic")
        bad("target", "expected cloud, hmi or topic");
    }
    if (target == "topic") {
      if (need("topic") && (!p["topic"].is_string() || !broker::valid_topic_name(p["topic"].get<std::string>())))
        bad("topic", "expected a topic name");
      if (may("qos") && !(p["qos"].is_number_integer() && (p["qos"] == 0 || p["qos"] == 1)))
        bad("qos", "expected 0 or 1");
    }
    if (target == "hmi") {
      if (may("host") && !p["host"].is_string())
        bad("host", "expected a string");
      if (may("port") && !(p["port"].is_number_integer() && p["port"] >= 0 && p["port"] <= 65535))
        bad("port", "expected a port number");
      for (const char *k : {"machine_cmd_topic", "machine_ack_topic"})
        if (may(k) && !p[k].is_string())
          bad(k, "expected a string");
      if (may("auto_apply") && !p["auto_apply"].is_boolean())
        bad("auto_apply", "expected a boolean");
    }
  } else if (s.kind == "logger") {
    if (need("path") && !p["path"].is_string())
      bad("path", "expected a string");
  }
  for (const auto &[k, v] : p.items())
    if (!allowed.count(k))
      bad(k, "unknown parameter");
}

inline std::optional<Port> parse_port(const nlohmann::json &v, const char *fallback) {
  if (!v.is_string())
    return std::nullopt;
  auto s = v.get<std::string>();
  auto dot = s.find('.');
  if (dot == std::string::npos)
    return Port{s, fallback};
  return Port{s.substr(0, dot), s.substr(dot + 1)};
}

/// Reports one cycle per back edge found by depth-first search.
inline void find_cycles(const GraphSpec &g, std::vector<Violation> &out) {
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto &s : g.stages)
    adj[s.id];
  for (const auto &e : g.edges)
    if (adj.count(e.from.stage) && adj.count(e.to.stage))
      adj[e.from.stage].push_back(e.to.stage);
  std::map<std::string, int> color; // 0 new, 1 on stack, 2 done
  std::vector<std::string> stack;
  std::set<std::vector<std::string>> reported;
  std::function<void(const std::string &)> dfs = [&](const std::string &u) {
    color[u] = 1;
    stack.push_back(u);
    for (const auto &v : adj[u]) {
      if (color[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        std::vector<std::string> cyc(it, stack.end());
        auto key = cyc;
        std::rotate(key.begin(), std::min_element(key.begin(), key.end()), key.end());
        if (reported.insert(key).second) {
          std::string text;
          for (const auto &id : cyc)
            text += id + " -> ";
          text += v;
          out.push_back({ViolationKind::cycle_detected, v, text, cyc});
        }
      } else if (color[v] == 0) {
        dfs(v);
      }
    }
    stack.pop_back();
    color[u] = 2;
  };
  for (const auto &s : g.stages)
    if (color[s.id] == 0)
      dfs(s.id);
}

} // namespace detail

/// A validated graph, or every violation found.
struct LoadResult {
  GraphSpec spec;
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }

  std::string summary() const {
    std::string s;
    for (const auto &v : violations)
      s += (s.empty() ? "" : "; ") + v.text();
    return s;
  }
};

inline std::vector<Violation> validate_graph(const GraphSpec &g) {
  std::vector<Violation> out;
  std::map<std::string, const StageSpec *> by_id;
  for (const auto &s : g.stages) {
    if (!is_token(s.id))
      out.push_back({ViolationKind::bad_param, s.id, "stage id must be a token", {}});
    if (!by_id.emplace(s.id, &s).second)
      out.push_back({ViolationKind::duplicate_id, s.id, "", {}});
    if (!stage_kinds().count(s.kind)) {
      out.push_back({ViolationKind::unknown_stage_kind, s.id, s.kind, {}});
      continue;
    }
    if (!s.params.is_object()) {
      out.push_back({ViolationKind::bad_param, s.id + ".params", "expected an object", {}});
      continue;
    }
    detail::check_params(s, out);
  }

  std::map<std::string, PortTable> ports;
  for (const auto &[id, s] : by_id)
    ports[id] = ports_of(*s);
  std::set<std::pair<std::string, std::string>> fed, used;
  for (const auto &e : g.edges) {
    auto from = by_id.find(e.from.stage);
    auto to = by_id.find(e.to.stage);
    std::string label = e.from.text() + "->" + e.to.text();
    if (from == by_id.end() || to == by_id.end()) {
      out.push_back({ViolationKind::dangling_edge, label, "unknown stage", {}});
      continue;
    }
    const auto &pf = ports[e.from.stage].outputs;
    const auto &pt = ports[e.to.stage].inputs;
    auto of = pf.find(e.from.port);
    auto it = pt.find(e.to.port);
    if (of == pf.end() || it == pt.end()) {
      if (stage_kinds().count(from->second->kind) && stage_kinds().count(to->second->kind))
        out.push_back({ViolationKind::dangling_edge, label, of == pf.end() ? "no such output port" : "no such input port",
                       {}});
      continue;
    }
    fed.insert({e.to.stage, e.to.port});
    used.insert({e.from.stage, e.from.port});
    if (!compatible(of->second, it->second))
      out.push_back({ViolationKind::type_mismatch, label,
                     std::string(to_string(of->second)) + " into " + std::string(to_string(it->second)), {}});
  }
  for (const auto &s : g.stages) {
    if (!stage_kinds().count(s.kind) || by_id[s.id] != &s)
      continue;
    const auto &t = ports[s.id];
    for (const auto &[name, type] : t.inputs)
      if (!fed.count({s.id, name}))
        out.push_back({ViolationKind::unconnected_input, s.id + "." + name, "", {}});
    for (const auto &[name, type] : t.outputs)
      if (!t.optional_outputs.count(name) && !used.count({s.id, name}))
        out.push_back({ViolationKind::unconnected_output, s.id + "." + name, "", {}});
  }
  detail::find_cycles(g, out);
  return out;
}

inline LoadResult load_graph(const nlohmann::json &doc) {
  LoadResult r;
  auto parse_err = [&](const std::string &where, const std::string &why) {
    r.violations.push_back({ViolationKind::parse_error, where, why, {}});
  };
  if (!doc.is_object()) {
    parse_err("graph", "expected an object");
    return r;
  }
  for (const auto &[k, v] : doc.items())
    if (k != "stages" && k != "edges" && k != "description")
      parse_err(k, "unknown key");
  if (!doc.contains("stages") || !doc["stages"].is_array()) {
    parse_err("stages", "expected an array");
  } else {
    std::size_t i = 0;
    for (const auto &s : doc["stages"]) {
      auto where = "stages[" + std::to_string(i++) + "]";
      if (!s.is_object() || !s.contains("id") || !s["id"].is_string() || !s.contains("kind") ||
          !s["kind"].is_string()) {
        parse_err(where, "expected {id, kind, params}");
        continue;
      }
      StageSpec st{s["id"].get<std::string>(), s["kind"].get<std::string>(),
                   s.value("params", nlohmann::json::object())};
      for (const auto &[k, v] : s.items())
        if (k != "id" && k != "kind" && k != "params")
          parse_err(where + "." + k, "unknown key");
      r.spec.stages.push_back(std::move(st));
    }
  }
  if (doc.contains("edges")) {
    if (!doc["edges"].is_array()) {
      parse_err("edges", "expected an array");
    } else {
      std::size_t i = 0;
      for (const auto &e : doc["edges"]) {
        auto where = "edges[" + std::to_string(i++) + "]";
        if (!e.is_object() || !e.contains("from") || !e.contains("to")) {
          parse_err(where, "expected {from, to}");
          continue;
        }
        auto from = detail::parse_port(e["from"], "out");
        auto to = detail::parse_port(e["to"], "in");
        if (!from || !to) {
          parse_err(where, "ports are \"stage.port\" strings");
          continue;
        }
        r.spec.edges.push_back({*from, *to});
      }
    }
  }
  auto more = validate_graph(r.spec);
  r.violations.insert(r.violations.end(), more.begin(), more.end());
  return r;
}

inline LoadResult load_graph_text(const std::string &text) {
  auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    LoadResult r;
    r.violations.push_back({ViolationKind::parse_error, "graph", "not valid JSON", {}});
    return r;
  }
  return load_graph(doc);
}

/// Validated spec or Error(GraphInvalid) listing every violation.
inline GraphSpec require_graph(const nlohmann::json &doc) {
  auto r = load_graph(doc);
  if (!r.ok())
    throw Error(Errc::graph_invalid, "graph", r.summary());
  return r.spec;
}

inline nlohmann::json graph_json(const GraphSpec &g) {
  nlohmann::json j{{"stages", nlohmann::json::array()}, {"edges", nlohmann::json::array()}};
  for (const auto &s : g.stages)
    j["stages"].push_back({{"id", s.id}, {"kind", s.kind}, {"params", s.params}});
  for (const auto &e : g.edges)
    j["edges"].push_back({{"from", e.from.text()}, {"to", e.to.text()}});
  return j;
}

} // namespace dsm::wires
