#pragma once

// Topic grammar: dsm/v1/<site>/<node_id>/<channel>/<kind>
// The topic plays the role of the transducer interface module: it names
// exactly one channel of one node. cmd and sync are node-scoped and use the
// reserved channel token `_node`.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsm/core/error.hpp"

namespace dsm {

enum class TopicKind { raw, features, events, cmd, sync };

inline constexpr std::string_view node_channel = "_node";
inline constexpr std::string_view topic_prefix = "dsm";
inline constexpr std::string_view topic_version = "v1";

constexpr std::string_view to_string(TopicKind k) noexcept {
  switch (k) {
  case TopicKind::raw: return "raw";
  case TopicKind::features: return "features";
  case TopicKind::events: return "events";
  case TopicKind::cmd: return "cmd";
  case TopicKind::sync: return "sync";
  }
  return "raw";
}

inline std::optional<TopicKind> topic_kind_from(std::string_view s) {
  for (auto k : {TopicKind::raw, TopicKind::features, TopicKind::events,
                 TopicKind::cmd, TopicKind::sync})
    if (to_string(k) == s)
      return k;
  return std::nullopt;
}

/// `[a-z0-9_-]{1,32}`
constexpr bool is_token(std::string_view s) noexcept {
  if (s.empty() || s.size() > 32)
    return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' ||
              c == '-';
    if (!ok)
      return false;
  }
  return true;
}

struct TopicPath {
  std::string site;
  std::string node_id;
  std::string channel;
  TopicKind kind = TopicKind::raw;

  bool operator==(const TopicPath &) const = default;
};

constexpr bool is_node_scoped(TopicKind k) noexcept {
  return k == TopicKind::cmd || k == TopicKind::sync;
}

inline TopicPath build_topic(std::string site, std::string node_id,
                             std::string channel, TopicKind kind) {
  if (!is_token(site))
    throw Error(Errc::bad_token, "site", site);
  if (!is_token(node_id))
    throw Error(Errc::bad_token, "node_id", node_id);
  if (!is_token(channel))
    throw Error(Errc::bad_token, "channel", channel);
  if (is_node_scoped(kind) && channel != node_channel)
    throw Error(Errc::bad_token, "channel",
                "cmd/sync topics are node-scoped and use _node");
  return TopicPath{std::move(site), std::move(node_id), std::move(channel),
                   kind};
}

inline TopicPath node_topic(std::string site, std::string node_id,
                            TopicKind kind) {
  return build_topic(std::move(site), std::move(node_id),
                     std::string(node_channel), kind);
}

inline std::string render(const TopicPath &t) {
  std::string out;
  out.reserve(8 + t.site.size() + t.node_id.size() + t.channel.size() + 10);
  out += topic_prefix;
  out += '/';
  out += topic_version;
  out += '/';
  out += t.site;
  out += '/';
  out += t.node_id;
  out += '/';
  out += t.channel;
  out += '/';
  out += to_string(t.kind);
  return out;
}

inline std::vector<std::string_view> split_levels(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find('/', start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline TopicPath parse_topic(std::string_view text) {
  auto levels = split_levels(text);
  static constexpr std::array<const char *, 6> names{
      "prefix", "version", "site", "node_id", "channel", "kind"};
  if (levels.size() != 6) {
    auto bad = std::min<std::size_t>(levels.size(), 5);
    throw Error(Errc::bad_token, names[bad],
                "expected 6 levels, got " + std::to_string(levels.size()));
  }
  if (levels[0] != topic_prefix)
    throw Error(Errc::bad_token, "prefix", std::string(levels[0]));
  if (levels[1] != topic_version)
    throw Error(Errc::bad_token, "version", std::string(levels[1]));
  auto kind = topic_kind_from(levels[5]);
  if (!kind)
    throw Error(Errc::bad_token, "kind", std::string(levels[5]));
  return build_topic(std::string(levels[2]), std::string(levels[3]),
                     std::string(levels[4]), *kind);
}

} // namespace dsm
