#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dsm/core/error.hpp"

namespace dsm::broker {

/// Subscription filter: literal levels, `+` for one level, terminal `#`.
struct TopicFilter {
  std::vector<std::string> segments;
  std::string text;
};

inline std::vector<std::string_view> levels_of(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find('/', start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline TopicFilter parse_filter(std::string_view text) {
  if (text.empty())
    throw Error(Errc::bad_filter, "filter", "empty");
  TopicFilter f;
  f.text = std::string(text);
  auto levels = levels_of(text);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    auto l = levels[i];
    if (l.empty())
      throw Error(Errc::bad_filter, std::string(text), "empty level");
    if (l.find('#') != std::string_view::npos && (l != "#" || i + 1 != levels.size()))
      throw Error(Errc::bad_filter, std::string(text), "# must be a whole, terminal level");
    if (l.find('+') != std::string_view::npos && l != "+")
      throw Error(Errc::bad_filter, std::string(text), "+ must be a whole level");
    f.segments.emplace_back(l);
  }
  return f;
}

/// Topic names carry no wildcards and no empty levels.
inline bool valid_topic_name(std::string_view topic) {
  if (topic.empty() || topic.size() > 65535)
    return false;
  for (auto l : levels_of(topic))
    if (l.empty() || l.find_first_of("+#") != std::string_view::npos)
      return false;
  return true;
}

/// MQTT 3.1.1 matching; `#` also matches the parent level itself.
inline bool match_topic(const TopicFilter &f, std::string_view topic) {
  std::size_t pos = 0;
  const std::size_t n = f.segments.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto &seg = f.segments[i];
    if (seg == "#")
      return true;
    if (pos > topic.size())
      return false;
    auto end = topic.find('/', pos);
    if (end == std::string_view::npos)
      end = topic.size();
    if (seg != "+" && topic.substr(pos, end - pos) != seg)
      return false;
    pos = end + 1;
  }
  return pos == topic.size() + 1;
}

inline bool match_topic(std::string_view filter, std::string_view topic) {
  return match_topic(parse_filter(filter), topic);
}

} // namespace dsm::broker
