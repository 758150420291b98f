#pragma once

// Strict reader over a JSON object: typed getters with path-qualified
// ConfigInvalid errors, and rejection of keys nobody asked for.

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/error.hpp"

namespace dsm {

using json = nlohmann::json;

inline json parse_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(Errc::config_invalid, path, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error &e) {
    throw Error(Errc::config_invalid, path, e.what());
  }
}

class ConfigReader {
public:
  ConfigReader(const json &obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object())
      throw Error(Errc::config_invalid, path_, "expected an object");
  }

  bool has(const std::string &key) const { return obj_.contains(key); }

  const json &raw(const std::string &key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end())
      throw Error(Errc::config_invalid, at(key), "missing");
    return *it;
  }

  double number(const std::string &key) {
    const auto &v = raw(key);
    if (!v.is_number())
      throw Error(Errc::config_invalid, at(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string &key, double fallback) {
    return has(key) ? number(key) : (seen_.insert(key), fallback);
  }

  std::int64_t integer(const std::string &key) {
    const auto &v = raw(key);
    if (!v.is_number_integer())
      throw Error(Errc::config_invalid, at(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::int64_t integer(const std::string &key, std::int64_t fallback) {
    return has(key) ? integer(key) : (seen_.insert(key), fallback);
  }

  std::uint64_t count(const std::string &key) {
    auto v = integer(key);
    if (v < 0)
      throw Error(Errc::config_invalid, at(key), "must be >= 0");
    return static_cast<std::uint64_t>(v);
  }
  std::uint64_t count(const std::string &key, std::uint64_t fallback) {
    return has(key) ? count(key) : (seen_.insert(key), fallback);
  }

  bool boolean(const std::string &key, bool fallback) {
    if (!has(key)) {
      seen_.insert(key);
      return fallback;
    }
    const auto &v = raw(key);
    if (!v.is_boolean())
      throw Error(Errc::config_invalid, at(key), "expected a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string &key) {
    const auto &v = raw(key);
    if (!v.is_string())
      throw Error(Errc::config_invalid, at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string &key, const std::string &fallback) {
    return has(key) ? string(key) : (seen_.insert(key), fallback);
  }

  std::vector<double> numbers(const std::string &key) {
    const auto &v = raw(key);
    if (!v.is_array())
      throw Error(Errc::config_invalid, at(key), "expected an array");
    std::vector<double> out;
    for (const auto &e : v) {
      if (!e.is_number())
        throw Error(Errc::config_invalid, at(key), "expected numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string &key) {
    const auto &v = raw(key);
    if (!v.is_array())
      throw Error(Errc::config_invalid, at(key), "expected an array");
    std::vector<std::string> out;
    for (const auto &e : v) {
      if (!e.is_string())
        throw Error(Errc::config_invalid, at(key), "expected strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  const json &array(const std::string &key) {
    const auto &v = raw(key);
    if (!v.is_array())
      throw Error(Errc::config_invalid, at(key), "expected an array");
    return v;
  }

  ConfigReader object(const std::string &key) { return ConfigReader(raw(key), at(key)); }

  /// Throws if the object has keys that were never read.
  void finish() const {
    for (const auto &[k, v] : obj_.items())
      if (!seen_.count(k))
        throw Error(Errc::config_invalid, at(k), "unknown key");
  }

  std::string at(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string &path() const { return path_; }

private:
  const json &obj_;
  std::string path_;
  std::set<std::string> seen_;
};

} // namespace dsm
