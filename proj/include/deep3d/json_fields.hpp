#pragma once

// Strict reading of JSON config objects: every key must be consumed, and
// errors carry the dotted path of the offending field.

#include <set>
#include <string>

#include "json.hpp"

#include "deep3d/error.hpp"

namespace deep3d {

using Json = nlohmann::json;

class FieldReader {
public:
  FieldReader(const Json& obj, std::string prefix = {}) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) {
      throw ConfigError("expected an object at '" + (prefix_.empty() ? std::string("<root>") : prefix_) + "'",
                        prefix_);
    }
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    if (!obj_.contains(key)) {
      return fallback;
    }
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) {
      throw ConfigError("missing required field '" + path(key) + "'", path(key));
    }
    return convert<T>(key);
  }

  FieldReader child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return FieldReader(obj_.contains(key) ? obj_.at(key) : empty, path(key));
  }

  /// Throws on the first key that was never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown field '" + path(it.key()) + "'", path(it.key()));
      }
    }
  }

private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("field '" + path(key) + "' has the wrong type: " + e.what(), path(key));
    }
  }

  const Json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace deep3d
