#pragma once

#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace ctmm::io {

/// Invalid configuration. The message starts with the dotted field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reads optional fields of a JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  /// Nested object handled by a callback taking (json, path).
  template <typename F>
  void object(const std::string& key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) f(*it, field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace ctmm::io
