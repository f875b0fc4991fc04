#pragma once

#include <json.hpp>
#include <string>
#include <vector>

namespace molgnn::cli {

enum class ValueKind { Bool, Int, Real, String, Strings, Reals };

struct Key {
  std::string name;
  ValueKind kind;
  nlohmann::json fallback;
  std::string help;
};

/// Typed key/value settings for one subcommand. Values come from the
/// schema defaults, then an optional JSON config file, then `--key value`
/// flags. Any unknown key or ill-typed value is a ConfigError.
class Settings {
 public:
  explicit Settings(std::vector<Key> schema);

  const std::vector<Key>& schema() const { return schema_; }

  void merge_file(const std::string& path);
  void merge_json(const nlohmann::json& doc);
  /// Flag text parsed by the key's kind; lists are comma-separated.
  void set_from_text(const std::string& name, const std::string& text);

  bool flag(const std::string& name) const { return get(name).get<bool>(); }
  long long integer(const std::string& name) const { return get(name).get<long long>(); }
  double real(const std::string& name) const { return get(name).get<double>(); }
  std::string text(const std::string& name) const { return get(name).get<std::string>(); }
  std::vector<std::string> texts(const std::string& name) const { return get(name).get<std::vector<std::string>>(); }
  std::vector<double> reals(const std::string& name) const { return get(name).get<std::vector<double>>(); }

  /// ConfigError when a string setting is empty.
  std::string required_text(const std::string& name) const;

  const nlohmann::json& values() const { return values_; }

 private:
  const Key& key(const std::string& name) const;
  const nlohmann::json& get(const std::string& name) const;
  static nlohmann::json coerce(const Key& key, const nlohmann::json& value);

  std::vector<Key> schema_;
  nlohmann::json values_ = nlohmann::json::object();
};

}  // namespace molgnn::cli
