#include "settings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "molgnn/error.hpp"

namespace molgnn::cli {
namespace {

[[noreturn]] void fail(const std::string& message) { throw Error(ErrorCode::ConfigError, message); }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_real(const std::string& name, const std::string& text) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) fail("--" + name + " expects a number, got '" + text + "'");
  return value;
}

}  // namespace

Settings::Settings(std::vector<Key> schema) : schema_(std::move(schema)) {
  for (const auto& k : schema_) values_[k.name] = k.fallback;
}

const Key& Settings::key(const std::string& name) const {
  for (const auto& k : schema_)
    if (k.name == name) return k;
  fail("unknown setting '" + name + "'");
}

const nlohmann::json& Settings::get(const std::string& name) const {
  key(name);
  return values_.at(name);
}

nlohmann::json Settings::coerce(const Key& key, const nlohmann::json& value) {
  auto bad = [&](const char* expected) -> nlohmann::json {
    fail("setting '" + key.name + "' must be " + expected + ", got " + value.dump());
  };
  switch (key.kind) {
    case ValueKind::Bool:
      return value.is_boolean() ? value : bad("a boolean");
    case ValueKind::Int:
      if (value.is_number_integer()) return value;
      if (value.is_number_float() && std::floor(value.get<double>()) == value.get<double>())
        return static_cast<long long>(value.get<double>());
      return bad("an integer");
    case ValueKind::Real:
      return value.is_number() ? nlohmann::json(value.get<double>()) : bad("a number");
    case ValueKind::String:
      return value.is_string() ? value : bad("a string");
    case ValueKind::Strings:
      if (!value.is_array()) return bad("a list of strings");
      for (const auto& v : value)
        if (!v.is_string()) return bad("a list of strings");
      return value;
    case ValueKind::Reals: {
      if (!value.is_array()) return bad("a list of numbers");
      nlohmann::json out = nlohmann::json::array();
      for (const auto& v : value) {
        if (!v.is_number()) return bad("a list of numbers");
        out.push_back(v.get<double>());
      }
      return out;
    }
  }
  return bad("valid");
}

void Settings::merge_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail("config must be a JSON object");
  for (const auto& [name, value] : doc.items()) values_[name] = coerce(key(name), value);
}

void Settings::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read config file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail("config file " + path + " is not valid JSON: " + e.what());
  }
  merge_json(doc);
}

void Settings::set_from_text(const std::string& name, const std::string& text) {
  const Key& k = key(name);
  switch (k.kind) {
    case ValueKind::Bool:
      if (text == "true" || text == "1" || text == "yes") values_[name] = true;
      else if (text == "false" || text == "0" || text == "no") values_[name] = false;
      else fail("--" + name + " expects true or false, got '" + text + "'");
      return;
    case ValueKind::Int: {
      long long value = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (ec != std::errc() || ptr != text.data() + text.size())
        fail("--" + name + " expects an integer, got '" + text + "'");
      values_[name] = value;
      return;
    }
    case ValueKind::Real:
      values_[name] = parse_real(name, text);
      return;
    case ValueKind::String:
      values_[name] = text;
      return;
    case ValueKind::Strings:
      values_[name] = split_list(text);
      return;
    case ValueKind::Reals: {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& item : split_list(text)) list.push_back(parse_real(name, item));
      values_[name] = list;
      return;
    }
  }
}

std::string Settings::required_text(const std::string& name) const {
  std::string value = text(name);
  if (value.empty()) fail("--" + name + " is required");
  return value;
}

}  // namespace molgnn::cli
