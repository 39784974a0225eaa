#include "cascade_bsde/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cascade_bsde/errors.hpp"

namespace cbsde {

namespace {

using json = nlohmann::json;

Config::Value convert(const std::string& key, const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    bool nested = !v.empty() && v.front().is_array();
    if (!nested) {
      std::vector<double> out;
      for (const auto& x : v) {
        if (!x.is_number()) throw ValidationError(key, "list entries must be numbers");
        out.push_back(x.get<double>());
      }
      return out;
    }
    std::vector<std::vector<double>> out;
    for (const auto& row : v) {
      if (!row.is_array()) throw ValidationError(key, "expected a list of lists of numbers");
      std::vector<double> r;
      for (const auto& x : row) {
        if (!x.is_number()) throw ValidationError(key, "list entries must be numbers");
        r.push_back(x.get<double>());
      }
      out.push_back(std::move(r));
    }
    return out;
  }
  throw ValidationError(key, "nested objects and null values are not allowed");
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("config", std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config", "top level must be a JSON object");
  Config c;
  c.origin_ = origin;
  for (auto it = doc.begin(); it != doc.end(); ++it) c.values_[it.key()] = convert(it.key(), it.value());
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config", "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

double Config::number(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError(key, "required field is missing");
  const double* v = std::get_if<double>(&it->second);
  if (!v) throw ValidationError(key, "expected a number");
  if (!std::isfinite(*v)) throw ValidationError(key, "must be finite");
  return *v;
}

double Config::number(const std::string& key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

double Config::positive(const std::string& key, double fallback) const {
  const double v = number(key, fallback);
  if (!(v > 0.0)) throw ValidationError(key, "must be positive");
  return v;
}

std::int64_t Config::integer(const std::string& key, std::int64_t fallback, std::int64_t lo, std::int64_t hi) const {
  if (!has(key)) return fallback;
  const double v = number(key);
  if (v != std::floor(v)) throw ValidationError(key, "expected an integer");
  if (v < static_cast<double>(lo) || v > static_cast<double>(hi))
    throw ValidationError(key, "must lie in " + std::to_string(lo) + ".." + std::to_string(hi));
  return static_cast<std::int64_t>(v);
}

bool Config::flag(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const bool* v = std::get_if<bool>(&it->second);
  if (!v) throw ValidationError(key, "expected true or false");
  return *v;
}

std::string Config::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError(key, "required field is missing");
  const std::string* v = std::get_if<std::string>(&it->second);
  if (!v) throw ValidationError(key, "expected a string");
  return *v;
}

std::string Config::str(const std::string& key, const std::string& fallback) const {
  return has(key) ? str(key) : fallback;
}

std::vector<double> Config::list(const std::string& key, const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const double* d = std::get_if<double>(&it->second)) return {*d};
  const auto* v = std::get_if<std::vector<double>>(&it->second);
  if (!v) throw ValidationError(key, "expected a list of numbers");
  for (double x : *v)
    if (!std::isfinite(x)) throw ValidationError(key, "entries must be finite");
  return *v;
}

std::vector<std::vector<double>> Config::matrix(const std::string& key,
                                                const std::vector<std::vector<double>>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (const auto* m = std::get_if<std::vector<std::vector<double>>>(&it->second)) return *m;
  if (const auto* v = std::get_if<std::vector<double>>(&it->second)) {
    std::vector<std::vector<double>> out;
    for (double x : *v) out.push_back({x});
    return out;
  }
  throw ValidationError(key, "expected a list of lists of numbers");
}

void Config::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& [key, _] : values_)
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ValidationError(key, "unknown field");
}

}  // namespace cbsde
