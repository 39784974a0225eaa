#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace cbsde {

// One flat JSON object: every value is a number, boolean, string, list of
// numbers, or list of lists of numbers. Nested objects are rejected.
class Config {
 public:
  using Value = std::variant<double, bool, std::string, std::vector<double>, std::vector<std::vector<double>>>;

  static Config parse(const std::string& text, const std::string& origin = "config");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& origin() const { return origin_; }
  const std::map<std::string, Value>& values() const { return values_; }

  // Typed accessors raise ValidationError naming the key on a wrong type or range.
  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  double positive(const std::string& key, double fallback) const;
  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t lo, std::int64_t hi) const;
  bool flag(const std::string& key, bool fallback) const;
  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  std::vector<double> list(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::vector<double>> matrix(const std::string& key,
                                          const std::vector<std::vector<double>>& fallback) const;

  void set(const std::string& key, Value v) { values_[key] = std::move(v); }
  // Rejects keys outside `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

 private:
  std::string origin_;
  std::map<std::string, Value> values_;
};

}  // namespace cbsde
