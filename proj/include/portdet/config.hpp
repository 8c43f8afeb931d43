#pragma once

#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace portdet {

// `key = value` text, one entry per line, `#` starts a comment.
// Values are kept as strings; typed getters raise ConfigError naming the key.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues read(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  std::string require_string(const std::string& key) const;
  double require_double(const std::string& key) const;

  // Throws ConfigError on the first key not in `allowed`.
  void reject_unknown(const std::vector<std::string>& allowed) const;

  // Serialized in key order, so equal contents give equal bytes.
  std::string to_string() const;
  void write(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  const std::string& origin() const { return origin_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

std::vector<double> parse_double_list(const std::string& text);

}  // namespace portdet
