#include "portdet/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "portdet/errors.hpp"

namespace portdet {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path);
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError(origin_ + ": key `" + key + "` expects a number, got `" + s + "`");
  }
  return v;
}

long long KeyValues::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(origin_ + ": key `" + key + "` expects an integer, got `" + s + "`");
  }
  return v;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(origin_ + ": key `" + key + "` expects a boolean, got `" + s + "`");
}

std::string KeyValues::require_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing key `" + key + "`");
  return it->second;
}

double KeyValues::require_double(const std::string& key) const {
  if (!has(key)) throw ConfigError(origin_ + ": missing key `" + key + "`");
  return get_double(key, 0.0);
}

void KeyValues::reject_unknown(const std::vector<std::string>& allowed) const {
  for (const auto& [key, value] : values_) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(origin_ + ": unknown key `" + key + "`");
    }
  }
}

std::string KeyValues::to_string() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

void KeyValues::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << to_string();
  if (!out) throw IoError("write failed: " + path);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end != item.c_str() + item.size()) throw ConfigError("not a number: `" + item + "`");
    out.push_back(v);
  }
  return out;
}

}  // namespace portdet
