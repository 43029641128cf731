#pragma once

#include <charconv>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace calsbi::io {

// Shortest text that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Fixed 17 significant digits, '.' decimal point regardless of locale.
inline std::string format_g17(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && s[0] == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
  return v;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

inline std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  return out;
}

// Flat key=value text, one pair per line, keys sorted.
class KeyValue {
 public:
  void set(const std::string& k, const std::string& v) { map_[k] = v; }
  void set(const std::string& k, double v) { map_[k] = format_double(v); }
  void set(const std::string& k, std::uint64_t v) { map_[k] = std::to_string(v); }
  void set(const std::string& k, bool v) { map_[k] = v ? "true" : "false"; }

  bool has(const std::string& k) const { return map_.count(k) != 0; }
  const std::string& get(const std::string& k) const {
    auto it = map_.find(k);
    if (it == map_.end()) throw std::invalid_argument("missing config key '" + k + "'");
    return it->second;
  }
  std::string get_or(const std::string& k, const std::string& fallback) const {
    auto it = map_.find(k);
    return it == map_.end() ? fallback : it->second;
  }
  double get_double(const std::string& k) const { return parse_double(get(k)); }
  std::uint64_t get_u64(const std::string& k) const { return parse_u64(get(k)); }
  bool get_bool(const std::string& k) const { return get(k) == "true"; }

  void merge(const KeyValue& other) {
    for (const auto& [k, v] : other.map_) map_[k] = v;
  }

  const std::map<std::string, std::string>& entries() const { return map_; }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : map_) out += k + "=" + v + "\n";
    return out;
  }

  static KeyValue parse(const std::string& text) {
    KeyValue kv;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("malformed key=value line: '" + line + "'");
      kv.map_[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
  }

 private:
  std::map<std::string, std::string> map_;
};

}  // namespace calsbi::io
