#pragma once

// Flat key=value run configuration with dotted section prefixes
// ("planner.candidates = 10"). Lines starting with '#' are comments.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <cstdio>
#include <map>
#include <optional>
#include <type_traits>
#include <sstream>
#include <string>
#include <vector>

#include "dmpc/error.hpp"

namespace dmpc {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
      if (c.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key " + key);
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  /// Later overrides win, e.g. command-line --set flags.
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    const std::string v = raw(key).value_or(fallback);
    resolved_[key] = v;
    return v;
  }

  int get_int(const std::string& key, int fallback) { return static_cast<int>(get_number<long long>(key, fallback)); }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) { return get_number<std::uint64_t>(key, fallback); }
  double get_double(const std::string& key, double fallback) { return get_number<double>(key, fallback); }

  bool get_bool(const std::string& key, bool fallback) {
    const auto v = raw(key);
    bool out = fallback;
    if (v) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else throw ConfigError(key + ": expected a boolean, got '" + *v + "'");
    }
    resolved_[key] = out ? "true" : "false";
    return out;
  }

  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) {
    return get_list<int>(key, fallback);
  }
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) {
    return get_list<double>(key, fallback);
  }
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) {
    const auto v = raw(key);
    std::vector<std::string> out = fallback;
    if (v) out = split(*v);
    resolved_[key] = join(out);
    return out;
  }

  /// Throws on keys that no getter asked for.
  void reject_unknown() const {
    std::string bad;
    for (const auto& [k, v] : values_)
      if (!resolved_.count(k)) bad += (bad.empty() ? "" : ", ") + k;
    if (!bad.empty()) throw ConfigError("unknown config keys: " + bad);
  }

  /// Every key read so far with its effective value, sorted by key.
  [[nodiscard]] std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : resolved_) out += k + " = " + v + "\n";
    return out;
  }

  [[nodiscard]] std::uint64_t hash() const { return fnv1a(resolved()); }

 private:
  [[nodiscard]] std::optional<std::string> raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  template <class T>
  static T parse_number(const std::string& key, const std::string& s) {
    T out{};
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + s + "'");
    return out;
  }

  template <class T>
  static std::string show(T v) {
    if constexpr (std::is_floating_point_v<T>) {
      char buf[64];
      const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
      return std::string(buf, r.ptr);
    } else {
      return std::to_string(v);
    }
  }

  template <class T>
  T get_number(const std::string& key, T fallback) {
    const auto v = raw(key);
    const T out = v ? parse_number<T>(key, *v) : fallback;
    resolved_[key] = show(out);
    return out;
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
      if (!trim(item).empty()) out.push_back(trim(item));
    return out;
  }

  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
  }

  template <class T>
  std::vector<T> get_list(const std::string& key, const std::vector<T>& fallback) {
    const auto v = raw(key);
    std::vector<T> out = fallback;
    if (v) {
      out.clear();
      for (const auto& item : split(*v)) out.push_back(static_cast<T>(parse_number<std::conditional_t<std::is_integral_v<T>, long long, T>>(key, item)));
    }
    std::vector<std::string> shown;
    for (T x : out) shown.push_back(show(x));
    resolved_[key] = join(shown);
    return out;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace dmpc
