#pragma once

#include <cstdint>
#include <cstdlib>
#include <unistd.h>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "dumbolab/common.hpp"

namespace dumbolab {

// Line-oriented `key = value` configuration with DUMBOLAB_ environment
// overrides. Unknown keys are kept verbatim so tools can round-trip them.
class Config {
 public:
  Config() = default;

  static Config defaults() {
    Config c;
    c.set("pm.line_size", "128");
    c.set("pm.flush_latency_ns", "310");
    c.set("pm.heap_mb", "128");
    c.set("pm.log_mb", "128");
    c.set("pm.marker_slots", "1024");
    c.set("htm.read_lines", "4096");
    c.set("htm.write_lines", "64");
    c.set("htm.smt_halved", "0");
    c.set("htm.max_retries", "10");
    c.set("htm.victim_policy", "requester-wins");
    c.set("htm.suspend_cost_ns_1t", "350");
    c.set("htm.suspend_cost_ns_64t", "1500");
    c.set("dumbo.isolation", "si");
    c.set("dumbo.threads", "4");
    c.set("dumbo.marker_slots", "1024");
    c.set("engine", "dumbo-si");
    return c;
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& dflt = "") const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : std::stoull(it->second);
  }

  double get_f64(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : std::stod(it->second);
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return it->second == "1" || it->second == "true" || it->second == "yes";
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::string line;
    while (std::getline(in, line)) parse_line(line);
  }

  void parse_line(std::string line) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) return;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string k = trim(line.substr(0, eq));
    std::string v = trim(line.substr(eq + 1));
    if (!k.empty()) set(k, v);
  }

  // DUMBOLAB_PM_LINE_SIZE=64 overrides pm.line_size, etc.
  void apply_env_overrides(char** envp = nullptr) {
    char** e = envp ? envp : ::environ;
    const std::string prefix = "DUMBOLAB_";
    for (; *e; ++e) {
      std::string entry = *e;
      if (entry.rfind(prefix, 0) != 0) continue;
      auto eq = entry.find('=');
      if (eq == std::string::npos) continue;
      std::string key = entry.substr(prefix.size(), eq - prefix.size());
      for (auto& ch : key) ch = ch == '_' ? '.' : static_cast<char>(std::tolower(ch));
      set(key, entry.substr(eq + 1));
    }
  }

  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace dumbolab
