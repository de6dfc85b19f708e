#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace noah {

// Flat key=value text: one pair per line, '#' starts a comment, blank lines
// ignored. Used for config files and for the config block inside checkpoints.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);  // FormatError on a malformed line
std::string serialize_kv(const KvMap& map);    // deterministic key order

// Typed accessor that tracks which keys were consumed so finish() can reject
// unknown ones. All parse failures throw ConfigError naming the key.
class KvReader {
 public:
  explicit KvReader(const KvMap& map) : map_(map) {}

  std::optional<std::string> take(const std::string& key);
  std::string take_string(const std::string& key, const std::string& fallback);
  int take_int(const std::string& key, int fallback);
  double take_double(const std::string& key, double fallback);
  bool take_bool(const std::string& key, bool fallback);
  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback);
  std::vector<int> take_int_list(const std::string& key, std::vector<int> fallback);

  bool has(const std::string& key) const { return map_.count(key) != 0; }
  // Throws ConfigError listing any keys never consumed.
  void finish(const std::string& context) const;

 private:
  const KvMap& map_;
  std::set<std::string> consumed_;
};

int parse_int(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);
std::uint64_t parse_u64(const std::string& text, const std::string& what);

}  // namespace noah
