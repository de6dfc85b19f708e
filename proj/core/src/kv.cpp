#include "noah/kv.hpp"

#include <charconv>
#include <sstream>

#include "noah/error.hpp"

namespace noah {

namespace {

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap map;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw FormatError("line " + std::to_string(line_no) + ": empty key");
    }
    if (map.count(key)) {
      throw FormatError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    map[key] = value;
  }
  return map;
}

std::string serialize_kv(const KvMap& map) {
  std::ostringstream out;
  for (const auto& [key, value] : map) {
    out << key << " = " << value << "\n";
  }
  return out.str();
}

int parse_int(const std::string& text, const std::string& what) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(what + ": cannot parse '" + text + "' as an integer");
  }
  return value;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(what + ": cannot parse '" + text + "' as an unsigned integer");
  }
  return value;
}

double parse_double(const std::string& text, const std::string& what) {
  if (text.empty()) throw ConfigError(what + ": empty value");
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(what + ": cannot parse '" + text + "' as a number");
  }
  if (used != text.size()) {
    throw ConfigError(what + ": cannot parse '" + text + "' as a number");
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(what + ": expected true/false/1/0, got '" + text + "'");
}

std::optional<std::string> KvReader::take(const std::string& key) {
  consumed_.insert(key);
  const auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

std::string KvReader::take_string(const std::string& key, const std::string& fallback) {
  return take(key).value_or(fallback);
}

int KvReader::take_int(const std::string& key, int fallback) {
  const auto value = take(key);
  return value ? parse_int(*value, "key '" + key + "'") : fallback;
}

double KvReader::take_double(const std::string& key, double fallback) {
  const auto value = take(key);
  return value ? parse_double(*value, "key '" + key + "'") : fallback;
}

bool KvReader::take_bool(const std::string& key, bool fallback) {
  const auto value = take(key);
  return value ? parse_bool(*value, "key '" + key + "'") : fallback;
}

std::uint64_t KvReader::take_u64(const std::string& key, std::uint64_t fallback) {
  const auto value = take(key);
  return value ? parse_u64(*value, "key '" + key + "'") : fallback;
}

std::vector<int> KvReader::take_int_list(const std::string& key, std::vector<int> fallback) {
  const auto value = take(key);
  if (!value) return fallback;
  std::vector<int> result;
  std::string item;
  std::istringstream in(*value);
  while (std::getline(in, item, ',')) {
    result.push_back(parse_int(item, "key '" + key + "'"));
  }
  if (result.empty()) {
    throw ConfigError("key '" + key + "': expected a comma-separated integer list");
  }
  return result;
}

void KvReader::finish(const std::string& context) const {
  std::string unknown;
  for (const auto& [key, value] : map_) {
    if (!consumed_.count(key)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty()) {
    throw ConfigError(context + ": unknown key(s): " + unknown);
  }
}

}  // namespace noah
