#include "unmt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "unmt/errors.hpp"

namespace unmt {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T, typename Parse>
T parse_number(const std::string& key, const std::string& text, Parse parse) {
  try {
    std::size_t used = 0;
    T value = parse(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

bool parse_bool(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError("expected a boolean, got '" + text + "'");
}

void KeyTable::declare(const std::string& key, const std::string& help, Setter set, Getter get) {
  entries_[key] = {help, std::move(set), std::move(get)};
}

void KeyTable::declare(const std::string& key, const std::string& help, std::size_t& target) {
  declare(
      key, help,
      [&target, key](const std::string& v) {
        if (!v.empty() && v[0] == '-') throw ConfigError("config key '" + key + "' must be nonnegative");
        target = parse_number<std::size_t>(key, v, [](const std::string& s, std::size_t* u) {
          return static_cast<std::size_t>(std::stoull(s, u));
        });
      },
      [&target] { return std::to_string(target); });
}

void KeyTable::declare(const std::string& key, const std::string& help, double& target) {
  declare(
      key, help,
      [&target, key](const std::string& v) {
        target = parse_number<double>(key, v, [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
      },
      [&target] { return format_double(target); });
}

void KeyTable::declare(const std::string& key, const std::string& help, bool& target) {
  declare(
      key, help,
      [&target, key](const std::string& v) {
        try {
          target = parse_bool(v);
        } catch (const ConfigError&) {
          throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
        }
      },
      [&target] { return std::string(target ? "true" : "false"); });
}

void KeyTable::declare(const std::string& key, const std::string& help, std::string& target) {
  declare(
      key, help, [&target](const std::string& v) { target = v; }, [&target] { return target; });
}

void KeyTable::set(const std::string& key, const std::string& value, const std::string& origin) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "' (from " + origin + ")");
  it->second.set(value);
}

std::string KeyTable::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get();
}

std::vector<std::string> KeyTable::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

const std::string& KeyTable::help(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.help;
}

void KeyTable::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), path + ":" + std::to_string(number));
  }
}

std::string KeyTable::env_name(const std::string& prefix, const std::string& key) {
  std::string out = prefix;
  for (char c : key) out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void KeyTable::apply_environment(const std::string& prefix, char** environ_ptr) {
  std::map<std::string, std::string> by_env;
  for (const auto& [key, entry] : entries_) by_env[env_name(prefix, key)] = key;
  for (char** e = environ_ptr; e && *e; ++e) {
    const std::string item = *e;
    if (item.rfind(prefix, 0) != 0) continue;
    const auto eq = item.find('=');
    const std::string name = item.substr(0, eq);
    auto it = by_env.find(name);
    if (it == by_env.end()) throw ConfigError("unknown environment override " + name);
    set(it->second, eq == std::string::npos ? "" : item.substr(eq + 1), "environment " + name);
  }
}

void KeyTable::apply(const std::map<std::string, std::string>& values, const std::string& origin) {
  for (const auto& [k, v] : values) set(k, v, origin);
}

std::string KeyTable::dump() const {
  std::string out;
  for (const auto& [k, e] : entries_) out += k + " = " + e.get() + "\n";
  return out;
}

}  // namespace unmt
