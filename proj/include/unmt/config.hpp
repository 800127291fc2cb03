#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace unmt {

// Declared configuration keys with typed setters. Values are merged from a
// file, then environment variables, then explicit overrides; later sources
// win and undeclared keys are rejected.
class KeyTable {
 public:
  using Setter = std::function<void(const std::string&)>;
  using Getter = std::function<std::string()>;

  void declare(const std::string& key, const std::string& help, Setter set, Getter get);
  void declare(const std::string& key, const std::string& help, std::size_t& target);
  void declare(const std::string& key, const std::string& help, double& target);
  void declare(const std::string& key, const std::string& help, bool& target);
  void declare(const std::string& key, const std::string& help, std::string& target);

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, const std::string& value, const std::string& origin);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;
  const std::string& help(const std::string& key) const;

  // "key = value" lines; '#' starts a comment.
  void apply_file(const std::string& path);
  // Every declared key K is read from PREFIX + upper(K) with '.' and '-'
  // mapped to '_'. Unknown variables with the prefix are rejected.
  void apply_environment(const std::string& prefix, char** environ_ptr);
  void apply(const std::map<std::string, std::string>& values, const std::string& origin);

  // Canonical "key = value" dump, sorted by key.
  std::string dump() const;

  static std::string env_name(const std::string& prefix, const std::string& key);

 private:
  struct Entry {
    std::string help;
    Setter set;
    Getter get;
  };
  std::map<std::string, Entry> entries_;
};

bool parse_bool(const std::string& text);

}  // namespace unmt
