#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace metalic {

/// Ordered `key = value` pairs; the on-disk config format is one pair per
/// line, `#` comments, and `include = path` lines spliced in place.
using KeyValues = std::map<std::string, std::string>;

/// Later assignments win; includes resolve relative to the including file.
KeyValues parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
KeyValues read_config_file(const std::filesystem::path& path);
std::string format_config(const KeyValues& values);
void write_config_file(const std::filesystem::path& path, const KeyValues& values);

/// Binds config keys to struct fields so one declaration drives both parsing
/// (with unknown-key rejection) and the resolved echo.
class ConfigBinder {
 public:
  void bind(const std::string& key, int& field);
  void bind(const std::string& key, std::int64_t& field);
  void bind(const std::string& key, std::uint64_t& field);
  void bind(const std::string& key, double& field);
  void bind(const std::string& key, bool& field);
  void bind(const std::string& key, std::string& field);
  void bind(const std::string& key, std::vector<int>& field);
  void bind(const std::string& key, std::vector<std::string>& field);
  void bind(const std::string& key, std::function<std::string()> get, std::function<void(const std::string&)> set);

  bool knows(const std::string& key) const { return fields_.count(key) > 0; }
  /// Throws InvalidConfig for unknown keys or unparsable values.
  void apply(const KeyValues& values) const;
  KeyValues dump() const;

 private:
  struct Field {
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
  };
  std::map<std::string, Field> fields_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

}  // namespace metalic
