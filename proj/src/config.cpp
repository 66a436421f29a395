#include "metalic/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "metalic/errors.hpp"

namespace metalic {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

namespace {

void parse_into(const std::string& text, const std::filesystem::path& base_dir, KeyValues& out, int depth) {
  if (depth > 16) throw InvalidConfig("config include depth exceeded (cycle?)");
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
      throw InvalidConfig("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw InvalidConfig("config line " + std::to_string(line_no) + ": empty key");
    if (key == "include") {
      const auto path = base_dir / value;
      std::ifstream f(path);
      if (!f) throw IOError("cannot read included config " + path.string());
      std::stringstream ss;
      ss << f.rdbuf();
      parse_into(ss.str(), path.parent_path(), out, depth + 1);
    } else {
      out[key] = value;
    }
  }
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw InvalidConfig("config key '" + key + "': bad number '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidConfig("config key '" + key + "': bad number '" + value + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

KeyValues parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  KeyValues out;
  parse_into(text, base_dir, out, 0);
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IOError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

std::string format_config(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

void write_config_file(const std::filesystem::path& path, const KeyValues& values) {
  std::ofstream f(path);
  if (!f) throw IOError("cannot write config " + path.string());
  f << format_config(values);
  if (!f) throw IOError("failed writing config " + path.string());
}

void ConfigBinder::bind(const std::string& key, std::function<std::string()> get,
                        std::function<void(const std::string&)> set) {
  fields_[key] = Field{std::move(get), std::move(set)};
}

void ConfigBinder::bind(const std::string& key, int& field) {
  bind(key, [&field] { return std::to_string(field); },
       [&field, key](const std::string& v) { field = parse_number<int>(key, v); });
}

void ConfigBinder::bind(const std::string& key, std::int64_t& field) {
  bind(key, [&field] { return std::to_string(field); },
       [&field, key](const std::string& v) { field = parse_number<std::int64_t>(key, v); });
}

void ConfigBinder::bind(const std::string& key, std::uint64_t& field) {
  bind(key, [&field] { return std::to_string(field); },
       [&field, key](const std::string& v) { field = parse_number<std::uint64_t>(key, v); });
}

void ConfigBinder::bind(const std::string& key, double& field) {
  bind(key, [&field] { return format_double(field); },
       [&field, key](const std::string& v) { field = parse_double(key, v); });
}

void ConfigBinder::bind(const std::string& key, bool& field) {
  bind(key, [&field] { return std::string(field ? "true" : "false"); },
       [&field, key](const std::string& v) {
         if (v == "true" || v == "1") field = true;
         else if (v == "false" || v == "0") field = false;
         else throw InvalidConfig("config key '" + key + "': expected true/false, got '" + v + "'");
       });
}

void ConfigBinder::bind(const std::string& key, std::string& field) {
  bind(key, [&field] { return field; }, [&field](const std::string& v) { field = v; });
}

void ConfigBinder::bind(const std::string& key, std::vector<int>& field) {
  bind(key,
       [&field] {
         std::string out;
         for (std::size_t i = 0; i < field.size(); ++i) out += (i ? "," : "") + std::to_string(field[i]);
         return out;
       },
       [&field, key](const std::string& v) {
         field.clear();
         for (const auto& item : split(v, ',')) field.push_back(parse_number<int>(key, item));
       });
}

void ConfigBinder::bind(const std::string& key, std::vector<std::string>& field) {
  bind(key,
       [&field] {
         std::string out;
         for (std::size_t i = 0; i < field.size(); ++i) out += (i ? "," : "") + field[i];
         return out;
       },
       [&field](const std::string& v) { field = split(v, ','); });
}

void ConfigBinder::apply(const KeyValues& values) const {
  for (const auto& [k, v] : values) {
    const auto it = fields_.find(k);
    if (it == fields_.end()) throw InvalidConfig("unknown config key '" + k + "'");
    it->second.set(v);
  }
}

KeyValues ConfigBinder::dump() const {
  KeyValues out;
  for (const auto& [k, f] : fields_) out[k] = f.get();
  return out;
}

}  // namespace metalic
