#include "ibf/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ibf {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Drops a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return key.front() != '.' && key.back() != '.';
}

std::vector<std::string_view> split_array(std::string_view body) {
  std::vector<std::string_view> out;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] == '"' && (i == 0 || body[i - 1] != '\\')) quoted = !quoted;
    if (body[i] == '[' && !quoted) throw ConfigError("nested arrays are not supported");
    if (body[i] == ',' && !quoted) {
      out.push_back(trim(body.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (quoted) throw ConfigError("unterminated string");
  const auto last = trim(body.substr(start));
  if (!last.empty()) out.push_back(last);
  for (auto item : out)
    if (item.empty()) throw ConfigError("empty array element");
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i == s.size()) throw ConfigError("dangling escape in string");
    switch (s[i]) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case '"': out += '"'; break;
      case '\\': out += '\\'; break;
      default: throw ConfigError(std::string("unsupported escape \\") + s[i]);
    }
  }
  return out;
}

bool parse_number(std::string_view s, double& out) {
  std::string cleaned;
  for (char c : s)
    if (c != '_') cleaned += c;
  if (cleaned.empty()) return false;
  const char* first = cleaned.data();
  const char* last = first + cleaned.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

ConfigValue parse_config_value(std::string_view raw, bool bare_strings) {
  const auto s = trim(raw);
  if (s.empty()) throw ConfigError("missing value");
  ConfigValue v;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw ConfigError("unterminated string");
    v.kind = ConfigValue::Kind::String;
    v.text = unescape(s.substr(1, s.size() - 2));
    return v;
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated array");
    v.kind = ConfigValue::Kind::Array;
    for (auto item : split_array(s.substr(1, s.size() - 2))) v.items.push_back(parse_config_value(item, bare_strings));
    return v;
  }
  if (s == "true" || s == "false") {
    v.kind = ConfigValue::Kind::Boolean;
    v.boolean = s == "true";
    return v;
  }
  if (parse_number(s, v.number)) {
    v.kind = ConfigValue::Kind::Number;
    return v;
  }
  if (bare_strings) {
    v.kind = ConfigValue::Kind::String;
    v.text = std::string(s);
    return v;
  }
  throw ConfigError("cannot parse value '" + std::string(s) + "'");
}

ConfigTable ConfigTable::parse(std::string_view text) {
  ConfigTable table;
  std::string prefix;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    try {
      const auto line = trim(strip_comment(raw));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3 || line[1] == '[')
          throw ConfigError("malformed table header");
        const auto name = trim(line.substr(1, line.size() - 2));
        if (!valid_key(name)) throw ConfigError("invalid table name '" + std::string(name) + "'");
        prefix = std::string(name) + ".";
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      const auto key = trim(line.substr(0, eq));
      if (!valid_key(key)) throw ConfigError("invalid key '" + std::string(key) + "'");
      const std::string full = prefix + std::string(key);
      if (table.has(full)) throw ConfigError("duplicate key '" + full + "'");
      table.values_[full] = parse_config_value(line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  return table;
}

ConfigTable ConfigTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void ConfigTable::set_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must look like key=value");
  const auto key = trim(assignment.substr(0, eq));
  if (!valid_key(key)) throw ConfigError("invalid override key '" + std::string(key) + "'");
  values_[std::string(key)] = parse_config_value(assignment.substr(eq + 1), true);
}

const ConfigValue* ConfigTable::find(const std::string& key) const {
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

double ConfigTable::number(const std::string& key, double fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (v->kind != ConfigValue::Kind::Number) throw ConfigError(key + ": expected a number");
  return v->number;
}

long ConfigTable::integer(const std::string& key, long fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (v->kind != ConfigValue::Kind::Number || v->number != std::floor(v->number))
    throw ConfigError(key + ": expected an integer");
  return static_cast<long>(v->number);
}

bool ConfigTable::boolean(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (v->kind == ConfigValue::Kind::String && (v->text == "true" || v->text == "false")) return v->text == "true";
  if (v->kind != ConfigValue::Kind::Boolean) throw ConfigError(key + ": expected true or false");
  return v->boolean;
}

std::string ConfigTable::string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (v->kind != ConfigValue::Kind::String) throw ConfigError(key + ": expected a string");
  return v->text;
}

std::vector<double> ConfigTable::numbers(const std::string& key, const std::vector<double>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (v->kind == ConfigValue::Kind::Number) return {v->number};
  if (v->kind != ConfigValue::Kind::Array) throw ConfigError(key + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& item : v->items) {
    if (item.kind != ConfigValue::Kind::Number) throw ConfigError(key + ": expected an array of numbers");
    out.push_back(item.number);
  }
  return out;
}

std::vector<std::string> ConfigTable::strings(const std::string& key, const std::vector<std::string>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (v->kind == ConfigValue::Kind::String) return {v->text};
  if (v->kind != ConfigValue::Kind::Array) throw ConfigError(key + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& item : v->items) {
    if (item.kind != ConfigValue::Kind::String) throw ConfigError(key + ": expected an array of strings");
    out.push_back(item.text);
  }
  return out;
}

}  // namespace ibf
