#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ibf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar or flat array value from the config file.
struct ConfigValue {
  enum class Kind { Boolean, Number, String, Array };
  Kind kind = Kind::String;
  bool boolean = false;
  double number = 0.0;
  std::string text;
  std::vector<ConfigValue> items;
};

/// Parses one value: "quoted string", number, true/false, or a flat array of
/// those. With `bare_strings` an unquoted word is taken as a string.
ConfigValue parse_config_value(std::string_view raw, bool bare_strings = false);

/// Flat dotted-key table read from the TOML subset used by the lab:
///
///   # comment
///   experiment = "dispersion"
///   [model]
///   d = 2
///   alpha = 0.05
///   [run]
///   save_times = [10, 50, 100]
///
/// Keys under a [table] header are stored as "table.key". Inline tables,
/// multi-line strings, dates and nested arrays are not supported.
class ConfigTable {
 public:
  static ConfigTable parse(std::string_view text);
  static ConfigTable load(const std::string& path);

  /// Applies a `key=value` override; unquoted values are strings.
  void set_override(std::string_view assignment);
  void set(const std::string& key, ConfigValue value) { values_[key] = std::move(value); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

  double number(const std::string& key, double fallback) const;
  long integer(const std::string& key, long fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) const;

 private:
  const ConfigValue* find(const std::string& key) const;
  std::map<std::string, ConfigValue> values_;
};

}  // namespace ibf
