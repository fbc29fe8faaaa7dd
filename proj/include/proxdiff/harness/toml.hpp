// A small TOML subset sufficient for run configs: tables, arrays of tables,
// single-line arrays, strings, booleans, integers, and floats. Errors carry
// line numbers.
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxdiff::harness {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TomlValue {
 public:
  enum class Kind { table, array, boolean, integer, floating, string };

  Kind kind() const { return kind_; }

  static TomlValue make_table() { return TomlValue(Kind::table); }
  static TomlValue make_array() { return TomlValue(Kind::array); }
  static TomlValue make_bool(bool v);
  static TomlValue make_int(std::int64_t v);
  static TomlValue make_float(double v);
  static TomlValue make_string(std::string v);

  bool as_bool() const;
  std::int64_t as_int() const;
  double as_double() const;  // integers promote
  const std::string& as_string() const;

  // Table access. find returns nullptr when the key is absent.
  const TomlValue* find(const std::string& key) const;
  TomlValue& insert(const std::string& key, TomlValue v);
  TomlValue* find_mutable(const std::string& key);
  const std::vector<std::pair<std::string, TomlValue>>& entries() const;

  // Array access.
  const std::vector<TomlValue>& items() const;
  TomlValue& append(TomlValue v);

  std::vector<double> as_double_list() const;

 private:
  explicit TomlValue(Kind k) : kind_(k) {}
  void expect(Kind k, const char* what) const;

  Kind kind_ = Kind::table;
  bool bool_ = false;
  std::int64_t int_ = 0;
  double float_ = 0.0;
  std::string string_;
  std::vector<TomlValue> array_;
  std::vector<std::pair<std::string, TomlValue>> table_;
};

TomlValue parse_toml(const std::string& text);
TomlValue parse_toml_file(const std::string& path);

}  // namespace proxdiff::harness
