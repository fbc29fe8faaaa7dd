#include "proxdiff/harness/toml.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace proxdiff::harness {

TomlValue TomlValue::make_bool(bool v) {
  TomlValue t(Kind::boolean);
  t.bool_ = v;
  return t;
}

TomlValue TomlValue::make_int(std::int64_t v) {
  TomlValue t(Kind::integer);
  t.int_ = v;
  return t;
}

TomlValue TomlValue::make_float(double v) {
  TomlValue t(Kind::floating);
  t.float_ = v;
  return t;
}

TomlValue TomlValue::make_string(std::string v) {
  TomlValue t(Kind::string);
  t.string_ = std::move(v);
  return t;
}

void TomlValue::expect(Kind k, const char* what) const {
  if (kind_ != k) throw ConfigError(std::string("config value is not ") + what);
}

bool TomlValue::as_bool() const {
  expect(Kind::boolean, "a boolean");
  return bool_;
}

std::int64_t TomlValue::as_int() const {
  expect(Kind::integer, "an integer");
  return int_;
}

double TomlValue::as_double() const {
  if (kind_ == Kind::integer) return static_cast<double>(int_);
  expect(Kind::floating, "a number");
  return float_;
}

const std::string& TomlValue::as_string() const {
  expect(Kind::string, "a string");
  return string_;
}

const TomlValue* TomlValue::find(const std::string& key) const {
  expect(Kind::table, "a table");
  for (const auto& [k, v] : table_)
    if (k == key) return &v;
  return nullptr;
}

TomlValue* TomlValue::find_mutable(const std::string& key) {
  expect(Kind::table, "a table");
  for (auto& [k, v] : table_)
    if (k == key) return &v;
  return nullptr;
}

TomlValue& TomlValue::insert(const std::string& key, TomlValue v) {
  expect(Kind::table, "a table");
  table_.emplace_back(key, std::move(v));
  return table_.back().second;
}

const std::vector<std::pair<std::string, TomlValue>>& TomlValue::entries() const {
  expect(Kind::table, "a table");
  return table_;
}

const std::vector<TomlValue>& TomlValue::items() const {
  expect(Kind::array, "an array");
  return array_;
}

TomlValue& TomlValue::append(TomlValue v) {
  expect(Kind::array, "an array");
  array_.push_back(std::move(v));
  return array_.back();
}

std::vector<double> TomlValue::as_double_list() const {
  expect(Kind::array, "an array");
  std::vector<double> out;
  out.reserve(array_.size());
  for (const auto& v : array_) out.push_back(v.as_double());
  return out;
}

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Removes a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char ch = s[i];
    if (in_string) {
      if (ch == '\\')
        ++i;
      else if (ch == '"')
        in_string = false;
    } else if (ch == '"') {
      in_string = true;
    } else if (ch == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

bool valid_bare_key(const std::string& k) {
  if (k.empty()) return false;
  for (const char ch : k)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) return false;
  return true;
}

std::vector<std::string> split_key_path(const std::string& path, int line) {
  std::vector<std::string> parts;
  std::string cur;
  for (const char ch : path) {
    if (ch == '.') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(trim(cur));
  for (const auto& p : parts)
    if (!valid_bare_key(p)) fail(line, "invalid key '" + path + "'");
  return parts;
}

class ValueParser {
 public:
  ValueParser(std::string text, int line) : text_(std::move(text)), line_(line) {}

  TomlValue parse() {
    TomlValue v = parse_value();
    skip_space();
    if (pos_ != text_.size()) fail(line_, "trailing characters after value");
    return v;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  TomlValue parse_value() {
    skip_space();
    if (pos_ >= text_.size()) fail(line_, "missing value");
    const char ch = text_[pos_];
    if (ch == '"') return parse_string();
    if (ch == '[') return parse_array();
    return parse_scalar();
  }

  TomlValue parse_string() {
    ++pos_;  // opening quote
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      char ch = text_[pos_++];
      if (ch == '\\') {
        if (pos_ >= text_.size()) fail(line_, "unterminated escape");
        const char esc = text_[pos_++];
        switch (esc) {
          case '"': ch = '"'; break;
          case '\\': ch = '\\'; break;
          case 'n': ch = '\n'; break;
          case 't': ch = '\t'; break;
          default: fail(line_, "unsupported escape sequence");
        }
      }
      out += ch;
    }
    if (pos_ >= text_.size()) fail(line_, "unterminated string");
    ++pos_;  // closing quote
    return TomlValue::make_string(std::move(out));
  }

  TomlValue parse_array() {
    ++pos_;  // '['
    TomlValue arr = TomlValue::make_array();
    skip_space();
    if (peek() == ']') {
      ++pos_;
      return arr;
    }
    while (true) {
      arr.append(parse_value());
      skip_space();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      fail(line_, "expected ',' or ']' in array");
    }
  }

  TomlValue parse_scalar() {
    std::size_t end = pos_;
    while (end < text_.size() && text_[end] != ',' && text_[end] != ']') ++end;
    const std::string tok = trim(text_.substr(pos_, end - pos_));
    pos_ = end;
    if (tok == "true") return TomlValue::make_bool(true);
    if (tok == "false") return TomlValue::make_bool(false);
    if (tok.empty()) fail(line_, "missing value");

    // Integer if it parses completely as one and has no float markers.
    if (tok.find_first_of(".eEInNaA") == std::string::npos) {
      std::int64_t iv = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
      if (ec == std::errc() && p == tok.data() + tok.size()) return TomlValue::make_int(iv);
    }
    char* endp = nullptr;
    const double dv = std::strtod(tok.c_str(), &endp);
    if (endp != tok.c_str() + tok.size()) fail(line_, "cannot parse value '" + tok + "'");
    return TomlValue::make_float(dv);
  }

  const std::string text_;
  std::size_t pos_ = 0;
  int line_;
};

// Walks to (and creates) the table at path; for the final segment of an
// array-of-tables header, appends a fresh table element.
TomlValue* resolve_table(TomlValue& root, const std::vector<std::string>& path, bool array_elem,
                         int line) {
  TomlValue* node = &root;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const bool last = i + 1 == path.size();
    TomlValue* child = node->find_mutable(path[i]);
    if (last && array_elem) {
      if (!child) child = &node->insert(path[i], TomlValue::make_array());
      if (child->kind() != TomlValue::Kind::array)
        fail(line, "'" + path[i] + "' is not an array of tables");
      return &child->append(TomlValue::make_table());
    }
    if (!child) {
      child = &node->insert(path[i], TomlValue::make_table());
    } else if (child->kind() == TomlValue::Kind::array) {
      // Descend into the latest element of an array of tables.
      const auto& items = child->items();
      if (items.empty() || items.back().kind() != TomlValue::Kind::table)
        fail(line, "'" + path[i] + "' is not a table");
      child = const_cast<TomlValue*>(&items.back());
    } else if (child->kind() != TomlValue::Kind::table) {
      fail(line, "'" + path[i] + "' is not a table");
    }
    node = child;
  }
  return node;
}

}  // namespace

TomlValue parse_toml(const std::string& text) {
  TomlValue root = TomlValue::make_table();
  TomlValue* current = &root;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      const bool array_elem = line.size() > 1 && line[1] == '[';
      const std::string closer = array_elem ? "]]" : "]";
      const std::size_t open = array_elem ? 2 : 1;
      if (line.size() < open + closer.size() ||
          line.compare(line.size() - closer.size(), closer.size(), closer) != 0)
        fail(line_no, "malformed table header");
      const std::string path = trim(line.substr(open, line.size() - open - closer.size()));
      current = resolve_table(root, split_key_path(path, line_no), array_elem, line_no);
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_bare_key(key)) fail(line_no, "invalid key '" + key + "'");
    if (current->find(key)) fail(line_no, "duplicate key '" + key + "'");
    ValueParser vp(line.substr(eq + 1), line_no);
    current->insert(key, vp.parse());
  }
  return root;
}

TomlValue parse_toml_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

}  // namespace proxdiff::harness
