#pragma once

// Minimal TOML subset: [section] headers (dotted names allowed), key = value
// with string/bool/number/flat-array values, # comments. Keys are flattened
// to "section.key". Covers what the experiment configs need without pulling
// in a full TOML dependency.

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfd::toml {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Value {
  enum class Kind { String, Bool, Number, Array };
  Kind kind = Kind::Number;
  std::string str;
  bool boolean = false;
  double number = 0.0;
  std::vector<Value> items;
};

class Table {
 public:
  bool contains(const std::string& key) const { return entries_.count(key) > 0; }

  const Value& at(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError("missing config field: " + key);
    return it->second;
  }

  std::string get_string(const std::string& key) const {
    const Value& v = at(key);
    if (v.kind != Value::Kind::String) throw ParseError("field " + key + ": expected a string");
    return v.str;
  }

  double get_double(const std::string& key) const {
    const Value& v = at(key);
    if (v.kind != Value::Kind::Number) throw ParseError("field " + key + ": expected a number");
    return v.number;
  }

  long get_long(const std::string& key) const {
    const double d = get_double(key);
    const long n = static_cast<long>(d);
    if (static_cast<double>(n) != d) throw ParseError("field " + key + ": expected an integer");
    return n;
  }

  bool get_bool(const std::string& key) const {
    const Value& v = at(key);
    if (v.kind != Value::Kind::Bool) throw ParseError("field " + key + ": expected a boolean");
    return v.boolean;
  }

  std::vector<double> get_double_array(const std::string& key) const {
    const Value& v = at(key);
    if (v.kind != Value::Kind::Array) throw ParseError("field " + key + ": expected an array");
    std::vector<double> out;
    for (const Value& item : v.items) {
      if (item.kind != Value::Kind::Number)
        throw ParseError("field " + key + ": expected numeric array elements");
      out.push_back(item.number);
    }
    return out;
  }

  std::vector<std::string> get_string_array(const std::string& key) const {
    const Value& v = at(key);
    if (v.kind != Value::Kind::Array) throw ParseError("field " + key + ": expected an array");
    std::vector<std::string> out;
    for (const Value& item : v.items) {
      if (item.kind != Value::Kind::String)
        throw ParseError("field " + key + ": expected string array elements");
      out.push_back(item.str);
    }
    return out;
  }

  double get_or(const std::string& key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
  }
  long get_or(const std::string& key, long fallback) const {
    return contains(key) ? get_long(key) : fallback;
  }
  bool get_or(const std::string& key, bool fallback) const {
    return contains(key) ? get_bool(key) : fallback;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    return contains(key) ? get_string(key) : fallback;
  }

  void set(const std::string& key, Value v) { entries_[key] = std::move(v); }

  const std::map<std::string, Value>& entries() const { return entries_; }

 private:
  std::map<std::string, Value> entries_;
};

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Drops a trailing comment that is not inside a string literal.
inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline Value parse_scalar(const std::string& raw, int line_no) {
  const std::string text = strip(raw);
  Value v;
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    v.kind = Value::Kind::String;
    v.str = text.substr(1, text.size() - 2);
    return v;
  }
  if (text == "true" || text == "false") {
    v.kind = Value::Kind::Bool;
    v.boolean = text == "true";
    return v;
  }
  std::size_t consumed = 0;
  try {
    v.number = std::stod(text, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != text.size())
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse value '" + text + "'");
  v.kind = Value::Kind::Number;
  return v;
}

inline Value parse_value(const std::string& raw, int line_no) {
  const std::string text = strip(raw);
  if (text.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty value");
  if (text.front() != '[') return parse_scalar(text, line_no);
  if (text.back() != ']')
    throw ParseError("line " + std::to_string(line_no) + ": unterminated array");
  Value v;
  v.kind = Value::Kind::Array;
  const std::string body = text.substr(1, text.size() - 2);
  std::string current;
  bool in_string = false;
  for (char c : body) {
    if (c == '"') in_string = !in_string;
    if (c == ',' && !in_string) {
      v.items.push_back(parse_scalar(current, line_no));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!strip(current).empty()) v.items.push_back(parse_scalar(current, line_no));
  return v;
}

}  // namespace detail

inline Table parse(std::istream& in) {
  Table table;
  std::string section;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::strip(detail::strip_comment(line));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']')
        throw ParseError("line " + std::to_string(line_no) + ": malformed section header");
      section = detail::strip(text.substr(1, text.size() - 2));
      if (section.empty())
        throw ParseError("line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::strip(text.substr(0, eq));
    if (key.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    table.set(full, detail::parse_value(text.substr(eq + 1), line_no));
  }
  return table;
}

inline Table parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

inline Table parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file: " + path);
  return parse(in);
}

}  // namespace pfd::toml
