#include "freqlab/toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "freqlab/tensor.hpp"

namespace freqlab::toml {

namespace {

using json = nlohmann::json;

class LineParser {
 public:
  LineParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

  [[noreturn]] void fail(const std::string& what) const { throw Error(where_ + ": " + what); }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  std::string key() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '"') return basic_string();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::vector<std::string> dotted_key() {
    std::vector<std::string> parts{key()};
    while (eat('.')) parts.push_back(key());
    return parts;
  }

  json value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return basic_string();
    if (c == '[') return array();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return number();
  }

 private:
  std::string basic_string() {
    ++pos_;  // opening quote
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  json array() {
    ++pos_;  // '['
    json out = json::array();
    if (eat(']')) return out;
    while (true) {
      out.push_back(value());
      if (eat(']')) return out;
      expect(',');
      if (eat(']')) return out;  // trailing comma
    }
  }

  json number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != ',' &&
           s_[pos_] != ']' && s_[pos_] != '#') {
      ++pos_;
    }
    std::string tok(s_.substr(start, pos_ - start));
    std::erase(tok, '_');
    if (tok.empty()) fail("expected a value");
    const bool neg = tok[0] == '-';
    const std::string body = (tok[0] == '+' || tok[0] == '-') ? tok.substr(1) : tok;
    if (body == "inf") return neg ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    if (body == "nan") return std::numeric_limits<double>::quiet_NaN();
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* e = tok.data() + tok.size();
    if (is_float) {
      double v = 0;
      auto r = std::from_chars(b, e, v);
      if (r.ec != std::errc() || r.ptr != e) fail("bad number '" + tok + "'");
      return v;
    }
    long long v = 0;
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) fail("bad value '" + tok + "'");
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::string where_;
};

json& descend(json& root, const std::vector<std::string>& path, const std::string& where) {
  json* node = &root;
  for (const std::string& p : path) {
    json& next = (*node)[p];
    if (next.is_null()) next = json::object();
    if (next.is_array()) {
      if (next.empty() || !next.back().is_object()) throw Error(where + ": '" + p + "' is not a table");
      node = &next.back();
    } else if (next.is_object()) {
      node = &next;
    } else {
      throw Error(where + ": '" + p + "' is already a value");
    }
  }
  return *node;
}

}  // namespace

nlohmann::json parse(const std::string& text, const std::string& source) {
  json root = json::object();
  json* table = &root;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = source + ":" + std::to_string(lineno);
    LineParser p(line, where);
    if (p.at_end_or_comment()) continue;
    if (p.eat('[')) {
      const bool array = p.eat('[');
      const auto path = p.dotted_key();
      p.expect(']');
      if (array) p.expect(']');
      if (!p.at_end_or_comment()) p.fail("trailing characters after header");
      if (array) {
        std::vector<std::string> parent(path.begin(), path.end() - 1);
        json& owner = descend(root, parent, where);
        json& list = owner[path.back()];
        if (list.is_null()) list = json::array();
        if (!list.is_array()) p.fail("'" + path.back() + "' is not an array of tables");
        list.push_back(json::object());
        table = &list.back();
      } else {
        json& owner = descend(root, std::vector<std::string>(path.begin(), path.end() - 1), where);
        if (owner.contains(path.back())) p.fail("table '" + path.back() + "' defined twice");
        owner[path.back()] = json::object();
        table = &owner[path.back()];
      }
      continue;
    }
    const auto path = p.dotted_key();
    p.expect('=');
    json v = p.value();
    if (!p.at_end_or_comment()) p.fail("trailing characters after value");
    json& owner = descend(*table, std::vector<std::string>(path.begin(), path.end() - 1), where);
    if (owner.contains(path.back())) p.fail("key '" + path.back() + "' set twice");
    owner[path.back()] = std::move(v);
  }
  return root;
}

nlohmann::json parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

}  // namespace freqlab::toml
