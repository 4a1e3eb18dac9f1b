#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "edloc/error.hpp"

namespace edloc::kv {

// Flat "key = value" text. '#' starts a comment line; keys are unique.
class Document {
 public:
  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = std::move(value);
        return;
      }
    entries_.emplace_back(std::move(key), std::move(value));
  }

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    return std::nullopt;
  }

  bool contains(std::string_view key) const { return get(key).has_value(); }

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string format(std::string_view header_comment = {}) const {
    std::string out;
    if (!header_comment.empty()) {
      out += "# ";
      out += header_comment;
      out += '\n';
    }
    for (const auto& [k, v] : entries_) {
      out += k;
      out += " = ";
      out += v;
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

// `what` names the source in error messages. Errors use `kind`.
inline Document parse(std::string_view text, std::string_view what,
                      ErrorKind kind = ErrorKind::config) {
  Document doc;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::vector<std::string> seen;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(kind, std::string(what) + ":" + std::to_string(line_no) +
                            ": expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty())
      throw Error(kind, std::string(what) + ":" + std::to_string(line_no) +
                            ": empty key");
    for (const auto& k : seen)
      if (k == key)
        throw Error(kind, std::string(what) + ":" + std::to_string(line_no) +
                              ": duplicate key '" + key + "'");
    seen.push_back(key);
    doc.set(std::move(key), std::move(value));
    if (end == text.size()) break;
  }
  return doc;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw io_error("write failed for '" + path + "'");
}

// Shortest representation that reads back to the same float.
inline std::string format_float(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
std::string join(const std::vector<T>& xs, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_same_v<T, float>)
      out += format_float(xs[i]);
    else if constexpr (std::is_same_v<T, double>)
      out += format_double(xs[i]);
    else
      out += std::to_string(xs[i]);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, std::string_view key,
               ErrorKind kind = ErrorKind::config) {
  s = trim(s);
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw Error(kind, "field " + std::string(key) + ": cannot parse '" +
                          std::string(s) + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value))
      throw Error(kind, "field " + std::string(key) + ": non-finite value");
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(std::string_view s, std::string_view key,
                          ErrorKind kind = ErrorKind::config) {
  std::vector<T> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    std::size_t comma = s.find(',', pos);
    std::string_view item =
        s.substr(pos, comma == std::string_view::npos ? s.size() - pos
                                                      : comma - pos);
    out.push_back(parse_number<T>(item, key, kind));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline bool parse_bool(std::string_view s, std::string_view key,
                       ErrorKind kind = ErrorKind::config) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error(kind, "field " + std::string(key) + ": expected a boolean, got '" +
                        std::string(s) + "'");
}

}  // namespace edloc::kv
