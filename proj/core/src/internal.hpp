#pragma once

// Helpers shared by the serializers. Not installed.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vod/error.hpp"
#include "vod/geometry.hpp"
#include "vod/io.hpp"

namespace vod::detail {

struct Line {
  std::size_t number;  // 1-based
  std::string_view text;
};

// Splits on '\n', dropping a trailing '\r' from each line.
inline std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> out;
  std::size_t number = 1;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back({number++, line});
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return out;
}

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\v\f") == std::string_view::npos;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(sep);
    out.push_back(s.substr(0, pos));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

inline Json box_to_json(const BoundingBox& b) {
  return Json{{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}};
}

// Field accessors that report failures as SchemaViolation(row, field).
class RowReader {
 public:
  RowReader(const Json& obj, std::size_t row) : obj_(obj), row_(row) {}

  void require_object() const {
    if (!obj_.is_object()) throw SchemaViolation(row_, "<row>", "expected a JSON object");
  }

  void reject_unknown(std::initializer_list<std::string_view> known) const {
    for (const auto& [key, value] : obj_.items()) {
      bool ok = false;
      for (const auto k : known) ok = ok || key == k;
      if (!ok) throw SchemaViolation(row_, key, "unknown field");
    }
  }

  bool has(const char* field) const { return obj_.contains(field); }

  const Json& at(const char* field) const {
    const auto it = obj_.find(field);
    if (it == obj_.end()) throw SchemaViolation(row_, field, "missing required field");
    if (it->is_null()) throw SchemaViolation(row_, field, "null is not allowed; omit the field");
    return *it;
  }

  std::string string(const char* field) const {
    const Json& v = at(field);
    if (!v.is_string()) throw SchemaViolation(row_, field, "expected a string");
    return v.get<std::string>();
  }

  double number(const char* field) const { return number_of(at(field), field); }

  double number_of(const Json& v, const std::string& field) const {
    if (!v.is_number()) throw SchemaViolation(row_, field, "expected a number");
    return v.get<double>();
  }

  BoundingBox box(const char* field) const {
    const Json& v = at(field);
    if (!v.is_object()) throw SchemaViolation(row_, field, "expected an object {cx,cy,w,h}");
    RowReader inner(v, row_);
    const std::string prefix = std::string(field) + ".";
    for (const auto& [key, value] : v.items()) {
      if (key != "cx" && key != "cy" && key != "w" && key != "h") {
        throw SchemaViolation(row_, prefix + key, "unknown field");
      }
    }
    auto coord = [&](const char* k) {
      if (!v.contains(k)) throw SchemaViolation(row_, prefix + k, "missing required field");
      return number_of(v.at(k), prefix + k);
    };
    BoundingBox b{coord("cx"), coord("cy"), coord("w"), coord("h")};
    if (!is_valid(b)) throw SchemaViolation(row_, field, "box outside the normalized range");
    return b;
  }

  std::size_t row() const noexcept { return row_; }

 private:
  const Json& obj_;
  std::size_t row_;
};

}  // namespace vod::detail
