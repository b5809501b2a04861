#pragma once

// Minimal CSV emission/reading. Numbers are written in shortest round-trip
// form so that dumps are bitwise reproducible and re-readable exactly.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pcagee/error.hpp"

namespace pcagee::csv {

inline std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

inline std::string format_number(long long value) { return std::to_string(value); }
inline std::string format_number(int value) { return std::to_string(value); }
inline std::string format_number(std::size_t value) { return std::to_string(value); }

inline std::string format_optional(const std::optional<double>& value) {
  return value ? format_number(*value) : std::string("NA");
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  Writer& field(std::string_view text) {
    sep();
    out_ << text;
    return *this;
  }
  Writer& field(const std::string& text) { return field(std::string_view(text)); }
  Writer& field(const char* text) { return field(std::string_view(text)); }
  Writer& field(double value) { return field(format_number(value)); }
  Writer& field(int value) { return field(format_number(value)); }
  Writer& field(long long value) { return field(format_number(value)); }
  Writer& field(std::size_t value) { return field(format_number(value)); }

  void end_row() {
    out_ << '\n';
    first_ = true;
  }

  void header(const std::vector<std::string>& names) {
    for (const auto& n : names) field(n);
    end_row();
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }

  std::ostream& out_;
  bool first_ = true;
};

/// Writes `content` to `path` via a sibling temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("csv column not found: " + std::string(name));
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline Table parse(std::istream& in) {
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      t.header = split_line(line);
      first = false;
    } else {
      t.rows.push_back(split_line(line));
    }
  }
  return t;
}

inline Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse(in);
}

inline double to_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw DataError("not a number: '" + s + "'");
  return v;
}

}  // namespace pcagee::csv
