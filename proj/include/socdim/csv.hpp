#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "socdim/core.hpp"

namespace socdim {

// RFC 4180 style reader: quoted fields, doubled quotes, CRLF, embedded newlines.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in, char delim = ',') : in_(in), delim_(delim) {}

  // Returns false at end of input. Blank lines are skipped.
  bool next(std::vector<std::string>& fields) {
    for (;;) {
      fields.clear();
      if (!in_.good() || in_.peek() == std::char_traits<char>::eof()) return false;
      ++line_;
      std::string field;
      bool quoted = false;
      bool any = false;
      for (;;) {
        const int c = in_.get();
        if (c == std::char_traits<char>::eof()) {
          if (quoted) throw InputError("unterminated quoted field at line " + std::to_string(line_));
          break;
        }
        any = true;
        const char ch = static_cast<char>(c);
        if (quoted) {
          if (ch == '"') {
            if (in_.peek() == '"') {
              field.push_back('"');
              in_.get();
            } else {
              quoted = false;
            }
          } else {
            if (ch == '\n') ++line_;
            field.push_back(ch);
          }
          continue;
        }
        if (ch == '"' && field.empty()) {
          quoted = true;
        } else if (ch == delim_) {
          fields.push_back(std::move(field));
          field.clear();
        } else if (ch == '\n') {
          break;
        } else if (ch == '\r') {
          if (in_.peek() == '\n') in_.get();
          break;
        } else {
          field.push_back(ch);
        }
      }
      if (!any) return false;
      fields.push_back(std::move(field));
      if (fields.size() == 1 && fields[0].empty()) continue;
      return true;
    }
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  char delim_;
  std::size_t line_ = 0;
};

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  template <typename... Fields>
  void row(const Fields&... fields) {
    bool first = true;
    ((emit(fields, first)), ...);
    out_ << '\n';
  }

  void row(std::span<const std::string> fields) {
    bool first = true;
    for (const auto& f : fields) emit(f, first);
    out_ << '\n';
  }

 private:
  void sep(bool& first) {
    if (!first) out_ << ',';
    first = false;
  }
  void emit(std::string_view s, bool& first) {
    sep(first);
    out_ << csv_escape(s);
  }
  void emit(const std::string& s, bool& first) { emit(std::string_view(s), first); }
  void emit(const char* s, bool& first) { emit(std::string_view(s), first); }
  void emit(double v, bool& first) {
    sep(first);
    out_ << format_double(v);
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void emit(Int v, bool& first) {
    sep(first);
    out_ << v;
  }

  std::ostream& out_;
};

// Maps header names to column positions.
class CsvHeader {
 public:
  CsvHeader() = default;
  explicit CsvHeader(std::vector<std::string> names) : names_(std::move(names)) {
    for (auto& n : names_) {
      while (!n.empty() && (n.back() == ' ' || n.back() == '\t')) n.pop_back();
      while (!n.empty() && (n.front() == ' ' || n.front() == '\t')) n.erase(n.begin());
    }
    // Strip a UTF-8 byte order mark on the first column.
    if (!names_.empty() && names_[0].rfind("\xEF\xBB\xBF", 0) == 0) names_[0].erase(0, 3);
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  std::size_t require(std::string_view name, std::string_view file) const {
    if (auto i = find(name)) return *i;
    throw InputError(std::string(file) + ": missing column '" + std::string(name) + "'");
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
};

}  // namespace socdim
