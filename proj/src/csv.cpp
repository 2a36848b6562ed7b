#include "hetmed/cli_io.hpp"

#include "hetmed/errors.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>

namespace hetmed {

namespace {

std::vector<std::vector<std::string>> parse_records(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  // Skip a UTF-8 byte order mark.
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) fail(ErrorKind::FileError, "unterminated quoted field");
  if (field_started || !record.empty() || !field.empty()) end_record();
  return records;
}

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\r\n") != std::string::npos;
}

}  // namespace

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Table read_csv(std::istream& in) {
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto records = parse_records(text);
  if (records.empty()) fail(ErrorKind::FileError, "CSV input has no header row");
  Table t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      fail(ErrorKind::FileError, "CSV row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                                     " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

Table read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FileError, "cannot open '" + path.string() + "'");
  return read_csv(in);
}

void write_csv(std::ostream& out, const Table& table) {
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      if (needs_quotes(row[j])) {
        out << '"';
        for (char c : row[j]) {
          if (c == '"') out << '"';
          out << c;
        }
        out << '"';
      } else {
        out << row[j];
      }
    }
    out << '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) write_row(row);
}

void write_csv_file(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::FileError, "cannot write '" + path.string() + "'");
  write_csv(out, table);
  if (!out) fail(ErrorKind::FileError, "write to '" + path.string() + "' failed");
}

}  // namespace hetmed
