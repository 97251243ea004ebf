#include "claw/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "claw/errors.hpp"

namespace claw {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

bool needs_quoting(const std::string& field) {
  return field.find_first_of(",\"\n\r") != std::string::npos;
}

std::string quote(const std::string& field) {
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_row(std::ostream& os, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) os << ',';
    os << (needs_quoting(row[i]) ? quote(row[i]) : row[i]);
  }
  os << '\n';
}

}  // namespace

void emit_csv(const CsvTable& table, const std::string& path) {
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      throw std::invalid_argument("csv: row with " + std::to_string(row.size()) +
                                  " fields under a " + std::to_string(table.header.size()) +
                                  "-column header");
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("csv: cannot open " + path + " for writing");
  write_row(os, table.header);
  for (const auto& row : table.rows) write_row(os, row);
  if (!os) throw IoError("csv: write failed for " + path);
}

CsvTable parse_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("csv: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();

  CsvTable table;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool header_done = false;

  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (!header_done) {
      table.header = row;
      header_done = true;
    } else {
      table.rows.push_back(row);
    }
    row.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  return table;
}

}  // namespace claw
