#pragma once

#include <string>
#include <vector>

namespace claw {

// Reals in CSV output carry 6 significant digits, no padding.
std::string format_real(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// RFC-4180-style output: header row, UTF-8, LF line endings, fields quoted
// only when they contain a comma, quote or newline.
void emit_csv(const CsvTable& table, const std::string& path);

CsvTable parse_csv(const std::string& path);

}  // namespace claw
