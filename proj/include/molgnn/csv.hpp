#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace molgnn {

/// RFC 4180 style table: first record is the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name, -1 when missing.
  int column(const std::string& name) const;
};

CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::string& path);

std::string csv_escape(const std::string& field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace molgnn
