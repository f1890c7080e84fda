#pragma once

// Small comma-delimited tables with a header row. Cells are kept as text;
// numeric access goes through parse_double.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "warpcal/error.hpp"
#include "warpcal/field_io.hpp"

namespace warpcal {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string source;  // file name, for messages

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    return -1;
  }

  int require_column(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw ValidationError(source + ": missing column '" + name + "'");
    return c;
  }

  double number(std::size_t row, int col) const {
    return parse_double(rows.at(row).at(static_cast<std::size_t>(col)),
                        source + " row " + std::to_string(row + 2) + " column '" + header.at(static_cast<std::size_t>(col)) + "'");
  }

  std::vector<double> numbers(const std::string& name) const {
    const int c = require_column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(number(r, c));
    return out;
  }

  void add_row(std::vector<std::string> cells) {
    require(cells.size() == header.size(), "Table: row width differs from header");
    rows.push_back(std::move(cells));
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing file: " + path.string());
  Table t;
  t.source = path.string();
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(t.source + ": empty table");
  t.header = split_csv_line(line);
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw ValidationError(t.source + ": line " + std::to_string(lineNo) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline void write_table(const fs::path& path, const Table& t) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << ',';
      out << cells[c];
    }
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

}  // namespace warpcal
