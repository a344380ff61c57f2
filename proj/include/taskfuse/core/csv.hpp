#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace taskfuse {

// %.10g keeps files readable while staying deterministic: identical doubles
// print identically, and every value we log is produced by a seeded run.
inline std::string csv_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

class CsvWriter {
public:
  CsvWriter() = default;
  CsvWriter(const std::string& path, const std::vector<std::string>& header) { open(path, header); }

  void open(const std::string& path, const std::vector<std::string>& header) {
    out_.open(path, std::ios::binary);  // binary: no \r\n translation anywhere
    if (!out_) throw std::runtime_error("csv: cannot write " + path);
    cols_ = header.size();
    write_row(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != cols_) throw std::logic_error("csv: column count mismatch");
    write_row(cells);
  }

  void flush() { out_.flush(); }

private:
  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
  std::size_t cols_ = 0;
};

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace taskfuse
