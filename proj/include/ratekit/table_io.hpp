#pragma once
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ratekit/errors.hpp"

namespace ratekit {

enum class TableFormat { Csv, Dat };

// Shortest round-trippable decimal representation; output is stable for a
// given build, which the byte-identical rerun contract relies on.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Writes simple numeric tables as CSV or gnuplot-style .dat (whitespace
// separated, '#'-prefixed header).
class TableWriter {
 public:
  TableWriter(const std::filesystem::path& path, const std::vector<std::string>& columns,
              TableFormat fmt = TableFormat::Csv)
      : out_(path), fmt_(fmt), ncols_(columns.size()) {
    if (!out_) throw ConfigError("cannot open output file: " + path.string());
    if (fmt_ == TableFormat::Dat) out_ << "# ";
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << sep();
      out_ << columns[i];
    }
    out_ << "\n";
  }

  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << sep();
      out_ << format_double(values[i]);
    }
    out_ << "\n";
  }

  // Mixed rows where some cells are preformatted strings.
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << sep();
      out_ << cells[i];
    }
    out_ << "\n";
  }

  size_t columns() const { return ncols_; }

 private:
  const char* sep() const { return fmt_ == TableFormat::Csv ? "," : " "; }
  std::ofstream out_;
  TableFormat fmt_;
  size_t ncols_;
};

inline const char* table_extension(TableFormat f) {
  return f == TableFormat::Csv ? ".csv" : ".dat";
}

}  // namespace ratekit
