#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "svlad/errors.hpp"

namespace svlad {

inline std::string csv_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Minimal CSV emitter: UTF-8, LF line endings, '#'-prefixed comment lines.
class CsvFile {
 public:
  explicit CsvFile(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + path.string());
  }

  void comment(const std::string& text) { out_ << "# " << text << "\n"; }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

}  // namespace svlad
