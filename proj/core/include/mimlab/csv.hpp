#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mimlab/common.hpp"

namespace mimlab {

// Minimal comma-separated table IO. Fields are written verbatim, so they
// must not contain commas or newlines (writers enforce this).
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& fields);
  void flush();

 private:
  std::ofstream out_;
  std::string path_;
  size_t width_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;       // -1 when absent
  int need_column(const std::string& name) const;  // raises Config when absent
};

CsvTable read_csv(const std::string& path);

}  // namespace mimlab
