#include "mimlab/csv.hpp"

#include <sstream>

namespace mimlab {

namespace {

std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\n\r") != std::string::npos)
      raise(ErrKind::Usage, "csv field contains a separator: " + fields[i]);
    if (i) line += ",";
    line += fields[i];
  }
  return line;
}

}  // namespace

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), path_(path), width_(header.size()) {
  if (!out_) raise(ErrKind::Io, "cannot write csv: " + path);
  out_ << join(header) << "\n";
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_) raise(ErrKind::Usage, "csv row width mismatch in " + path_);
  out_ << join(fields) << "\n";
  if (!out_) raise(ErrKind::Io, "short write: " + path_);
}

void CsvWriter::flush() { out_.flush(); }

int CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

int CsvTable::need_column(const std::string& name) const {
  int c = column(name);
  if (c < 0) raise(ErrKind::Config, "csv is missing column: " + name);
  return c;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrKind::Data, "cannot open csv: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != t.header.size())
        raise(ErrKind::Data, "csv row width mismatch in " + path);
      t.rows.push_back(std::move(fields));
    }
  }
  if (first) raise(ErrKind::Data, "empty csv: " + path);
  return t;
}

}  // namespace mimlab
