#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mimlab/common.hpp"

namespace mimlab {

// Flat tree of dotted keys to scalar or list values, stored as text.
// File syntax: one `key = value` per line, `#` starts a comment, blank
// lines ignored. Lists are bracketed and comma separated: [a, b, c].
// Readers mark keys as consumed; parsing a run config then calling
// ensure_consumed() rejects misspelled or unknown keys by name.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<config>");

  // "key=value" (or "key = value"), applied on top of the parsed file.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, int64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);
  void set_list(const std::string& key, const std::vector<std::string>& items);

  // Getters mark the key consumed. The defaulted forms record the default
  // into the map so serialization captures the fully resolved state.
  std::string get_str(const std::string& key);
  std::string get_str(const std::string& key, const std::string& dflt);
  int64_t get_int(const std::string& key);
  int64_t get_int(const std::string& key, int64_t dflt);
  double get_double(const std::string& key);
  double get_double(const std::string& key, double dflt);
  bool get_bool(const std::string& key);
  bool get_bool(const std::string& key, bool dflt);
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& dflt);
  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& dflt);
  std::vector<int64_t> get_int_list(const std::string& key, const std::vector<int64_t>& dflt);

  // Raises a configuration error naming any key never consumed.
  void ensure_consumed() const;

  // Sorted `key = value` lines; parse_string(serialize()) round-trips.
  std::string serialize() const;
  void save(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  // Content hash of the serialized form (hex), for keying sweep cells.
  std::string content_hash() const;

 private:
  std::string need(const std::string& key);
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string origin_ = "<config>";
};

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace mimlab
