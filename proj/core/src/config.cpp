#include "mimlab/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mimlab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) return false;
  return true;
}

std::vector<std::string> split_list(const std::string& v, const std::string& key) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']')
    raise(ErrKind::Config, "value of " + key + " is not a list");
  std::string body = trim(v.substr(1, v.size() - 2));
  std::vector<std::string> out;
  if (body.empty()) return out;
  std::string item;
  std::istringstream ss(body);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) raise(ErrKind::Config, "empty item in list " + key);
    out.push_back(item);
  }
  return out;
}

int64_t parse_int(const std::string& v, const std::string& key) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    raise(ErrKind::Config, "value of " + key + " is not an integer: " + v);
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    raise(ErrKind::Config, "value of " + key + " is not a number: " + v);
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  raise(ErrKind::Config, "value of " + key + " is not a boolean: " + v);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  // shortest decimal that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      raise(ErrKind::Config, origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) raise(ErrKind::Config, origin + ":" + std::to_string(lineno) + ": bad key: " + key);
    if (cfg.values_.contains(key))
      raise(ErrKind::Config, origin + ":" + std::to_string(lineno) + ": duplicate key: " + key);
    cfg.values_[key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrKind::Config, "cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

void Config::apply_override(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos) raise(ErrKind::Config, "override is not key=value: " + assignment);
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  if (!valid_key(key)) raise(ErrKind::Config, "override has a bad key: " + key);
  values_[key] = value;
}

bool Config::has(const std::string& key) const { return values_.contains(key); }

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
  consumed_.insert(key);
}

void Config::set_int(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
void Config::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void Config::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

void Config::set_list(const std::string& key, const std::vector<std::string>& items) {
  std::string v = "[";
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) v += ", ";
    v += items[i];
  }
  v += "]";
  set(key, v);
}

std::string Config::need(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) raise(ErrKind::Config, "missing config key: " + key);
  consumed_.insert(key);
  return it->second;
}

std::string Config::get_str(const std::string& key) { return need(key); }

std::string Config::get_str(const std::string& key, const std::string& dflt) {
  if (!values_.contains(key)) values_[key] = dflt;
  return need(key);
}

int64_t Config::get_int(const std::string& key) { return parse_int(need(key), key); }

int64_t Config::get_int(const std::string& key, int64_t dflt) {
  if (!values_.contains(key)) values_[key] = std::to_string(dflt);
  return get_int(key);
}

double Config::get_double(const std::string& key) { return parse_double(need(key), key); }

double Config::get_double(const std::string& key, double dflt) {
  if (!values_.contains(key)) values_[key] = format_double(dflt);
  return get_double(key);
}

bool Config::get_bool(const std::string& key) { return parse_bool(need(key), key); }

bool Config::get_bool(const std::string& key, bool dflt) {
  if (!values_.contains(key)) values_[key] = dflt ? "true" : "false";
  return get_bool(key);
}

std::vector<std::string> Config::get_list(const std::string& key, const std::vector<std::string>& dflt) {
  if (!values_.contains(key)) {
    std::string v = "[";
    for (size_t i = 0; i < dflt.size(); ++i) {
      if (i) v += ", ";
      v += dflt[i];
    }
    values_[key] = v + "]";
  }
  return split_list(need(key), key);
}

std::vector<double> Config::get_double_list(const std::string& key, const std::vector<double>& dflt) {
  std::vector<std::string> d;
  for (double v : dflt) d.push_back(format_double(v));
  std::vector<double> out;
  for (const auto& s : get_list(key, d)) out.push_back(parse_double(s, key));
  return out;
}

std::vector<int64_t> Config::get_int_list(const std::string& key, const std::vector<int64_t>& dflt) {
  std::vector<std::string> d;
  for (int64_t v : dflt) d.push_back(std::to_string(v));
  std::vector<int64_t> out;
  for (const auto& s : get_list(key, d)) out.push_back(parse_int(s, key));
  return out;
}

void Config::ensure_consumed() const {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : values_)
    if (!consumed_.contains(k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    if (unknown.size() > 1) msg += "s";
    msg += ":";
    for (const auto& k : unknown) msg += " " + k;
    raise(ErrKind::Config, msg);
  }
}

std::string Config::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) raise(ErrKind::Io, "cannot write config: " + path);
  out << serialize();
  if (!out) raise(ErrKind::Io, "short write: " + path);
}

std::string Config::content_hash() const {
  // FNV-1a over the serialized text
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mimlab
