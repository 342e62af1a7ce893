#include "mimlab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mimlab/csv.hpp"

namespace mimlab {

namespace {

constexpr double kW = 640, kH = 440;
constexpr double kL = 70, kR = 24, kT = 24, kB = 56;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

struct Ticks {
  std::vector<double> at;
  double lo, hi;
};

Ticks nice_ticks(double lo, double hi) {
  if (!(hi > lo)) {
    double pad = std::max({1e-9, std::abs(lo) * 0.1, 0.5});
    lo -= pad;
    hi += pad;
  }
  double range = hi - lo;
  double raw = range / 5.0;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  }
  Ticks t;
  t.lo = lo;
  t.hi = hi;
  double first = std::ceil(lo / step - 1e-9) * step;
  for (double v = first; v <= hi + step * 1e-9; v += step) t.at.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return t;
}

double parse_num(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    raise(ErrKind::Config, "non-numeric value in " + what + ": " + s);
  }
}

}  // namespace

std::string render_svg(const PlotData& data) {
  if (data.series.empty()) raise(ErrKind::Config, "plot has no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : data.series) {
    if (s.x.size() != s.y.size()) raise(ErrKind::Usage, "series x/y lengths disagree");
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmin > xmax) raise(ErrKind::Config, "plot has no points");
  Ticks tx = nice_ticks(xmin, xmax);
  Ticks ty = nice_ticks(ymin, ymax);
  auto X = [&](double v) { return kL + (v - tx.lo) / (tx.hi - tx.lo) * (kW - kL - kR); };
  auto Y = [&](double v) { return kH - kB - (v - ty.lo) / (ty.hi - ty.lo) * (kH - kT - kB); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
      << kW << " " << kH << "\">\n";
  out << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"#ffffff\"/>\n";
  for (double v : tx.at) {
    out << "<line x1=\"" << fmt(X(v), "%.2f") << "\" y1=\"" << fmt(kT, "%.2f") << "\" x2=\"" << fmt(X(v), "%.2f")
        << "\" y2=\"" << fmt(kH - kB, "%.2f") << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt(X(v), "%.2f") << "\" y=\"" << fmt(kH - kB + 18, "%.2f")
        << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
  }
  for (double v : ty.at) {
    out << "<line x1=\"" << fmt(kL, "%.2f") << "\" y1=\"" << fmt(Y(v), "%.2f") << "\" x2=\"" << fmt(kW - kR, "%.2f")
        << "\" y2=\"" << fmt(Y(v), "%.2f") << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt(kL - 6, "%.2f") << "\" y=\"" << fmt(Y(v) + 4, "%.2f")
        << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  out << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\"" << kH - kT - kB
      << "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << fmt(kL + (kW - kL - kR) / 2, "%.2f") << "\" y=\"" << fmt(kH - 14, "%.2f")
      << "\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\">" << esc(data.xlabel) << "</text>\n";
  out << "<text x=\"16\" y=\"" << fmt(kT + (kH - kT - kB) / 2, "%.2f")
      << "\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << fmt(kT + (kH - kT - kB) / 2, "%.2f") << ")\">" << esc(data.ylabel) << "</text>\n";

  for (size_t si = 0; si < data.series.size(); ++si) {
    const auto& s = data.series[si];
    const char* color = kPalette[si % kPaletteSize];
    if (s.x.size() > 1) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (i) out << " ";
        out << fmt(X(s.x[i]), "%.2f") << "," << fmt(Y(s.y[i]), "%.2f");
      }
      out << "\"/>\n";
    }
    for (size_t i = 0; i < s.x.size(); ++i)
      out << "<circle cx=\"" << fmt(X(s.x[i]), "%.2f") << "\" cy=\"" << fmt(Y(s.y[i]), "%.2f")
          << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
  }
  double ly = kT + 14;
  for (size_t si = 0; si < data.series.size(); ++si) {
    const char* color = kPalette[si % kPaletteSize];
    double lx = kW - kR - 150;
    out << "<line x1=\"" << fmt(lx, "%.2f") << "\" y1=\"" << fmt(ly - 4, "%.2f") << "\" x2=\"" << fmt(lx + 18, "%.2f")
        << "\" y2=\"" << fmt(ly - 4, "%.2f") << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fmt(lx + 24, "%.2f") << "\" y=\"" << fmt(ly, "%.2f")
        << "\" font-family=\"monospace\" font-size=\"11\">" << esc(data.series[si].label) << "</text>\n";
    ly += 16;
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

PlotData loss_curve(const CsvTable& t) {
  int cstep = t.need_column("step");
  PlotData d;
  d.xlabel = "step";
  d.ylabel = "loss";
  for (const char* name : {"loss_total", "loss_mim", "loss_nce"}) {
    int c = t.column(name);
    if (c < 0) {
      if (std::string(name) == "loss_total") t.need_column(name);
      continue;
    }
    Series s;
    s.label = name;
    for (const auto& row : t.rows) {
      if (row[static_cast<size_t>(c)].empty()) continue;
      s.x.push_back(parse_num(row[static_cast<size_t>(cstep)], "step"));
      s.y.push_back(parse_num(row[static_cast<size_t>(c)], name));
    }
    if (!s.x.empty()) d.series.push_back(std::move(s));
  }
  if (d.series.empty()) raise(ErrKind::Config, "metrics csv has no loss values");
  return d;
}

PlotData sweep_curve(const CsvTable& t) {
  int cstatus = t.need_column("status");
  int cbest = t.need_column("top1_best");
  int cep = t.need_column("epochs");
  int cfr = t.need_column("fraction");
  int clm = t.need_column("lambda_mim");
  int cln = t.need_column("lambda_nce");
  int cmk = t.need_column("mask_kind");

  auto distinct = [&](int col) {
    std::vector<std::string> vals;
    for (const auto& row : t.rows)
      if (std::find(vals.begin(), vals.end(), row[static_cast<size_t>(col)]) == vals.end())
        vals.push_back(row[static_cast<size_t>(col)]);
    return vals.size();
  };
  int cx = distinct(cep) > 1 || distinct(cfr) <= 1 ? cep : cfr;
  PlotData d;
  d.xlabel = cx == cep ? "pretrain epochs" : "dataset fraction";
  d.ylabel = "top-1";

  // mean over seeds per (group, x)
  std::map<std::string, std::map<double, std::pair<double, int>>> groups;
  for (const auto& row : t.rows) {
    if (row[static_cast<size_t>(cstatus)] != "ok" || row[static_cast<size_t>(cbest)].empty()) continue;
    std::string key = "mim=" + row[static_cast<size_t>(clm)] + " nce=" + row[static_cast<size_t>(cln)] + " " +
                      row[static_cast<size_t>(cmk)];
    double x = parse_num(row[static_cast<size_t>(cx)], "sweep axis");
    double y = parse_num(row[static_cast<size_t>(cbest)], "top1_best");
    auto& acc = groups[key][x];
    acc.first += y;
    acc.second += 1;
  }
  if (groups.empty()) raise(ErrKind::Config, "sweep csv has no successful cells");
  for (auto& [key, pts] : groups) {
    Series s;
    s.label = key;
    for (auto& [x, acc] : pts) {
      s.x.push_back(x);
      s.y.push_back(acc.first / acc.second);
    }
    d.series.push_back(std::move(s));
  }
  return d;
}

PlotData probe_curve(const CsvTable& t) {
  int ctag = t.need_column("tag");
  int cseed = t.need_column("seed");
  int cmetric = t.need_column("metric");
  int cvalue = t.need_column("value");
  const std::string prefix = "probe_top1_layer";
  std::map<std::string, Series> series;
  for (const auto& row : t.rows) {
    const std::string& m = row[static_cast<size_t>(cmetric)];
    if (m.rfind(prefix, 0) != 0) continue;
    double layer = parse_num(m.substr(prefix.size()), "layer index");
    std::string key = row[static_cast<size_t>(ctag)] + " seed " + row[static_cast<size_t>(cseed)];
    Series& s = series[key];
    s.label = key;
    s.x.push_back(layer);
    s.y.push_back(parse_num(row[static_cast<size_t>(cvalue)], "probe accuracy"));
  }
  if (series.empty()) raise(ErrKind::Config, "eval csv has no per-layer probe rows");
  PlotData d;
  d.xlabel = "encoder layer";
  d.ylabel = "probe top-1";
  for (auto& [key, s] : series) {
    std::vector<size_t> order(s.x.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return s.x[a] < s.x[b]; });
    Series sorted;
    sorted.label = s.label;
    for (size_t i : order) {
      sorted.x.push_back(s.x[i]);
      sorted.y.push_back(s.y[i]);
    }
    d.series.push_back(std::move(sorted));
  }
  return d;
}

}  // namespace

void render_plot(const std::string& csv_path, const std::string& kind, const std::string& out_path) {
  CsvTable t = read_csv(csv_path);
  PlotData d;
  if (kind == "loss_curve")
    d = loss_curve(t);
  else if (kind == "sweep_curve")
    d = sweep_curve(t);
  else if (kind == "probe_curve")
    d = probe_curve(t);
  else
    raise(ErrKind::Config, "unknown plot kind: " + kind);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) raise(ErrKind::Io, "cannot write plot: " + out_path);
  out << render_svg(d);
  if (!out) raise(ErrKind::Io, "short write: " + out_path);
}

}  // namespace mimlab
