// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "mmtlab/error.hpp"

namespace mmtlab {

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << content;
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string provenance_line(const std::string& checkpoint_sha256) {
  return fmt::format("# checkpoint_sha256={}\n", checkpoint_sha256);
}

template <class T>
std::string vector_csv(std::span<const double> values, const ParameterStore<T>& store,
                       const std::string& checkpoint_sha256) {
  if (values.size() != store.element_count()) throw ShapeError("vector_csv: vector does not cover the flat index");
  std::string out = provenance_line(checkpoint_sha256) + "flat_index,name,offset,value\n";
  std::size_t flat = 0;
  for (std::size_t e = 0; e < store.entry_count(); ++e) {
    const auto& entry = store.entry(e);
    for (std::size_t o = 0; o < entry.value.size(); ++o, ++flat) {
      out += fmt::format("{},{},{},{}\n", flat, entry.name, o, values[flat]);
    }
  }
  return out;
}

template std::string vector_csv(std::span<const double>, const ParameterStore<float>&, const std::string&);
template std::string vector_csv(std::span<const double>, const ParameterStore<double>&, const std::string&);

std::string matrix_csv(const CorrelationMatrix& m, const std::string& checkpoint_sha256) {
  std::string out = provenance_line(checkpoint_sha256);
  out += fmt::format("# group={} cross_task={}\n", pcc_group_name(m.group), m.cross_task ? 1 : 0);
  out += "language";
  for (const auto& l : m.labels) out += "," + l;
  out += '\n';
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    out += m.labels[i];
    for (const auto& v : m.values[i]) out += v ? fmt::format(",{}", *v) : std::string(",");
    out += '\n';
  }
  return out;
}

std::string curve_csv(const PruneCurve& curve, const std::string& checkpoint_sha256) {
  std::string out = provenance_line(checkpoint_sha256);
  out += fmt::format("# ordering={}\n", curve.ordering);
  out += "ratio,pruned,metric\n";
  for (const auto& p : curve.points) out += fmt::format("{},{},{}\n", p.ratio, p.pruned, p.metric);
  return out;
}

std::string bleu_csv(const std::vector<LanguageBleu>& scores, const std::string& checkpoint_sha256) {
  std::string out = provenance_line(checkpoint_sha256) + "language,category,bleu,sentences,incomplete\n";
  std::map<std::string, std::pair<double, std::size_t>> by_category;
  double total = 0.0;
  for (const auto& s : scores) {
    out += fmt::format("{},{},{},{},{}\n", s.code, s.category, s.bleu, s.sentences, s.incomplete);
    by_category[s.category].first += s.bleu;
    by_category[s.category].second += 1;
    total += s.bleu;
  }
  for (const auto& [cat, acc] : by_category) {
    out += fmt::format("mean:{},{},{},,\n", cat, cat, acc.first / static_cast<double>(acc.second));
  }
  if (!scores.empty()) out += fmt::format("mean:all,all,{},,\n", total / static_cast<double>(scores.size()));
  return out;
}

std::string stats_csv(const SensitivityStats& stats, const std::string& checkpoint_sha256) {
  std::string out = provenance_line(checkpoint_sha256);
  out += fmt::format("# trimmed view drops the top {} entries\n", stats.removed);
  out += "view,count,mean,std,min,max";
  for (const double q : stats.full.quantile_levels) out += fmt::format(",q{}", q);
  out += '\n';
  for (const auto& [name, d] : {std::pair{"full", &stats.full}, std::pair{"trimmed", &stats.trimmed}}) {
    out += fmt::format("{},{},{},{},{},{}", name, d->count, d->mean, d->stddev, d->min, d->max);
    for (const double q : d->quantiles) out += fmt::format(",{}", q);
    out += '\n';
  }
  out += "\nview,bin,lower,upper,count\n";
  for (const auto& [name, d] : {std::pair{"full", &stats.full}, std::pair{"trimmed", &stats.trimmed}}) {
    for (std::size_t b = 0; b < d->histogram_counts.size(); ++b) {
      out += fmt::format("{},{},{},{},{}\n", name, b, d->histogram_edges[b], d->histogram_edges[b + 1],
                         d->histogram_counts[b]);
    }
  }
  return out;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_open(double w, double h, const std::string& sha) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- checkpoint_sha256={} -->\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      sha, w, h, w, h);
}

// Diverging palette: -1 blue, 0 white, +1 red.
std::string diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  const auto mix = [](double a, double b, double t) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  if (v >= 0) return fmt::format("rgb({},{},{})", mix(255, 178, v), mix(255, 24, v), mix(255, 43, v));
  return fmt::format("rgb({},{},{})", mix(255, 33, -v), mix(255, 102, -v), mix(255, 172, -v));
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::string heatmap_svg(const CorrelationMatrix& m, const std::string& title, const std::string& sha) {
  const double cell = 56;
  const double left = 70;
  const double top = 60;
  const double n = static_cast<double>(m.labels.size());
  std::string out = svg_open(left + cell * n + 20, top + cell * n + 40, sha);
  out += fmt::format("<text x=\"{}\" y=\"28\" font-size=\"16\">{}</text>\n", left, escape(title));
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const double pos = static_cast<double>(i) * cell;
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n", left - 6,
                       top + pos + cell / 2 + 4, escape(m.labels[i]));
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
                       left + pos + cell / 2, top - 8, escape(m.labels[i]));
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      const double x = left + static_cast<double>(j) * cell;
      const double y = top + pos;
      const auto& v = m.values[i][j];
      out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"white\"/>\n", x, y,
                         cell, cell, v ? diverging(*v) : std::string("#bbbbbb"));
      out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n", x + cell / 2,
                         y + cell / 2 + 4, v ? fmt::format("{:.2f}", *v) : std::string("NA"));
    }
  }
  out += "</svg>\n";
  return out;
}

std::string line_chart_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::string& sha) {
  const double w = 640;
  const double h = 420;
  const double left = 70;
  const double right = 150;
  const double top = 50;
  const double bottom = 60;
  double x0 = std::numeric_limits<double>::infinity();
  double x1 = -x0;
  double y0 = x0;
  double y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  y0 = std::min(y0, 0.0);
  const double pw = w - left - right;
  const double ph = h - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::string out = svg_open(w, h, sha);
  out += fmt::format("<text x=\"{}\" y=\"28\" font-size=\"16\">{}</text>\n", left, escape(title));
  out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", left, top + ph, left + pw,
                     top + ph);
  out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", left, top, left, top + ph);
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const double yv = y0 + (y1 - y0) * t / 4.0;
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.3g}</text>\n", px(xv),
                       top + ph + 16, xv);
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.3g}</text>\n", left - 6,
                       py(yv) + 4, yv);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n", left + pw / 2,
                     h - 18, escape(x_label));
  out += fmt::format(
      "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
      top + ph / 2, top + ph / 2, escape(y_label));
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : series[s].points) pts += fmt::format("{:.2f},{:.2f} ", px(x), py(y));
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, pts);
    for (const auto& [x, y] : series[s].points) {
      out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", px(x), py(y), color);
    }
    const double ly = top + 16 + 18 * static_cast<double>(s);
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"3\" fill=\"{}\"/>\n", left + pw + 14, ly - 4,
                       color);
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n", left + pw + 32, ly,
                       escape(series[s].name));
  }
  out += "</svg>\n";
  return out;
}

std::string histogram_svg(const DistributionSummary& d, const std::string& title, const std::string& sha) {
  const double w = 640;
  const double h = 360;
  const double left = 60;
  const double top = 50;
  const double pw = w - left - 30;
  const double ph = h - top - 50;
  std::string out = svg_open(w, h, sha);
  out += fmt::format("<text x=\"{}\" y=\"28\" font-size=\"16\">{}</text>\n", left, escape(title));
  std::size_t peak = 1;
  for (const auto c : d.histogram_counts) peak = std::max(peak, c);
  const double bw = d.histogram_counts.empty() ? pw : pw / static_cast<double>(d.histogram_counts.size());
  for (std::size_t b = 0; b < d.histogram_counts.size(); ++b) {
    const double bh = ph * static_cast<double>(d.histogram_counts[b]) / static_cast<double>(peak);
    out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"#1f77b4\"/>\n",
                       left + bw * static_cast<double>(b), top + ph - bh, std::max(bw - 1, 0.5), bh);
  }
  out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", left, top + ph, left + pw,
                     top + ph);
  out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\">{:.3g}</text>\n", left, top + ph + 16, d.min);
  out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.3g}</text>\n", left + pw,
                     top + ph + 16, d.max);
  out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">n={} std={:.4g}</text>\n", left, h - 12, d.count,
                     d.stddev);
  out += "</svg>\n";
  return out;
}

}  // namespace mmtlab
