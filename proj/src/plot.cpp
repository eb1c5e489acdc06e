// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "dualdit/plot.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dualdit {

namespace {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
  bool points = false;
};

struct Panel {
  double left, top, width, height;
  double x0, x1, y0, y1;
  bool log_y = false;

  double px(double x) const { return left + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * width; }
  double py(double y) const {
    if (log_y) y = std::log10(std::max(y, 1e-12));
    return top + height - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * height;
  }
};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t w) {
  std::vector<double> out(v.size());
  double sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= w) sum -= v[i - w];
    out[i] = sum / double(std::min(i + 1, w));
  }
  return out;
}

void draw_panel(std::ostringstream& svg, Panel p, const std::vector<Series>& series, const std::string& title,
                const std::string& x_label) {
  bool any = false;
  double ylo = 0, yhi = 0;
  p.x0 = 0;
  p.x1 = 1;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double y = p.log_y ? std::log10(std::max(s.y[i], 1e-12)) : s.y[i];
      if (!any) {
        ylo = yhi = y;
        p.x0 = p.x1 = s.x[i];
        any = true;
      }
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
      p.x0 = std::min(p.x0, s.x[i]);
      p.x1 = std::max(p.x1, s.x[i]);
    }
  }
  if (yhi - ylo < 1e-9) {
    ylo -= 0.5;
    yhi += 0.5;
  }
  const double pad = 0.05 * (yhi - ylo);
  p.y0 = ylo - pad;
  p.y1 = yhi + pad;

  svg << "<rect x='" << p.left << "' y='" << p.top << "' width='" << p.width << "' height='" << p.height
      << "' fill='none' stroke='#888'/>\n";
  svg << "<text x='" << p.left + p.width / 2 << "' y='" << p.top - 8 << "' text-anchor='middle'>" << esc(title)
      << "</text>\n";
  svg << "<text x='" << p.left + p.width / 2 << "' y='" << p.top + p.height + 32
      << "' text-anchor='middle' font-size='11'>" << esc(x_label) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = p.y0 + (p.y1 - p.y0) * i / 4.0;
    const double y = p.top + p.height - p.height * i / 4.0;
    svg << "<line x1='" << p.left << "' x2='" << p.left + p.width << "' y1='" << y << "' y2='" << y
        << "' stroke='#eee'/>\n";
    svg << "<text x='" << p.left - 4 << "' y='" << y + 4 << "' text-anchor='end' font-size='10'>"
        << num(p.log_y ? std::pow(10.0, v) : v) << "</text>\n";
    const double xv = p.x0 + (p.x1 - p.x0) * i / 4.0;
    svg << "<text x='" << p.px(xv) << "' y='" << p.top + p.height + 14 << "' text-anchor='middle' font-size='10'>"
        << num(std::round(xv)) << "</text>\n";
  }
  double legend_y = p.top + 14;
  for (const auto& s : series) {
    if (s.points) {
      for (std::size_t i = 0; i < s.y.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        svg << "<circle cx='" << p.px(s.x[i]) << "' cy='" << p.py(s.y[i]) << "' r='3' fill='" << s.color << "'/>\n";
      }
    }
    svg << "<polyline fill='none' stroke-width='1.5' stroke='" << s.color << "' points='";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) svg << p.px(s.x[i]) << "," << p.py(s.y[i]) << " ";
    }
    svg << "'/>\n";
    svg << "<text x='" << p.left + p.width - 6 << "' y='" << legend_y << "' text-anchor='end' font-size='11' fill='"
        << s.color << "'>" << esc(s.label) << "</text>\n";
    legend_y += 14;
  }
}

std::string open_svg(int w, int h) {
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
    << "' font-family='sans-serif' font-size='12'>\n<rect width='100%' height='100%' fill='white'/>\n";
  return s.str();
}

}  // namespace

std::string training_curves_svg(const std::vector<MetricsRow>& rows, const PlotOptions& opt) {
  std::vector<double> step, lv, la, lm, lambda, cx, cy;
  for (const auto& r : rows) {
    step.push_back(double(r.step));
    lv.push_back(r.loss_video);
    la.push_back(r.loss_audio);
    lm.push_back(r.loss_mask);
    lambda.push_back(r.lambda_mask);
    if (!std::isnan(r.consistency)) {
      cx.push_back(double(r.step));
      cy.push_back(r.consistency);
    }
  }
  const std::size_t w = std::max<std::size_t>(1, opt.smooth);
  std::vector<Series> losses = {{"video loss", "#1f77b4", step, moving_average(lv, w)},
                                {"audio loss", "#d62728", step, moving_average(la, w)},
                                {"mask loss", "#2ca02c", step, moving_average(lm, w)}};
  // Stage 1 rows carry no video loss; keep them off the log axis.
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].stage == 1) losses[0].y[i] = std::nan("");
  }
  std::vector<Series> right = {{"mask weight x10", "#9467bd", step, lambda}, {"consistency", "#ff7f0e", cx, cy, true}};
  for (double& v : right[0].y) v *= 10;

  std::ostringstream svg;
  svg << open_svg(opt.width, opt.height);
  if (!opt.title.empty()) {
    svg << "<text x='" << opt.width / 2 << "' y='18' text-anchor='middle' font-weight='bold'>" << esc(opt.title)
        << "</text>\n";
  }
  const double ph = opt.height - 100.0, pw = opt.width / 2.0 - 90.0;
  Panel left{60, 50, pw, ph, 0, 1, 0, 1, true};
  Panel rightp{opt.width / 2.0 + 50, 50, pw, ph, 0, 1, 0, 1, false};
  draw_panel(svg, left, losses, "losses (moving average " + std::to_string(w) + ")", "step");
  draw_panel(svg, rightp, right, "mask weight and probe consistency", "step");
  svg << "</svg>\n";
  return svg.str();
}

std::string ablation_bars_svg(const std::vector<AblationRow>& rows, const PlotOptions& opt) {
  const std::vector<CellSummary> cells = summarize(rows);
  const int w = std::max<int>(opt.width, 120 + 56 * int(cells.size()));
  const int h = opt.height + 80;
  std::ostringstream svg;
  svg << open_svg(w, h);
  if (!opt.title.empty()) {
    svg << "<text x='" << w / 2 << "' y='18' text-anchor='middle' font-weight='bold'>" << esc(opt.title)
        << "</text>\n";
  }
  const double left = 60, top = 40, ph = opt.height - 60.0, pw = w - 90.0;
  Panel p{left, top, pw, ph, 0, 1, -1, 1, false};
  auto y = [&](double v) { return p.py(v); };
  svg << "<rect x='" << left << "' y='" << top << "' width='" << pw << "' height='" << ph
      << "' fill='none' stroke='#888'/>\n";
  for (double v : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    svg << "<line x1='" << left << "' x2='" << left + pw << "' y1='" << y(v) << "' y2='" << y(v) << "' stroke='"
        << (v == 0 ? "#888" : "#eee") << "'/>\n";
    svg << "<text x='" << left - 4 << "' y='" << y(v) + 4 << "' text-anchor='end' font-size='10'>" << num(v)
        << "</text>\n";
  }
  const double slot = cells.empty() ? pw : pw / double(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellSummary& c = cells[i];
    const double x = left + slot * (double(i) + 0.2), bw = slot * 0.6;
    const double y0 = y(0), y1 = y(c.mean);
    svg << "<rect x='" << x << "' y='" << std::min(y0, y1) << "' width='" << bw << "' height='" << std::abs(y1 - y0)
        << "' fill='" << (c.cell == "disabled" ? "#999" : "#1f77b4") << "'/>\n";
    svg << "<line x1='" << x + bw / 2 << "' x2='" << x + bw / 2 << "' y1='" << y(c.min) << "' y2='" << y(c.max)
        << "' stroke='black'/>\n";
    const double lx = x + bw / 2, ly = top + ph + 10;
    svg << "<text transform='translate(" << lx << "," << ly << ") rotate(45)' font-size='10'>" << esc(c.cell)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace dualdit
