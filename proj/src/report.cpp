#include "bclab/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <unistd.h>

namespace bclab {

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    const auto& c = cells[i];
    if (c.find_first_of(",\"\n") != std::string::npos) {
      line += '"';
      for (char ch : c) {
        if (ch == '"') line += '"';
        line += ch;
      }
      line += '"';
    } else {
      line += c;
    }
  }
  line += '\n';
  return line;
}

std::string csv_grid(const std::vector<std::vector<double>>& rows,
                     const std::vector<std::string>& header) {
  std::string out;
  if (!header.empty()) out += csv_row(header);
  for (const auto& r : rows) {
    std::vector<std::string> cells;
    for (double v : r) cells.push_back(format_number(v));
    out += csv_row(cells);
  }
  return out;
}

namespace {

constexpr double kWidth = 640, kHeight = 420, kMargin = 60;

const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const {
    return kMargin + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (kWidth - 2 * kMargin);
  }
  double py(double y) const {
    return kHeight - kMargin - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (kHeight - 2 * kMargin);
  }
};

Frame fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  Frame f{std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest()};
  for (double x : xs)
    if (std::isfinite(x)) f.x0 = std::min(f.x0, x), f.x1 = std::max(f.x1, x);
  for (double y : ys)
    if (std::isfinite(y)) f.y0 = std::min(f.y0, y), f.y1 = std::max(f.y1, y);
  if (f.x0 > f.x1) f.x0 = 0, f.x1 = 1;
  if (f.y0 > f.y1) f.y0 = 0, f.y1 = 1;
  return f;
}

std::string svg_open(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"16\">"
     << escape(title) << "</text>\n";
  return os.str();
}

std::string axes(const Frame& f, const std::string& xl, const std::string& yl) {
  std::ostringstream os;
  const double left = kMargin, right = kWidth - kMargin, top = kMargin, bottom = kHeight - kMargin;
  os << "<g stroke=\"black\" stroke-width=\"1\">"
     << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
     << "\"/><line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
     << "\"/></g>\n<g font-family=\"sans-serif\" font-size=\"11\">";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << f.px(xv) << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\">"
       << format_number(std::round(xv * 1000) / 1000) << "</text>";
    os << "<text x=\"" << left - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">"
       << format_number(std::round(yv * 1000) / 1000) << "</text>";
  }
  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\">"
     << escape(xl) << "</text>";
  os << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kHeight / 2 << ")\">" << escape(yl) << "</text></g>\n";
  return os.str();
}

std::string legend(const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "<g font-family=\"sans-serif\" font-size=\"11\">";
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kMargin + 14.0 * static_cast<double>(i);
    os << "<rect x=\"" << kWidth - kMargin + 6 << "\" y=\"" << y - 8 << "\" width=\"8\" height=\"8\" fill=\""
       << palette(i) << "\"/><text x=\"" << kWidth - kMargin + 18 << "\" y=\"" << y << "\">"
       << escape(names[i]) << "</text>";
  }
  os << "</g>\n";
  return os.str();
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const Frame f = fit(xs, ys);
  std::ostringstream os;
  os << svg_open(title) << axes(f, x_label, y_label);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.label);
    os << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      os << f.px(s.x[k]) << ',' << f.py(s.y[k]) << ' ';
    }
    os << "\"/>\n";
  }
  os << legend(names) << "</svg>\n";
  return os.str();
}

std::string svg_scatter(const std::string& title, const std::vector<ScatterPoint>& points,
                        const std::vector<std::string>& group_names,
                        const std::vector<ScatterPoint>& path) {
  std::vector<double> xs, ys;
  for (const auto& p : points) xs.push_back(p.x), ys.push_back(p.y);
  for (const auto& p : path) xs.push_back(p.x), ys.push_back(p.y);
  const Frame f = fit(xs, ys);
  std::ostringstream os;
  os << svg_open(title) << axes(f, "PC1", "PC2");
  for (const auto& p : points) {
    os << "<circle cx=\"" << f.px(p.x) << "\" cy=\"" << f.py(p.y) << "\" r=\"2\" fill=\""
       << palette(static_cast<std::size_t>(std::max(p.group, 0))) << "\" fill-opacity=\"0.6\"/>\n";
  }
  if (!path.empty()) {
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-dasharray=\"4 3\" points=\"";
    for (const auto& p : path) os << f.px(p.x) << ',' << f.py(p.y) << ' ';
    os << "\"/>\n";
  }
  os << legend(group_names) << "</svg>\n";
  return os.str();
}

std::string svg_heatmap(const std::string& title, const std::vector<std::vector<double>>& grid,
                        const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels) {
  const std::size_t rows = grid.size();
  const std::size_t cols = rows ? grid[0].size() : 0;
  double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
  for (const auto& r : grid)
    for (double v : r) lo = std::min(lo, v), hi = std::max(hi, v);
  const double bound = std::max(std::abs(lo), std::abs(hi));
  const double cw = (kWidth - 2 * kMargin) / std::max<std::size_t>(cols, 1);
  const double ch = (kHeight - 2 * kMargin) / std::max<std::size_t>(rows, 1);
  std::ostringstream os;
  os << svg_open(title);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      // Diverging blue-white-red around zero.
      const double t = bound > 0 ? grid[i][j] / bound : 0.0;
      const int fade = static_cast<int>(255 * (1 - std::abs(t)));
      char color[16];
      if (t >= 0) std::snprintf(color, sizeof color, "#ff%02x%02x", fade, fade);
      else std::snprintf(color, sizeof color, "#%02x%02xff", fade, fade);
      os << "<rect x=\"" << kMargin + cw * j << "\" y=\"" << kMargin + ch * i << "\" width=\"" << cw
         << "\" height=\"" << ch << "\" fill=\"" << color << "\"><title>"
         << format_number(grid[i][j]) << "</title></rect>\n";
    }
  os << "<g font-family=\"sans-serif\" font-size=\"10\">";
  for (std::size_t i = 0; i < std::min(rows, row_labels.size()); ++i)
    os << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + ch * (i + 0.5) + 3
       << "\" text-anchor=\"end\">" << escape(row_labels[i]) << "</text>";
  for (std::size_t j = 0; j < std::min(cols, col_labels.size()); ++j)
    os << "<text x=\"" << kMargin + cw * (j + 0.5) << "\" y=\"" << kHeight - kMargin + 14
       << "\" text-anchor=\"middle\">" << escape(col_labels[j]) << "</text>";
  os << "</g>\n</svg>\n";
  return os.str();
}

std::string encode_ppm(const Tensor32& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode_ppm expects a 3 x H x W image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float raw = image[c * plane + i];
      const float v = std::isnan(raw) ? 0.0f : std::clamp(std::round(raw), 0.0f, 255.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
  return out;
}

}  // namespace bclab
