#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bclab/tensor.hpp"

namespace bclab {

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Shortest round-trip text for a double ("%.17g" trimmed).
std::string format_number(double v);

std::string csv_row(const std::vector<std::string>& cells);
std::string csv_grid(const std::vector<std::vector<double>>& rows,
                     const std::vector<std::string>& header = {});

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  int group = 0;
};

// `path` points, if any, are joined by a dashed polyline (trajectories).
std::string svg_scatter(const std::string& title, const std::vector<ScatterPoint>& points,
                        const std::vector<std::string>& group_names,
                        const std::vector<ScatterPoint>& path = {});

std::string svg_heatmap(const std::string& title, const std::vector<std::vector<double>>& grid,
                        const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels);

// Binary P6 from a 3 x H x W tensor in pixel units; values are rounded and
// clamped to [0, 255].
std::string encode_ppm(const Tensor32& image);

}  // namespace bclab
