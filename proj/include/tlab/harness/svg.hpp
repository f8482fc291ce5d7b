#pragma once

#include <string>
#include <vector>

namespace tlab::harness {

struct SvgSeries {
    std::string name;
    std::vector<double> values;
    std::vector<double> stderrs;  // optional, empty or same length
};

/// Line plot with one polyline per series over shared x labels.
std::string svg_line_plot(const std::string& title, const std::vector<std::string>& x_labels,
                          const std::vector<SvgSeries>& series);

/// Heatmap of values in [0,1] with row/col labels (blue = 0 .. red = 1).
std::string svg_heatmap(const std::string& title, const std::vector<std::string>& rows,
                        const std::vector<std::string>& cols, const std::vector<double>& values);

struct SvgDot {
    std::string x_label, y_label;
    double size = 1.0;   // encodes the transfer gain ratio
    double color = 0.0;  // in [0,1], encodes the normalized reuse share
};

/// Dot grid: size keyed to one quantity, fill color to another.
std::string svg_dot_plot(const std::string& title, const std::vector<std::string>& x_labels,
                         const std::vector<std::string>& y_labels,
                         const std::vector<SvgDot>& dots);

} // namespace tlab::harness
