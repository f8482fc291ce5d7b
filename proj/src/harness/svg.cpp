#include "tlab/harness/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace tlab::harness {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string heat_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const int r = (int)std::lround(255 * v);
    const int b = (int)std::lround(255 * (1.0 - v));
    const int g = (int)std::lround(96 * (1.0 - std::fabs(2.0 * v - 1.0)));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

} // namespace

std::string svg_line_plot(const std::string& title, const std::vector<std::string>& x_labels,
                          const std::vector<SvgSeries>& series) {
    const int w = 640, h = 420, ml = 70, mr = 170, mt = 40, mb = 70;
    const int pw = w - ml - mr, ph = h - mt - mb;
    double lo = 0.0, hi = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (double v : s.values) {
            if (first) {
                lo = hi = v;
                first = false;
            }
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;

    std::string out = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(w) +
                      "' height='" + std::to_string(h) + "'>\n";
    out += "<rect width='100%' height='100%' fill='white'/>\n";
    out += "<text x='" + std::to_string(w / 2) + "' y='24' text-anchor='middle' font-size='15'>" +
           title + "</text>\n";
    auto xpos = [&](std::size_t i) {
        return x_labels.size() < 2 ? ml + pw / 2.0
                                   : ml + pw * (double)i / (double)(x_labels.size() - 1);
    };
    auto ypos = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

    out += "<line x1='" + std::to_string(ml) + "' y1='" + std::to_string(mt + ph) + "' x2='" +
           std::to_string(ml + pw) + "' y2='" + std::to_string(mt + ph) +
           "' stroke='black'/>\n";
    out += "<line x1='" + std::to_string(ml) + "' y1='" + std::to_string(mt) + "' x2='" +
           std::to_string(ml) + "' y2='" + std::to_string(mt + ph) + "' stroke='black'/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = lo + (hi - lo) * tick / 4.0;
        out += "<text x='" + std::to_string(ml - 8) + "' y='" + fmt(ypos(v) + 4) +
               "' text-anchor='end' font-size='11'>" + fmt(v) + "</text>\n";
    }
    for (std::size_t i = 0; i < x_labels.size(); ++i)
        out += "<text x='" + fmt(xpos(i)) + "' y='" + std::to_string(mt + ph + 16) +
               "' text-anchor='middle' font-size='10' transform='rotate(35 " + fmt(xpos(i)) +
               " " + std::to_string(mt + ph + 16) + ")'>" + x_labels[i] + "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % 10];
        std::string pts;
        for (std::size_t i = 0; i < series[s].values.size(); ++i)
            pts += fmt(xpos(i)) + "," + fmt(ypos(series[s].values[i])) + " ";
        out += "<polyline fill='none' stroke='" + std::string(color) + "' stroke-width='1.6' points='" +
               pts + "'/>\n";
        for (std::size_t i = 0; i < series[s].values.size(); ++i) {
            out += "<circle cx='" + fmt(xpos(i)) + "' cy='" + fmt(ypos(series[s].values[i])) +
                   "' r='2.6' fill='" + color + "'/>\n";
            if (i < series[s].stderrs.size() && series[s].stderrs[i] > 0) {
                const double e = series[s].stderrs[i];
                out += "<line x1='" + fmt(xpos(i)) + "' y1='" +
                       fmt(ypos(series[s].values[i] - e)) + "' x2='" + fmt(xpos(i)) + "' y2='" +
                       fmt(ypos(series[s].values[i] + e)) + "' stroke='" + color + "'/>\n";
            }
        }
        out += "<text x='" + std::to_string(ml + pw + 12) + "' y='" +
               std::to_string(mt + 14 + 16 * (int)s) + "' font-size='11' fill='" + color + "'>" +
               series[s].name + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

std::string svg_heatmap(const std::string& title, const std::vector<std::string>& rows,
                        const std::vector<std::string>& cols,
                        const std::vector<double>& values) {
    const int cell = 26, ml = 110, mt = 60;
    const int w = ml + cell * (int)cols.size() + 40;
    const int h = mt + cell * (int)rows.size() + 80;
    std::string out = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(w) +
                      "' height='" + std::to_string(h) + "'>\n";
    out += "<rect width='100%' height='100%' fill='white'/>\n";
    out += "<text x='" + std::to_string(w / 2) + "' y='24' text-anchor='middle' font-size='14'>" +
           title + "</text>\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const double v = values[i * cols.size() + j];
            out += "<rect x='" + std::to_string(ml + (int)j * cell) + "' y='" +
                   std::to_string(mt + (int)i * cell) + "' width='" + std::to_string(cell) +
                   "' height='" + std::to_string(cell) + "' fill='" + heat_color(v) +
                   "'><title>" + rows[i] + " / " + cols[j] + " = " + fmt(v) + "</title></rect>\n";
        }
    for (std::size_t i = 0; i < rows.size(); ++i)
        out += "<text x='" + std::to_string(ml - 6) + "' y='" +
               std::to_string(mt + (int)i * cell + cell / 2 + 4) +
               "' text-anchor='end' font-size='10'>" + rows[i] + "</text>\n";
    for (std::size_t j = 0; j < cols.size(); ++j)
        out += "<text x='" + std::to_string(ml + (int)j * cell + cell / 2) + "' y='" +
               std::to_string(mt + (int)rows.size() * cell + 14) +
               "' text-anchor='middle' font-size='10' transform='rotate(45 " +
               std::to_string(ml + (int)j * cell + cell / 2) + " " +
               std::to_string(mt + (int)rows.size() * cell + 14) + ")'>" + cols[j] +
               "</text>\n";
    out += "</svg>\n";
    return out;
}

std::string svg_dot_plot(const std::string& title, const std::vector<std::string>& x_labels,
                         const std::vector<std::string>& y_labels,
                         const std::vector<SvgDot>& dots) {
    const int cell = 64, ml = 130, mt = 60;
    const int w = ml + cell * (int)x_labels.size() + 60;
    const int h = mt + cell * (int)y_labels.size() + 70;
    auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == s) return (int)i;
        return -1;
    };
    std::string out = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(w) +
                      "' height='" + std::to_string(h) + "'>\n";
    out += "<rect width='100%' height='100%' fill='white'/>\n";
    out += "<text x='" + std::to_string(w / 2) + "' y='24' text-anchor='middle' font-size='14'>" +
           title + "</text>\n";
    for (const auto& d : dots) {
        const int xi = index_of(x_labels, d.x_label), yi = index_of(y_labels, d.y_label);
        if (xi < 0 || yi < 0) continue;
        // dot area keyed to the gain ratio; 1.0 maps to a modest disc
        const double r = std::clamp(10.0 * std::sqrt(std::max(0.1, d.size)), 4.0, 30.0);
        out += "<circle cx='" + std::to_string(ml + xi * cell + cell / 2) + "' cy='" +
               std::to_string(mt + yi * cell + cell / 2) + "' r='" + fmt(r) + "' fill='" +
               heat_color(d.color) + "' fill-opacity='0.85' stroke='black' stroke-width='0.5'>" +
               "<title>gain=" + fmt(d.size) + " share=" + fmt(d.color) + "</title></circle>\n";
    }
    for (std::size_t i = 0; i < y_labels.size(); ++i)
        out += "<text x='" + std::to_string(ml - 8) + "' y='" +
               std::to_string(mt + (int)i * cell + cell / 2 + 4) +
               "' text-anchor='end' font-size='11'>" + y_labels[i] + "</text>\n";
    for (std::size_t j = 0; j < x_labels.size(); ++j)
        out += "<text x='" + std::to_string(ml + (int)j * cell + cell / 2) + "' y='" +
               std::to_string(mt + (int)y_labels.size() * cell + 18) +
               "' text-anchor='middle' font-size='11'>" + x_labels[j] + "</text>\n";
    out += "</svg>\n";
    return out;
}

} // namespace tlab::harness
