#pragma once

// Minimal SVG line charts for velocity-versus-time curves. Self-contained
// so plotting needs no external tooling.

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsurf/io.hpp"

namespace gsurf {

struct SvgSeries {
    std::string label;
    std::string color; // CSS color
    bool dashed = false;
    std::vector<std::pair<double, double>> points;
};

// One chart panel; axes are linear with simple tick labels.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::string& y_label, const std::vector<SvgSeries>& series,
                                  int width = 480, int height = 300) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x0 > x1) {
        x0 = 0;
        x1 = 1;
    }
    if (y0 > y1) {
        y0 = 0;
        y1 = 1;
    }
    if (y1 - y0 < 1e-12) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double ml = 58, mr = 14, mt = 28, mb = 40;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return mt + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\" "
       << "font-family=\"sans-serif\">" << title << "</text>\n";
    // Axes and ticks.
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double yv = y0 + (y1 - y0) * i / 4.0;
        os << "<line x1=\"" << sx(xv) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(xv) << "\" y2=\""
           << mt + ph + 4 << "\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << sx(xv) << "\" y=\"" << mt + ph + 16
           << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" << format_double(xv)
           << "</text>\n";
        os << "<line x1=\"" << ml - 4 << "\" y1=\"" << sy(yv) << "\" x2=\"" << ml << "\" y2=\"" << sy(yv)
           << "\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << sy(yv) + 3
           << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\">" << format_double(yv)
           << "</text>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << x_label
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\" transform=\"rotate(-90 14 "
       << mt + ph / 2 << ")\">" << y_label << "</text>\n";

    double legend_y = mt + 12;
    for (const auto& s : series) {
        if (s.points.empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"";
        if (s.dashed) os << " stroke-dasharray=\"5 3\"";
        os << " points=\"";
        for (auto [x, y] : s.points) os << sx(x) << ',' << sy(y) << ' ';
        os << "\"/>\n";
        os << "<line x1=\"" << ml + pw - 92 << "\" y1=\"" << legend_y << "\" x2=\"" << ml + pw - 72
           << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
           << (s.dashed ? " stroke-dasharray=\"5 3\"" : "") << "/>\n";
        os << "<text x=\"" << ml + pw - 68 << "\" y=\"" << legend_y + 3
           << "\" font-size=\"10\" font-family=\"sans-serif\">" << s.label << "</text>\n";
        legend_y += 14;
    }
    os << "</svg>\n";
    return os.str();
}

// Per-component velocity curves, one panel each, optionally overlaying a
// reference series (dashed).
inline std::string velocity_plot_svg(const std::vector<std::map<int32_t, Vec3>>& est,
                                     const std::vector<std::map<int32_t, Vec3>>* ref, double dt) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const char* axis_names[] = {"vx (m/s)", "vy (m/s)", "vz (m/s)"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"940\">\n";
    for (int comp = 0; comp < 3; ++comp) {
        std::map<int32_t, SvgSeries> by_id;
        for (size_t t = 0; t < est.size(); ++t)
            for (const auto& [id, v] : est[t]) {
                SvgSeries& s = by_id[id];
                if (s.points.empty()) {
                    s.label = "bubble " + std::to_string(id);
                    s.color = kColors[static_cast<size_t>(id) % 6];
                }
                s.points.emplace_back(static_cast<double>(t + 1) * dt, v[comp]);
            }
        std::vector<SvgSeries> series;
        for (auto& [id, s] : by_id) series.push_back(std::move(s));
        if (ref)
            for (size_t t = 0; t < ref->size(); ++t)
                for (const auto& [id, v] : (*ref)[t]) {
                    SvgSeries* found = nullptr;
                    const std::string label = "ref " + std::to_string(id);
                    for (auto& s : series)
                        if (s.label == label) found = &s;
                    if (!found) {
                        series.push_back({label, kColors[static_cast<size_t>(id) % 6], true, {}});
                        found = &series.back();
                    }
                    found->points.emplace_back(static_cast<double>(t + 1) * dt, v[comp]);
                }
        os << "<g transform=\"translate(10," << 10 + comp * 310 << ")\">\n";
        os << svg_line_chart(axis_names[comp], "time (s)", axis_names[comp], series);
        os << "</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace gsurf
