#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sscsr/errors.hpp"

namespace sscsr {

struct Series {
    std::string label;
    std::vector<double> x, y;
};

namespace svg {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

// Largest 1/2/5 x 10^k step not exceeding the raw interval.
inline double nice_step(double range, int target_ticks) {
    const double raw = range / std::max(1, target_ticks);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {5.0, 2.0, 1.0}) {
        if (mag * m <= raw) return mag * m;
    }
    return mag;
}

} // namespace svg

/// Dependency-free polyline chart. Output is deterministic for identical input.
inline std::string render_line_chart(const std::string& title, const std::string& xlabel,
                                     const std::string& ylabel,
                                     const std::vector<Series>& series, int width = 860,
                                     int height = 540) {
    if (series.empty()) throw DegenerateInputError("render_line_chart: no series");
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) {
            throw ShapeError("render_line_chart: series \"" + s.label + "\" x/y length mismatch");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (first) throw DegenerateInputError("render_line_chart: all series empty");
    if (xmax == xmin) {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if (ymax == ymin) {
        ymin -= 1.0;
        ymax += 1.0;
    }

    const double L = 70, R = 150, T = 44, B = 54;
    const double pw = width - L - R, ph = height - T - B;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return T + ph - (y - ymin) / (ymax - ymin) * ph; };

    static const char* palette[] = {"#1f6fb2", "#d1495b", "#34845c", "#8c5fae",
                                    "#c98a2b", "#3aa6a6", "#7a6a53", "#5470c6"};
    const int npal = 8;

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
           std::to_string(width) + " " + std::to_string(height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + svg::fmt(L + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" +
           svg::escape(title) + "</text>\n";

    // Axes and ticks.
    out += "<line x1=\"" + svg::fmt(L) + "\" y1=\"" + svg::fmt(T) + "\" x2=\"" + svg::fmt(L) +
           "\" y2=\"" + svg::fmt(T + ph) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + svg::fmt(L) + "\" y1=\"" + svg::fmt(T + ph) + "\" x2=\"" +
           svg::fmt(L + pw) + "\" y2=\"" + svg::fmt(T + ph) + "\" stroke=\"black\"/>\n";

    const double xstep = svg::nice_step(xmax - xmin, 6);
    for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-12 * (xmax - xmin);
         t += xstep) {
        const double X = px(t);
        out += "<line x1=\"" + svg::fmt(X) + "\" y1=\"" + svg::fmt(T + ph) + "\" x2=\"" +
               svg::fmt(X) + "\" y2=\"" + svg::fmt(T + ph + 5) + "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + svg::fmt(X) + "\" y=\"" + svg::fmt(T + ph + 20) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
               svg::fmt(t) + "</text>\n";
    }
    const double ystep = svg::nice_step(ymax - ymin, 6);
    for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-12 * (ymax - ymin);
         t += ystep) {
        const double Y = py(t);
        out += "<line x1=\"" + svg::fmt(L - 5) + "\" y1=\"" + svg::fmt(Y) + "\" x2=\"" +
               svg::fmt(L) + "\" y2=\"" + svg::fmt(Y) + "\" stroke=\"black\"/>\n";
        out += "<line x1=\"" + svg::fmt(L) + "\" y1=\"" + svg::fmt(Y) + "\" x2=\"" +
               svg::fmt(L + pw) + "\" y2=\"" + svg::fmt(Y) +
               "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
        out += "<text x=\"" + svg::fmt(L - 9) + "\" y=\"" + svg::fmt(Y + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
               svg::fmt(t) + "</text>\n";
    }
    out += "<text x=\"" + svg::fmt(L + pw / 2) + "\" y=\"" + svg::fmt(height - 12.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           svg::escape(xlabel) + "</text>\n";
    out += "<text x=\"18\" y=\"" + svg::fmt(T + ph / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 18 " +
           svg::fmt(T + ph / 2) + ")\">" + svg::escape(ylabel) + "</text>\n";

    // Curves and legend.
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % npal];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!pts.empty()) pts += ' ';
            pts += svg::fmt(px(s.x[i])) + "," + svg::fmt(py(s.y[i]));
        }
        out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
        const double ly = T + 14 + 18.0 * static_cast<double>(si);
        out += "<line x1=\"" + svg::fmt(L + pw + 12) + "\" y1=\"" + svg::fmt(ly - 4) +
               "\" x2=\"" + svg::fmt(L + pw + 34) + "\" y2=\"" + svg::fmt(ly - 4) +
               "\" stroke=\"" + color + "\" stroke-width=\"1.6\"/>\n";
        out += "<text x=\"" + svg::fmt(L + pw + 40) + "\" y=\"" + svg::fmt(ly) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + svg::escape(s.label) +
               "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series) {
    const std::string body = render_line_chart(title, xlabel, ylabel, series);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open \"" + path + "\" for writing");
    out << body;
    if (!out.good()) throw Error("write to \"" + path + "\" failed");
}

} // namespace sscsr
