#pragma once

// Minimal standalone SVG output for line plots and point/segment scenes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfm::svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

class Canvas {
public:
    Canvas(double width, double height) : width_(width), height_(height) {}

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double w = 1.0,
              const std::string& dash = "", const std::string& cls = "") {
        body_ << "<line" << class_attr(cls) << " x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
              << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(w) << '"';
        if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << '"';
        body_ << "/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill, const std::string& stroke = "none",
                const std::string& dash = "", const std::string& cls = "") {
        body_ << "<circle" << class_attr(cls) << " cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r)
              << "\" fill=\"" << fill << "\" stroke=\"" << stroke << '"';
        if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << '"';
        body_ << "/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double w = 1.5) {
        body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(w) << "\" points=\"";
        for (const auto& [x, y] : pts) body_ << num(x) << ',' << num(y) << ' ';
        body_ << "\"/>\n";
    }

    void text(double x, double y, const std::string& s, double size = 12, const std::string& anchor = "middle",
              double rotate = 0.0) {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\""
              << num(size) << "\" text-anchor=\"" << anchor << '"';
        if (rotate != 0.0) body_ << " transform=\"rotate(" << num(rotate) << ' ' << num(x) << ' ' << num(y) << ")\"";
        body_ << '>' << escape(s) << "</text>\n";
    }

    std::string str() const {
        std::ostringstream out;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\"" << num(height_)
            << "\" viewBox=\"0 0 " << num(width_) << ' ' << num(height_) << "\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body_.str() << "</svg>\n";
        return out.str();
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << str();
    }

private:
    static std::string class_attr(const std::string& cls) { return cls.empty() ? "" : " class=\"" + cls + "\""; }

    double width_;
    double height_;
    std::ostringstream body_;
};

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::string color = "#d62728";
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    // Dashed horizontal reference line (e.g. a baseline), drawn when finite.
    double reference = std::numeric_limits<double>::quiet_NaN();
    std::string reference_label = "baseline";
};

inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
    if (!(hi > lo)) return {lo};
    const double raw = (hi - lo) / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    std::vector<double> t;
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return t;
}

inline Canvas render(const LinePlot& plot, double width = 640, double height = 420) {
    const double left = 80, right = 20, top = 40, bottom = 60;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : plot.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (std::isfinite(plot.reference)) {
        ymin = std::min(ymin, plot.reference);
        ymax = std::max(ymax, plot.reference);
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax == ymin) ymin -= std::max(1e-3, std::abs(ymin) * 0.1), ymax += std::max(1e-3, std::abs(ymax) * 0.1);
    const double pad = 0.08 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

    Canvas c(width, height);
    c.text(width / 2, 24, plot.title, 15);
    c.line(left, top + ph, left + pw, top + ph, "black");
    c.line(left, top, left, top + ph, "black");
    for (double t : nice_ticks(xmin, xmax)) {
        c.line(sx(t), top + ph, sx(t), top + ph + 5, "black");
        c.text(sx(t), top + ph + 20, num(t), 11);
    }
    for (double t : nice_ticks(ymin, ymax)) {
        c.line(left - 5, sy(t), left, sy(t), "black");
        c.line(left, sy(t), left + pw, sy(t), "#e0e0e0", 0.5);
        c.text(left - 8, sy(t) + 4, num(t), 11, "end");
    }
    c.text(left + pw / 2, height - 15, plot.x_label, 13);
    c.text(20, top + ph / 2, plot.y_label, 13, "middle", -90);

    double legend_y = top + 12;
    if (std::isfinite(plot.reference)) {
        c.line(left, sy(plot.reference), left + pw, sy(plot.reference), "#555555", 1.5, "6,4", "reference");
        c.line(left + pw - 150, legend_y, left + pw - 120, legend_y, "#555555", 1.5, "6,4");
        c.text(left + pw - 115, legend_y + 4, plot.reference_label, 11, "start");
        legend_y += 16;
    }
    for (const auto& s : plot.series) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(sx(s.x[i]), sy(s.y[i]));
        c.polyline(pts, s.color);
        for (const auto& [x, y] : pts) c.circle(x, y, 3.5, s.color);
        c.line(left + pw - 150, legend_y, left + pw - 120, legend_y, s.color, 2);
        c.text(left + pw - 115, legend_y + 4, s.label, 11, "start");
        legend_y += 16;
    }
    return c;
}

} // namespace rfm::svg
