#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace solarpi::svg {

/// Minimal SVG line/band/bar plotter. Text output keeps the report artifacts
/// diffable and free of rendering dependencies.
class Plot {
public:
    Plot(double width, double height, std::string title)
        : w_(width), h_(height), title_(std::move(title)) {}

    void line(std::vector<double> xs, std::vector<double> ys, const char* color,
              std::string label = "", bool dashed = false) {
        touch(xs, ys);
        series_.push_back({std::move(xs), std::move(ys), color, std::move(label), dashed});
    }

    /// Shaded region between lo and hi.
    void band(std::vector<double> xs, std::vector<double> lo, std::vector<double> hi,
              const char* color, std::string label = "") {
        touch(xs, lo);
        touch(xs, hi);
        bands_.push_back({std::move(xs), std::move(lo), std::move(hi), color, std::move(label)});
    }

    void bars(std::vector<double> xs, std::vector<double> ys, const char* color,
              std::string label = "") {
        std::vector<double> base(ys.size(), 0.0);
        touch(xs, ys);
        touch(xs, base);
        bars_.push_back({std::move(xs), std::move(ys), color, std::move(label)});
    }

    void hline(double y, const char* color, std::string label = "") {
        ymin_ = std::min(ymin_, y);
        ymax_ = std::max(ymax_, y);
        hlines_.push_back({y, color, std::move(label)});
    }

    void y_range(double lo, double hi) {
        ymin_ = lo;
        ymax_ = hi;
        fixed_y_ = true;
    }

    std::string render_group(double ox, double oy) const {
        const double ml = 52, mr = 14, mt = 28, mb = 34;
        const double pw = w_ - ml - mr, ph = h_ - mt - mb;
        double xmin = xmin_, xmax = xmax_, ymin = ymin_, ymax = ymax_;
        if (!(xmax > xmin)) xmax = xmin + 1;
        if (!(ymax > ymin)) ymax = ymin + 1;
        if (!fixed_y_) {
            const double pad = 0.05 * (ymax - ymin);
            ymin -= pad;
            ymax += pad;
        }
        auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
        auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

        std::ostringstream os;
        char buf[256];
        os << "<g transform=\"translate(" << ox << "," << oy << ")\">\n";
        os << "<rect x=\"0\" y=\"0\" width=\"" << w_ << "\" height=\"" << h_
           << "\" fill=\"white\" stroke=\"none\"/>\n";
        os << "<text x=\"" << w_ / 2 << "\" y=\"16\" text-anchor=\"middle\" "
              "font-family=\"sans-serif\" font-size=\"13\">"
           << title_ << "</text>\n";
        // axes
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                      "stroke=\"black\"/>\n",
                      ml, mt + ph, ml + pw, mt + ph);
        os << buf;
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                      "stroke=\"black\"/>\n",
                      ml, mt, ml, mt + ph);
        os << buf;
        // ticks
        for (int i = 0; i <= 4; ++i) {
            const double fx = xmin + (xmax - xmin) * i / 4.0;
            const double fy = ymin + (ymax - ymin) * i / 4.0;
            std::snprintf(buf, sizeof(buf),
                          "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                          "font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                          px(fx), mt + ph + 14, fx);
            os << buf;
            std::snprintf(buf, sizeof(buf),
                          "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" "
                          "font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                          ml - 4, py(fy) + 3, fy);
            os << buf;
        }
        for (const auto& b : bands_) {
            os << "<polygon fill=\"" << b.color << "\" fill-opacity=\"0.3\" stroke=\"none\" "
               << "points=\"";
            for (size_t i = 0; i < b.xs.size(); ++i)
                os << px(b.xs[i]) << ',' << py(b.hi[i]) << ' ';
            for (size_t i = b.xs.size(); i-- > 0;)
                os << px(b.xs[i]) << ',' << py(b.lo[i]) << ' ';
            os << "\"/>\n";
        }
        for (const auto& br : bars_) {
            const double bw = br.xs.size() > 1
                                  ? 0.7 * pw / (xmax - xmin) *
                                        std::max(1e-9, (br.xs[1] - br.xs[0]))
                                  : pw * 0.5;
            for (size_t i = 0; i < br.xs.size(); ++i) {
                const double x = px(br.xs[i]) - bw / 2;
                const double y = py(br.ys[i]);
                std::snprintf(buf, sizeof(buf),
                              "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                              "fill=\"%s\" fill-opacity=\"0.8\"/>\n",
                              x, y, bw, py(ymin) - y, br.color);
                os << buf;
            }
        }
        for (const auto& l : hlines_) {
            std::snprintf(buf, sizeof(buf),
                          "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                          "stroke-dasharray=\"5,3\"/>\n",
                          ml, py(l.y), ml + pw, py(l.y), l.color);
            os << buf;
        }
        for (const auto& s : series_) {
            os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.4\"";
            if (s.dashed) os << " stroke-dasharray=\"4,3\"";
            os << " points=\"";
            for (size_t i = 0; i < s.xs.size(); ++i)
                os << px(s.xs[i]) << ',' << py(s.ys[i]) << ' ';
            os << "\"/>\n";
        }
        // legend
        double ly = mt + 6;
        auto legend_entry = [&](const std::string& label, const char* color) {
            if (label.empty()) return;
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.1f\" y=\"%.1f\" width=\"10\" height=\"4\" fill=\"%s\"/>"
                          "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                          "font-size=\"10\">%s</text>\n",
                          ml + pw - 110, ly, color, ml + pw - 96, ly + 5, label.c_str());
            os << buf;
            ly += 13;
        };
        for (const auto& s : series_) legend_entry(s.label, s.color);
        for (const auto& b : bands_) legend_entry(b.label, b.color);
        for (const auto& br : bars_) legend_entry(br.label, br.color);
        for (const auto& l : hlines_) legend_entry(l.label, l.color);
        os << "</g>\n";
        return os.str();
    }

    double width() const { return w_; }
    double height() const { return h_; }

private:
    struct Series {
        std::vector<double> xs, ys;
        const char* color;
        std::string label;
        bool dashed = false;
    };
    struct Band {
        std::vector<double> xs, lo, hi;
        const char* color;
        std::string label;
    };
    struct Bars {
        std::vector<double> xs, ys;
        const char* color;
        std::string label;
    };
    struct HLine {
        double y;
        const char* color;
        std::string label;
    };

    void touch(const std::vector<double>& xs, const std::vector<double>& ys) {
        for (double x : xs) {
            xmin_ = std::min(xmin_, x);
            xmax_ = std::max(xmax_, x);
        }
        for (double y : ys) {
            ymin_ = std::min(ymin_, y);
            ymax_ = std::max(ymax_, y);
        }
    }

    double w_, h_;
    std::string title_;
    std::vector<Series> series_;
    std::vector<Band> bands_;
    std::vector<Bars> bars_;
    std::vector<HLine> hlines_;
    double xmin_ = std::numeric_limits<double>::infinity();
    double xmax_ = -std::numeric_limits<double>::infinity();
    double ymin_ = std::numeric_limits<double>::infinity();
    double ymax_ = -std::numeric_limits<double>::infinity();
    bool fixed_y_ = false;
};

/// One or more panels laid out horizontally in a single document.
inline std::string document(const std::vector<Plot>& panels) {
    double w = 0, h = 0;
    for (const auto& p : panels) {
        w += p.width();
        h = std::max(h, p.height());
    }
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    double ox = 0;
    for (const auto& p : panels) {
        os << p.render_group(ox, 0);
        ox += p.width();
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace solarpi::svg
