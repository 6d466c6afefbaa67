#include "loopscope/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace loopscope {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Range {
    double lo = 0.0, hi = 1.0;
    double span() const { return hi - lo; }
};

Range data_range(const PlotPanel& panel, bool x_axis) {
    Range r{1e300, -1e300};
    auto feed = [&](const std::vector<double>& v) {
        for (const double d : v) {
            if (!std::isfinite(d)) continue;
            r.lo = std::min(r.lo, d);
            r.hi = std::max(r.hi, d);
        }
    };
    for (const auto& s : panel.series) feed(x_axis ? s.x : s.y);
    for (const auto& b : panel.bands) {
        feed(x_axis ? b.x : b.lo);
        if (!x_axis) feed(b.hi);
    }
    if (r.lo > r.hi) return {0.0, 1.0};
    if (!x_axis) {
        if (panel.y_min) r.lo = *panel.y_min;
        if (panel.y_max) r.hi = *panel.y_max;
    }
    if (r.hi - r.lo < 1e-12) {
        r.lo -= 0.5;
        r.hi += 0.5;
    }
    return r;
}

std::vector<double> nice_ticks(const Range& r, int target = 5) {
    const double raw = r.span() / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (const double mult : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * mult >= raw) {
            step = mag * mult;
            break;
        }
    }
    std::vector<double> ticks;
    const double first = std::ceil(r.lo / step) * step;
    for (double t = first; t <= r.hi + step * 1e-9; t += step) {
        ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    }
    return ticks;
}

}  // namespace

std::string render_svg(const std::vector<PlotPanel>& panels, int columns, int panel_width,
                       int panel_height) {
    if (panels.empty() || columns < 1) return "<svg xmlns=\"http://www.w3.org/2000/svg\"/>";
    const int rows = static_cast<int>((panels.size() + static_cast<std::size_t>(columns) - 1) /
                                      static_cast<std::size_t>(columns));
    const int total_w = columns * panel_width;
    const int total_h = rows * panel_height;

    const double ml = 58, mr = 14, mt = 34, mb = 44;  // margins inside a panel

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w << "\" height=\"" << total_h
        << "\" viewBox=\"0 0 " << total_w << " " << total_h << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"" << total_w << "\" height=\"" << total_h << "\" fill=\"white\"/>\n";

    for (std::size_t pi = 0; pi < panels.size(); ++pi) {
        const PlotPanel& panel = panels[pi];
        const double ox = static_cast<double>((static_cast<int>(pi) % columns) * panel_width);
        const double oy = static_cast<double>((static_cast<int>(pi) / columns) * panel_height);
        const double x0 = ox + ml, y0 = oy + mt;
        const double w = panel_width - ml - mr, h = panel_height - mt - mb;

        const Range rx = data_range(panel, true);
        const Range ry = data_range(panel, false);
        auto sx = [&](double v) { return x0 + (v - rx.lo) / rx.span() * w; };
        auto sy = [&](double v) { return y0 + h - (v - ry.lo) / ry.span() * h; };

        out << "<text x=\"" << fmt(ox + panel_width / 2.0) << "\" y=\"" << fmt(oy + 18)
            << "\" text-anchor=\"middle\" font-size=\"13\" font-weight=\"bold\">" << panel.title
            << "</text>\n";

        // axes + ticks
        out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(w)
            << "\" height=\"" << fmt(h) << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
        for (const double t : nice_ticks(rx)) {
            if (t < rx.lo - 1e-12 || t > rx.hi + 1e-12) continue;
            out << "<line x1=\"" << fmt(sx(t)) << "\" y1=\"" << fmt(y0 + h) << "\" x2=\"" << fmt(sx(t))
                << "\" y2=\"" << fmt(y0 + h + 4) << "\" stroke=\"#444\"/>\n";
            out << "<text x=\"" << fmt(sx(t)) << "\" y=\"" << fmt(y0 + h + 16)
                << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(t) << "</text>\n";
        }
        for (const double t : nice_ticks(ry)) {
            if (t < ry.lo - 1e-12 || t > ry.hi + 1e-12) continue;
            out << "<line x1=\"" << fmt(x0 - 4) << "\" y1=\"" << fmt(sy(t)) << "\" x2=\"" << fmt(x0)
                << "\" y2=\"" << fmt(sy(t)) << "\" stroke=\"#444\"/>\n";
            out << "<text x=\"" << fmt(x0 - 7) << "\" y=\"" << fmt(sy(t) + 3)
                << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(t) << "</text>\n";
        }
        out << "<text x=\"" << fmt(x0 + w / 2) << "\" y=\"" << fmt(y0 + h + 32)
            << "\" text-anchor=\"middle\" font-size=\"11\">" << panel.x_label << "</text>\n";
        out << "<text x=\"" << fmt(ox + 14) << "\" y=\"" << fmt(y0 + h / 2)
            << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 " << fmt(ox + 14) << " "
            << fmt(y0 + h / 2) << ")\">" << panel.y_label << "</text>\n";

        for (std::size_t bi = 0; bi < panel.bands.size(); ++bi) {
            const PlotBand& b = panel.bands[bi];
            if (b.x.empty()) continue;
            out << "<polygon fill=\"" << (b.color.empty() ? kPalette[bi % 10] : b.color)
                << "\" fill-opacity=\"" << fmt(b.opacity) << "\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < b.x.size(); ++i) {
                out << fmt(sx(b.x[i])) << "," << fmt(sy(b.lo[i])) << " ";
            }
            for (std::size_t i = b.x.size(); i-- > 0;) {
                out << fmt(sx(b.x[i])) << "," << fmt(sy(b.hi[i])) << " ";
            }
            out << "\"/>\n";
        }

        for (std::size_t si = 0; si < panel.series.size(); ++si) {
            const PlotSeries& s = panel.series[si];
            if (s.x.empty()) continue;
            const std::string color = s.color.empty() ? kPalette[si % 10] : s.color;
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
                << fmt(s.emphasize ? s.width * 1.8 : s.width) << "\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                out << fmt(sx(s.x[i])) << "," << fmt(sy(s.y[i])) << " ";
            }
            out << "\"/>\n";
        }

        if (panel.legend) {
            double ly = y0 + 8;
            std::size_t shown = 0;
            for (std::size_t si = 0; si < panel.series.size() && shown < panel.max_legend_entries; ++si) {
                const PlotSeries& s = panel.series[si];
                if (s.label.empty()) continue;
                const std::string color = s.color.empty() ? kPalette[si % 10] : s.color;
                out << "<line x1=\"" << fmt(x0 + w - 110) << "\" y1=\"" << fmt(ly) << "\" x2=\""
                    << fmt(x0 + w - 92) << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color
                    << "\" stroke-width=\"2\"/>\n";
                out << "<text x=\"" << fmt(x0 + w - 88) << "\" y=\"" << fmt(ly + 3)
                    << "\" font-size=\"10\">" << s.label << "</text>\n";
                ly += 13;
                ++shown;
            }
        }
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace loopscope
