#pragma once

#include <optional>
#include <string>
#include <vector>

namespace loopscope {

// Minimal deterministic SVG line plots: fixed layout, fixed number
// formatting, no timestamps, so identical data renders identical bytes.

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    std::string color;      // empty = palette by index
    double width = 1.5;
    bool emphasize = false; // thicker stroke, used for highlighted heads
};

struct PlotBand {
    std::vector<double> x, lo, hi;
    std::string color;
    double opacity = 0.25;
};

struct PlotPanel {
    std::string title, x_label, y_label;
    std::vector<PlotBand> bands;
    std::vector<PlotSeries> series;
    std::optional<double> y_min, y_max;
    bool legend = true;
    std::size_t max_legend_entries = 8;
};

std::string render_svg(const std::vector<PlotPanel>& panels, int columns, int panel_width = 440,
                       int panel_height = 330);

}  // namespace loopscope
