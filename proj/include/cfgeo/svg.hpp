#pragma once

#include <string>
#include <vector>

namespace cfgeo {

// Minimal log-log scatter plot with optional fitted lines; no external
// plotting dependencies.
struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    double fit_slope = 0.0;
    double fit_intercept = 0.0;
    bool draw_fit = false;
};

std::string svg_loglog_plot(const std::vector<SvgSeries>& series, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            int width = 640, int height = 480);

}  // namespace cfgeo
