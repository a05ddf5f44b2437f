#include "cfgeo/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cfgeo {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

}  // namespace

std::string svg_loglog_plot(const std::vector<SvgSeries>& series, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel, int width,
                            int height) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (s.x[i] <= 0.0 || s.y[i] <= 0.0) {
                throw std::invalid_argument("svg: log plot needs positive data");
            }
            xmin = std::min(xmin, std::log10(s.x[i]));
            xmax = std::max(xmax, std::log10(s.x[i]));
            ymin = std::min(ymin, std::log10(s.y[i]));
            ymax = std::max(ymax, std::log10(s.y[i]));
        }
    }
    if (xmin > xmax) throw std::invalid_argument("svg: no data");
    if (xmax - xmin < 1e-9) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
    const double pad_x = 0.06 * (xmax - xmin), pad_y = 0.08 * (ymax - ymin);
    xmin -= pad_x;
    xmax += pad_x;
    ymin -= pad_y;
    ymax += pad_y;

    const double ml = 70, mr = 20, mt = 40, mb = 55;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto px = [&](double lx) { return ml + (lx - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double ly) { return mt + (ymax - ly) / (ymax - ymin) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#444\"/>\n";

    // Decade grid lines and tick labels.
    for (int e = static_cast<int>(std::floor(xmin)); e <= static_cast<int>(std::ceil(xmax)); ++e) {
        if (e < xmin || e > xmax) continue;
        svg << "<line x1=\"" << fmt(px(e)) << "\" y1=\"" << mt << "\" x2=\"" << fmt(px(e))
            << "\" y2=\"" << mt + ph << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << fmt(px(e)) << "\" y=\"" << mt + ph + 18
            << "\" text-anchor=\"middle\" font-size=\"11\">1e" << e << "</text>\n";
    }
    for (int e = static_cast<int>(std::floor(ymin)); e <= static_cast<int>(std::ceil(ymax)); ++e) {
        if (e < ymin || e > ymax) continue;
        svg << "<line x1=\"" << ml << "\" y1=\"" << fmt(py(e)) << "\" x2=\"" << ml + pw
            << "\" y2=\"" << fmt(py(e)) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(py(e) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\">1e" << e << "</text>\n";
    }
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n";
    svg << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " << mt + ph / 2
        << ")\">" << ylabel << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& sr = series[s];
        const char* color = kPalette[s % 6];
        std::ostringstream path;
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            const double cx = px(std::log10(sr.x[i]));
            const double cy = py(std::log10(sr.y[i]));
            path << (i == 0 ? "M" : "L") << fmt(cx) << " " << fmt(cy) << " ";
            svg << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"3\" fill=\""
                << color << "\"/>\n";
        }
        svg << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
        if (sr.draw_fit && sr.x.size() >= 2) {
            // Fit is in natural-log space: log y = intercept + slope * log x.
            auto fit_ly = [&](double lx10) {
                const double lx = lx10 * std::log(10.0);
                return (sr.fit_intercept + sr.fit_slope * lx) / std::log(10.0);
            };
            const double x0 = std::log10(*std::min_element(sr.x.begin(), sr.x.end()));
            const double x1 = std::log10(*std::max_element(sr.x.begin(), sr.x.end()));
            svg << "<line x1=\"" << fmt(px(x0)) << "\" y1=\"" << fmt(py(fit_ly(x0))) << "\" x2=\""
                << fmt(px(x1)) << "\" y2=\"" << fmt(py(fit_ly(x1))) << "\" stroke=\"" << color
                << "\" stroke-dasharray=\"5 4\"/>\n";
        }
        svg << "<text x=\"" << ml + pw - 8 << "\" y=\"" << mt + 18 + 16 * static_cast<double>(s)
            << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << sr.label
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace cfgeo
