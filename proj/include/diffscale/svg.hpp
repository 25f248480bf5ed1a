#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "diffscale/errors.hpp"
#include "diffscale/inversion.hpp"
#include "diffscale/vec.hpp"
#include "diffscale/world.hpp"

namespace diffscale {
namespace svg_detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

struct Box {
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

    void include(double x, double y) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
    }
};

struct Canvas {
    Box box;
    double width = 640, height = 640;

    double px(double x) const { return (x - box.x_min) / (box.x_max - box.x_min) * width; }
    // world y grows upward, SVG y downward
    double py(double y) const { return height - (y - box.y_min) / (box.y_max - box.y_min) * height; }
};

inline double mixture_density(const GaussianMixture& world, double x, double y) {
    double p = 0.0;
    for (const auto& c : world.components()) {
        const double dx = x - c.mean[0], dy = y - c.mean[1];
        const double q = dx * dx / c.variances[0] + dy * dy / c.variances[1];
        const double norm_const =
            2.0 * std::acos(-1.0) * std::sqrt(c.variances[0] * c.variances[1]);
        p += c.weight / norm_const * std::exp(-0.5 * q);
    }
    return p;
}

/// Marching squares over a density grid, one polyline segment set per level.
inline void append_contours(std::ostringstream& out, const GaussianMixture& world,
                            const Canvas& canvas) {
    constexpr int kGrid = 96;
    std::vector<double> field(static_cast<std::size_t>((kGrid + 1) * (kGrid + 1)));
    double peak = 0.0;
    for (int iy = 0; iy <= kGrid; ++iy) {
        for (int ix = 0; ix <= kGrid; ++ix) {
            const double x =
                canvas.box.x_min + (canvas.box.x_max - canvas.box.x_min) * ix / kGrid;
            const double y =
                canvas.box.y_min + (canvas.box.y_max - canvas.box.y_min) * iy / kGrid;
            const double p = mixture_density(world, x, y);
            field[static_cast<std::size_t>(iy * (kGrid + 1) + ix)] = p;
            peak = std::max(peak, p);
        }
    }
    const double levels[] = {0.5 * peak, 0.1 * peak, 0.01 * peak};
    const char* colors[] = {"#7fa8d0", "#a7c4e0", "#cfe0ef"};

    for (int li = 0; li < 3; ++li) {
        out << "<g stroke=\"" << colors[li] << "\" stroke-width=\"1\" fill=\"none\">\n";
        for (int iy = 0; iy < kGrid; ++iy) {
            for (int ix = 0; ix < kGrid; ++ix) {
                const double x0 =
                    canvas.box.x_min + (canvas.box.x_max - canvas.box.x_min) * ix / kGrid;
                const double x1 =
                    canvas.box.x_min + (canvas.box.x_max - canvas.box.x_min) * (ix + 1) / kGrid;
                const double y0 =
                    canvas.box.y_min + (canvas.box.y_max - canvas.box.y_min) * iy / kGrid;
                const double y1 =
                    canvas.box.y_min + (canvas.box.y_max - canvas.box.y_min) * (iy + 1) / kGrid;
                const double f00 = field[static_cast<std::size_t>(iy * (kGrid + 1) + ix)];
                const double f10 = field[static_cast<std::size_t>(iy * (kGrid + 1) + ix + 1)];
                const double f01 = field[static_cast<std::size_t>((iy + 1) * (kGrid + 1) + ix)];
                const double f11 =
                    field[static_cast<std::size_t>((iy + 1) * (kGrid + 1) + ix + 1)];
                const double level = levels[li];
                const int code = (f00 > level ? 1 : 0) | (f10 > level ? 2 : 0) |
                                 (f11 > level ? 4 : 0) | (f01 > level ? 8 : 0);
                if (code == 0 || code == 15) continue;

                auto lerp = [level](double a, double b, double fa, double fb) {
                    return a + (level - fa) / (fb - fa) * (b - a);
                };
                // edge crossing points: bottom, right, top, left
                const double bx = lerp(x0, x1, f00, f10), by = y0;
                const double rx = x1, ry = lerp(y0, y1, f10, f11);
                const double tx = lerp(x0, x1, f01, f11), ty = y1;
                const double lx = x0, ly = lerp(y0, y1, f00, f01);

                static const int segments[16][4] = {
                    {-1}, {3, 0, -1}, {0, 1, -1}, {3, 1, -1}, {1, 2, -1}, {3, 0, 1, 2},
                    {0, 2, -1}, {3, 2, -1}, {2, 3, -1}, {2, 0, -1}, {0, 1, 2, 3},
                    {2, 1, -1}, {1, 3, -1}, {1, 0, -1}, {0, 3, -1}, {-1}};
                const double ex[4] = {bx, rx, tx, lx};
                const double ey[4] = {by, ry, ty, ly};
                const int* seg = segments[code];
                for (int s = 0; s + 1 < 4 && seg[s] >= 0; s += 2) {
                    out << "<line x1=\"" << fmt(canvas.px(ex[seg[s]])) << "\" y1=\""
                        << fmt(canvas.py(ey[seg[s]])) << "\" x2=\""
                        << fmt(canvas.px(ex[seg[s + 1]])) << "\" y2=\""
                        << fmt(canvas.py(ey[seg[s + 1]])) << "\"/>\n";
                }
            }
        }
        out << "</g>\n";
    }
}

}  // namespace svg_detail

/// Scatter of the world density (contours), the inversion trajectory, and
/// the input/output points. Two-dimensional worlds only.
inline std::string render_scatter_svg(const GaussianMixture& world,
                                      const InversionTrajectory* trajectory, const Vec* input,
                                      const Vec* output) {
    if (world.dimension() != 2)
        throw contract_error("render_scatter_svg: world must be two-dimensional");

    svg_detail::Canvas canvas;
    bool first = true;
    auto include = [&](double x, double y) {
        if (first) {
            canvas.box = {x, x, y, y};
            first = false;
        } else {
            canvas.box.include(x, y);
        }
    };
    for (const auto& c : world.components()) {
        include(c.mean[0] - 4.0 * std::sqrt(c.variances[0]),
                c.mean[1] - 4.0 * std::sqrt(c.variances[1]));
        include(c.mean[0] + 4.0 * std::sqrt(c.variances[0]),
                c.mean[1] + 4.0 * std::sqrt(c.variances[1]));
    }
    if (trajectory)
        for (const auto& p : trajectory->latents) include(p[0], p[1]);
    if (input) include((*input)[0], (*input)[1]);
    if (output) include((*output)[0], (*output)[1]);
    const double pad_x = 0.06 * (canvas.box.x_max - canvas.box.x_min);
    const double pad_y = 0.06 * (canvas.box.y_max - canvas.box.y_min);
    canvas.box.x_min -= pad_x;
    canvas.box.x_max += pad_x;
    canvas.box.y_min -= pad_y;
    canvas.box.y_max += pad_y;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << canvas.width
        << "\" height=\"" << canvas.height << "\" viewBox=\"0 0 " << canvas.width << " "
        << canvas.height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    svg_detail::append_contours(out, world, canvas);

    // component means with labels
    out << "<g fill=\"#444\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (const auto& c : world.components()) {
        const double cx = canvas.px(c.mean[0]), cy = canvas.py(c.mean[1]);
        out << "<circle cx=\"" << svg_detail::fmt(cx) << "\" cy=\"" << svg_detail::fmt(cy)
            << "\" r=\"2\"/>\n";
        out << "<text x=\"" << svg_detail::fmt(cx + 4) << "\" y=\"" << svg_detail::fmt(cy - 4)
            << "\">" << c.label.name << "</text>\n";
    }
    out << "</g>\n";

    if (trajectory && !trajectory->latents.empty()) {
        out << "<polyline fill=\"none\" stroke=\"#999\" stroke-width=\"1\" points=\"";
        for (const auto& p : trajectory->latents)
            out << svg_detail::fmt(canvas.px(p[0])) << "," << svg_detail::fmt(canvas.py(p[1]))
                << " ";
        out << "\"/>\n";
    }
    if (input) {
        out << "<circle cx=\"" << svg_detail::fmt(canvas.px((*input)[0])) << "\" cy=\""
            << svg_detail::fmt(canvas.py((*input)[1]))
            << "\" r=\"5\" fill=\"#2a7e43\" fill-opacity=\"0.9\"/>\n";
    }
    if (output) {
        out << "<circle cx=\"" << svg_detail::fmt(canvas.px((*output)[0])) << "\" cy=\""
            << svg_detail::fmt(canvas.py((*output)[1]))
            << "\" r=\"5\" fill=\"#c0392b\" fill-opacity=\"0.9\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace diffscale
