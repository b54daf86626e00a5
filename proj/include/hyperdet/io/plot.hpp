#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyperdet/core/image.hpp"
#include "hyperdet/io/image_io.hpp"

namespace hyperdet::io {

// minimal raster plotting: enough for sweep curves and spectrum maps

namespace detail_plot {

// 5x7 bitmap glyphs, 5 LSBs per row; charset covers tick labels and titles
inline const std::uint8_t* glyph(char c) {
    static const std::array<std::pair<char, std::array<std::uint8_t, 7>>, 46> table = {{
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    }};
    const char up = char(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& [ch, rows] : table)
        if (ch == up) return rows.data();
    return table.back().second.data();  // unknown -> blank
}

struct Color {
    double r, g, b;
};

inline void put_pixel(Image& img, long x, long y, Color c) {
    if (x < 0 || y < 0 || x >= long(img.width) || y >= long(img.height)) return;
    img.at(std::size_t(y), std::size_t(x), 0) = c.r;
    img.at(std::size_t(y), std::size_t(x), 1) = c.g;
    img.at(std::size_t(y), std::size_t(x), 2) = c.b;
}

inline void draw_text(Image& img, long x, long y, const std::string& text, Color c) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        const std::uint8_t* rows = glyph(text[i]);
        for (int ry = 0; ry < 7; ++ry)
            for (int rx = 0; rx < 5; ++rx)
                if (rows[ry] & (1 << (4 - rx)))
                    put_pixel(img, x + long(i) * 6 + rx, y + ry, c);
    }
}

inline void draw_line(Image& img, double x0, double y0, double x1, double y1, Color c) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps = std::max(2, int(std::ceil(std::max(std::fabs(dx), std::fabs(dy)))) + 1);
    for (int i = 0; i < steps; ++i) {
        const double t = double(i) / double(steps - 1);
        put_pixel(img, long(std::lround(x0 + t * dx)), long(std::lround(y0 + t * dy)), c);
        // thicken slightly for visibility
        put_pixel(img, long(std::lround(x0 + t * dx)), long(std::lround(y0 + t * dy)) + 1, c);
    }
}

inline std::string format_tick(double v) {
    char buf[32];
    if (std::fabs(v - std::round(v)) < 1e-9)
        std::snprintf(buf, sizeof buf, "%.0f", v);
    else
        std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace detail_plot

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Simple line chart: axes, ticks, legend, one polyline per series.
inline void render_line_plot(const std::filesystem::path& path,
                             const std::vector<PlotSeries>& series, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             std::size_t width = 640, std::size_t height = 480) {
    using namespace detail_plot;
    Image img(height, width, 3);
    for (auto& v : img.px) v = 1.0;

    const long ml = 70, mr = 20, mt = 40, mb = 50;
    const long pw = long(width) - ml - mr, ph = long(height) - mt - mb;

    double xmin = HUGE_VAL, xmax = -HUGE_VAL, ymin = HUGE_VAL, ymax = -HUGE_VAL;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin) || xmin == xmax) {
        xmin -= 0.5;
        xmax = xmin + 1.0;
    }
    if (!std::isfinite(ymin) || ymin == ymax) {
        ymin -= 0.5;
        ymax = ymin + 1.0;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto to_px = [&](double x, double y) {
        return std::pair<double, double>{
            double(ml) + (x - xmin) / (xmax - xmin) * double(pw),
            double(mt) + (1.0 - (y - ymin) / (ymax - ymin)) * double(ph)};
    };

    const Color black{0, 0, 0};
    const Color grey{0.85, 0.85, 0.85};
    static const Color palette[] = {{0.12, 0.29, 0.69}, {0.80, 0.10, 0.10},
                                    {0.08, 0.55, 0.25}, {0.55, 0.15, 0.60},
                                    {0.90, 0.55, 0.05}, {0.05, 0.55, 0.60}};

    for (int t = 0; t <= 5; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 5.0;
        const double fy = ymin + (ymax - ymin) * t / 5.0;
        auto [gx, _] = to_px(fx, ymin);
        auto [__, gy] = to_px(xmin, fy);
        draw_line(img, gx, double(mt), gx, double(mt + ph), grey);
        draw_line(img, double(ml), gy, double(ml + pw), gy, grey);
        draw_text(img, long(gx) - 10, mt + ph + 8, format_tick(fx), black);
        draw_text(img, ml - 60, long(gy) - 3, format_tick(fy), black);
    }
    draw_line(img, double(ml), double(mt), double(ml), double(mt + ph), black);
    draw_line(img, double(ml), double(mt + ph), double(ml + pw), double(mt + ph), black);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const Color c = palette[si % 6];
        const auto& s = series[si];
        for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
            auto [x0, y0] = to_px(s.x[i], s.y[i]);
            auto [x1, y1] = to_px(s.x[i + 1], s.y[i + 1]);
            draw_line(img, x0, y0, x1, y1, c);
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            auto [cx, cy] = to_px(s.x[i], s.y[i]);
            for (long dy = -2; dy <= 2; ++dy)
                for (long dx = -2; dx <= 2; ++dx)
                    if (dx * dx + dy * dy <= 4)
                        put_pixel(img, long(cx) + dx, long(cy) + dy, c);
        }
        const long ly = mt + 4 + long(si) * 12;
        draw_line(img, double(ml + pw - 90), double(ly + 3), double(ml + pw - 70),
                  double(ly + 3), c);
        draw_text(img, ml + pw - 64, ly, s.label, black);
    }

    draw_text(img, ml, 14, title, black);
    draw_text(img, ml + pw / 2 - long(x_label.size()) * 3, mt + ph + 24, x_label, black);
    draw_text(img, 8, mt - 20, y_label, black);
    save_png(path, img);
}

// grayscale map (values in [0,1]) without decorations
inline void save_gray_map(const std::filesystem::path& path, const std::vector<double>& values,
                          std::size_t size) {
    Image img(size, size, 1);
    img.px = values;
    save_png(path, img);
}

}  // namespace hyperdet::io
