// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "msgar/image.hpp"
#include "msgar/metrics.hpp"

namespace msgar {

namespace detail {

inline void fill_rect(ImageU8& img, int y0, int x0, int y1, int x1, std::uint8_t r,
                      std::uint8_t g, std::uint8_t b) {
    y0 = std::clamp(y0, 0, img.h - 1);
    y1 = std::clamp(y1, 0, img.h - 1);
    x0 = std::clamp(x0, 0, img.w - 1);
    x1 = std::clamp(x1, 0, img.w - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
}

inline void draw_line(ImageU8& img, int y0, int x0, int y1, int x1, std::uint8_t r,
                      std::uint8_t g, std::uint8_t b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (y0 >= 0 && y0 < img.h && x0 >= 0 && x0 < img.w) {
            img.at(y0, x0, 0) = r;
            img.at(y0, x0, 1) = g;
            img.at(y0, x0, 2) = b;
        }
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace detail

/// Renders a loss curve (one value per epoch) as a simple line plot.
inline ImageU8 render_loss_curve(const std::vector<double>& losses, int height = 240,
                                 int width = 360) {
    ImageU8 img(height, width, 3);
    detail::fill_rect(img, 0, 0, height - 1, width - 1, 250, 250, 250);
    const int margin = 24;
    detail::draw_line(img, height - margin, margin, height - margin, width - 8, 60, 60, 60);
    detail::draw_line(img, height - margin, margin, 8, margin, 60, 60, 60);
    if (losses.empty()) return img;
    double lo = *std::min_element(losses.begin(), losses.end());
    double hi = *std::max_element(losses.begin(), losses.end());
    if (hi - lo < 1e-12) hi = lo + 1.0;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        double fx = losses.size() == 1 ? 0.0 : static_cast<double>(i) / (losses.size() - 1);
        int x = margin + static_cast<int>(fx * (width - 8 - margin));
        double fy = (losses[i] - lo) / (hi - lo);
        int y = height - margin - static_cast<int>(fy * (height - margin - 8));
        if (i > 0) detail::draw_line(img, prev_y, prev_x, y, x, 200, 60, 40);
        prev_x = x;
        prev_y = y;
    }
    return img;
}

/// Renders a confusion matrix as a row-normalized heatmap.
inline ImageU8 render_confusion_heatmap(const ConfusionMatrix& cm, int cell = 24) {
    int n = cm.classes;
    ImageU8 img(n * cell, n * cell, 3);
    for (int g = 0; g < n; ++g) {
        long long row = cm.row_sum(g);
        for (int p = 0; p < n; ++p) {
            double frac = row > 0 ? static_cast<double>(cm.at(g, p)) / row : 0.0;
            auto shade = static_cast<std::uint8_t>(255 - std::lround(215.0 * frac));
            detail::fill_rect(img, g * cell, p * cell, (g + 1) * cell - 1, (p + 1) * cell - 1,
                              shade, shade, 255);
        }
    }
    for (int k = 0; k <= n; ++k) {
        int c = std::min(k * cell, n * cell - 1);
        detail::draw_line(img, c, 0, c, n * cell - 1, 120, 120, 120);
        detail::draw_line(img, 0, c, n * cell - 1, c, 120, 120, 120);
    }
    return img;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm,
                                const std::vector<std::string>& class_names) {
    if (static_cast<int>(class_names.size()) != cm.classes)
        throw std::invalid_argument("confusion csv: class name count mismatch");
    std::ostringstream out;
    out << "gt\\pred";
    for (const auto& n : class_names) out << "," << csv_escape(n);
    out << "\n";
    for (int g = 0; g < cm.classes; ++g) {
        out << csv_escape(class_names[g]);
        for (int p = 0; p < cm.classes; ++p) out << "," << cm.at(g, p);
        out << "\n";
    }
    write_file_atomic(path, out.str());
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string, double>>& metrics) {
    std::ostringstream out;
    out << "metric,value\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& [name, value] : metrics) out << csv_escape(name) << "," << value << "\n";
    write_file_atomic(path, out.str());
}

}  // namespace msgar
