#include "forgeloc/plot.hpp"

#include <algorithm>
#include <cmath>

#include "forgeloc/image.hpp"

namespace forgeloc::plot {

namespace {

struct Rgb {
    double r, g, b;
};

const Rgb kPalette[6] = {{0.12, 0.35, 0.80}, {0.90, 0.45, 0.10}, {0.15, 0.60, 0.25},
                         {0.70, 0.15, 0.55}, {0.55, 0.55, 0.10}, {0.10, 0.60, 0.60}};

void put(Image& img, int x, int y, Rgb c) {
    if (x < 0 || x >= img.w || y < 0 || y >= img.h) return;
    img.at(0, y, x) = c.r;
    img.at(1, y, x) = c.g;
    img.at(2, y, x) = c.b;
}

void thick_point(Image& img, int x, int y, Rgb c) {
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) put(img, x + dx, y + dy, c);
}

void line(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
    const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    for (int i = 0; i <= steps; ++i) {
        const double t = steps == 0 ? 0.0 : static_cast<double>(i) / steps;
        put(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
}

}  // namespace

void render_curves(const std::filesystem::path& out_path,
                   const std::vector<std::pair<std::string, std::vector<AreaBin>>>& series, int width, int height) {
    if (series.empty()) throw DataError("render_curves: no series to plot");
    Image img(3, height, width, 1.0);

    const int ml = 40, mr = 12, mt = 12, mb = 28;  // margins
    const int px0 = ml, px1 = width - mr, py0 = height - mb, py1 = mt;
    const Rgb axis{0.25, 0.25, 0.25};
    line(img, px0, py0, px1, py0, axis);
    line(img, px0, py0, px0, py1, axis);
    // Gridlines every 25%.
    for (int pct = 25; pct <= 100; pct += 25) {
        const int y = py0 - pct * (py0 - py1) / 100;
        line(img, px0, y, px1, y, {0.88, 0.88, 0.88});
        const int x = px0 + pct * (px1 - px0) / 100;
        line(img, x, py0, x, py0 + 3, axis);
    }

    for (size_t si = 0; si < series.size(); ++si) {
        const Rgb c = kPalette[si % 6];
        int prev_x = -1, prev_y = -1;
        for (const auto& bin : series[si].second) {
            if (!bin.mean_iou_percent) continue;
            const double area_mid = 0.5 * (bin.area_lo + bin.area_hi);
            const int x = px0 + static_cast<int>(std::lround(area_mid / 100.0 * (px1 - px0)));
            const int y = py0 - static_cast<int>(std::lround(*bin.mean_iou_percent / 100.0 * (py0 - py1)));
            if (prev_x >= 0) line(img, prev_x, prev_y, x, y, c);
            thick_point(img, x, y, c);
            prev_x = x;
            prev_y = y;
        }
        // Legend swatch.
        const int ly = mt + 12 * static_cast<int>(si);
        for (int dx = 0; dx < 10; ++dx) put(img, px1 - 14 + dx, ly, c);
    }

    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    write_image(out_path, img);
}

void render_matrix(const std::filesystem::path& out_path, const harness::MatrixResult& matrix, int cell) {
    if (matrix.train_names.empty() || matrix.test_names.empty()) throw DataError("render_matrix: empty matrix");
    const int rows = static_cast<int>(matrix.train_names.size());
    const int cols = static_cast<int>(matrix.test_names.size());
    const int border = 2;
    Image img(3, rows * (cell + border) + border, cols * (cell + border) + border, 0.95);

    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double v = std::clamp(matrix.iou_percent[r][c] / 100.0, 0.0, 1.0);
            // Cold-to-warm ramp.
            const Rgb color{0.15 + 0.80 * v, 0.20 + 0.35 * (1.0 - std::abs(2.0 * v - 1.0)), 0.85 - 0.75 * v};
            const int y0 = border + r * (cell + border);
            const int x0 = border + c * (cell + border);
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x) put(img, x0 + x, y0 + y, color);
        }

    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    write_image(out_path, img);
}

}  // namespace forgeloc::plot
