#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "forgeloc/harness.hpp"
#include "forgeloc/metrics.hpp"

namespace forgeloc::plot {

// IoU-vs-mask-area line chart, one series per input, rendered to a raster
// file. Pure function of its inputs.
void render_curves(const std::filesystem::path& out_path,
                   const std::vector<std::pair<std::string, std::vector<AreaBin>>>& series, int width = 480,
                   int height = 320);

// Train x test heat grid; cell intensity encodes IoU%.
void render_matrix(const std::filesystem::path& out_path, const harness::MatrixResult& matrix, int cell = 40);

}  // namespace forgeloc::plot
