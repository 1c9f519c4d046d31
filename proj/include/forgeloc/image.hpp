#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgeloc/tensor.hpp"

namespace forgeloc {

// Raster of doubles in CHW layout. Pixel images live in [0,1]; diffusion
// states reuse the same container in [-1,1]; latent rasters carry arbitrary
// channel counts.
struct Image {
    int c = 0, h = 0, w = 0;
    std::vector<double> data;

    Image() = default;
    Image(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

    double& at(int ch, int y, int x) { return data[(static_cast<size_t>(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return data[(static_cast<size_t>(ch) * h + y) * w + x]; }
    int64_t size() const { return static_cast<int64_t>(data.size()); }
};

struct BinaryMask {
    int h = 0, w = 0;
    std::vector<uint8_t> values;  // {0,1}
    std::optional<std::string> attribute_tag;

    BinaryMask() = default;
    BinaryMask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), values(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * w + x]; }
    long area() const {
        long n = 0;
        for (uint8_t v : values) n += v;
        return n;
    }
    bool empty_mask() const { return area() == 0; }
};

Tensor image_to_tensor(const Image& img, bool requires_grad = false);
Image tensor_to_image(const Tensor& t);

// [0,1] pixel space <-> [-1,1] diffusion value space.
Image to_diffusion_space(const Image& img);
Image from_diffusion_space(const Image& img);  // clips to [-1,1] first

// Lossless 8-bit raster files: P6 (RGB) / P5 (gray) for images, P5 with
// values restricted to {0,255} for masks.
void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask(const std::filesystem::path& path);

// File-access instrumentation; training-routing tests assert on these.
struct IoStats {
    std::atomic<long> images_read{0};
    std::atomic<long> masks_read{0};
};
IoStats& io_stats();
void reset_io_stats();

}  // namespace forgeloc
