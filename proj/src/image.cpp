#include "forgeloc/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace forgeloc {

Tensor image_to_tensor(const Image& img, bool requires_grad) {
    return Tensor::from({img.c, img.h, img.w}, img.data, requires_grad);
}

Image tensor_to_image(const Tensor& t) {
    if (t.shape().size() != 3) throw ShapeError("tensor_to_image: expected CxHxW, got " + shape_str(t.shape()));
    Image img(t.shape()[0], t.shape()[1], t.shape()[2]);
    img.data.assign(t.values().begin(), t.values().end());
    return img;
}

Image to_diffusion_space(const Image& img) {
    Image out = img;
    for (double& v : out.data) v = 2.0 * v - 1.0;
    return out;
}

Image from_diffusion_space(const Image& img) {
    Image out = img;
    for (double& v : out.data) v = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5;
    return out;
}

namespace {

IoStats g_io_stats;

uint8_t quantize(double v) {
    return static_cast<uint8_t>(std::llround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void skip_ws_and_comments(std::istream& in) {
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in.get();
        }
        c = in.peek();
    }
}

struct PnmHeader {
    std::string magic;
    int w = 0, h = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::filesystem::path& path) {
    PnmHeader hdr;
    in >> hdr.magic;
    skip_ws_and_comments(in);
    in >> hdr.w;
    skip_ws_and_comments(in);
    in >> hdr.h;
    skip_ws_and_comments(in);
    in >> hdr.maxval;
    in.get();  // single whitespace before raster
    if (!in || (hdr.magic != "P5" && hdr.magic != "P6") || hdr.w <= 0 || hdr.h <= 0 || hdr.maxval != 255)
        throw DataError("unsupported or corrupt raster file: " + path.string());
    return hdr;
}

}  // namespace

IoStats& io_stats() { return g_io_stats; }

void reset_io_stats() {
    g_io_stats.images_read = 0;
    g_io_stats.masks_read = 0;
}

void write_image(const std::filesystem::path& path, const Image& img) {
    if (img.c != 1 && img.c != 3) throw ShapeError("write_image: channel count must be 1 or 3");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.w) * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) row[static_cast<size_t>(x) * img.c + ch] = quantize(img.at(ch, y, x));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("write failed: " + path.string());
}

Image read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("image not found: " + path.string());
    PnmHeader hdr = read_pnm_header(in, path);
    const int c = hdr.magic == "P6" ? 3 : 1;
    Image img(c, hdr.h, hdr.w);
    std::vector<uint8_t> row(static_cast<size_t>(hdr.w) * c);
    for (int y = 0; y < hdr.h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw DataError("truncated raster file: " + path.string());
        for (int x = 0; x < hdr.w; ++x)
            for (int ch = 0; ch < c; ++ch) img.at(ch, y, x) = row[static_cast<size_t>(x) * c + ch] / 255.0;
    }
    ++g_io_stats.images_read;
    return img;
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(mask.w));
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) row[x] = mask.at(y, x) ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("write failed: " + path.string());
}

BinaryMask read_mask(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("mask not found: " + path.string());
    PnmHeader hdr = read_pnm_header(in, path);
    if (hdr.magic != "P5") throw DataError("mask must be a grayscale raster: " + path.string());
    BinaryMask mask(hdr.h, hdr.w);
    std::vector<uint8_t> row(static_cast<size_t>(hdr.w));
    for (int y = 0; y < hdr.h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw DataError("truncated mask file: " + path.string());
        for (int x = 0; x < hdr.w; ++x) {
            if (row[x] != 0 && row[x] != 255) throw DataError("mask values must be 0 or 255: " + path.string());
            mask.at(y, x) = row[x] ? 1 : 0;
        }
    }
    ++g_io_stats.masks_read;
    return mask;
}

}  // namespace forgeloc
