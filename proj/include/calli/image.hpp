#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace calli {

// Grayscale raster, values in [0, 1], row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> px;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), px(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return width <= 0 || height <= 0; }
    std::size_t size() const { return px.size(); }
};

// 0 = background, 1 = ink.
struct BinaryImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> px;

    BinaryImage() = default;
    BinaryImage(int w, int h)
        : width(w), height(h), px(static_cast<std::size_t>(w) * h, 0) {}

    std::uint8_t& at(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return width <= 0 || height <= 0; }
};

// 8-bit grayscale PNG I/O. Reading converts RGB(A) to luma and 16-bit depth
// down to 8; writing is byte-deterministic (fixed zlib settings).
Image read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Image& img);

// Encode to PNG bytes without touching the filesystem.
std::vector<std::uint8_t> encode_png_gray(const Image& img);

// Bilinear resample to the given size. Identity when sizes already match.
Image resize_bilinear(const Image& src, int out_w, int out_h);

// Map between the [0,1] raster range and the [-1,1] model range.
std::vector<double> to_signed_range(const Image& img);
Image from_signed_range(const std::vector<double>& px, int w, int h);

}  // namespace calli
