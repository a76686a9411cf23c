#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "msdiff/tensor.hpp"

namespace msd {

// Images are tensors of shape [H, W, 3] with channel values in [0, 1].
using Rgb = std::array<double, 3>;

Tensor make_image(std::size_t h, std::size_t w, const Rgb& fill);
std::size_t image_height(const Tensor& img);
std::size_t image_width(const Tensor& img);
void require_image(const Tensor& img, const char* what);

inline double pixel(const Tensor& img, std::size_t y, std::size_t x, std::size_t c) {
    return img.data()[(y * img.shape()[1] + x) * 3 + c];
}

// Rounds every channel to the nearest k/255 so the 8-bit round trip is exact.
void quantize_8bit(Tensor& img);

// Pixel-aligned sub-rectangle [x0, x1) x [y0, y1).
Tensor crop(const Tensor& img, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1);
// Nearest-neighbour resampling to h x w.
Tensor resize_nearest(const Tensor& img, std::size_t h, std::size_t w);

// Binary PPM (P6, maxval 255) and PGM (P5, maxval 255).
void write_ppm(const std::string& path, const Tensor& img);
Tensor read_ppm(const std::string& path);
// `gray` is [H, W] with values in [0, 1].
void write_pgm(const std::string& path, const Tensor& gray);
Tensor read_pgm(const std::string& path);

}  // namespace msd
