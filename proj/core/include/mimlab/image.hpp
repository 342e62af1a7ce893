#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mimlab/rng.hpp"

namespace mimlab {

// RGB image, planar layout (channel, then row, then column), values in [0,1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> pix;  // size 3*h*w, index c*h*w + y*w + x

  Image() = default;
  Image(int height, int width) : h(height), w(width), pix(static_cast<size_t>(3) * height * width, 0.0f) {}

  float at(int c, int y, int x) const { return pix[(static_cast<size_t>(c) * h + y) * w + x]; }
  float& at(int c, int y, int x) { return pix[(static_cast<size_t>(c) * h + y) * w + x]; }
};

// Binary PPM (P6, maxval <= 255) and 8-bit PNG. Loaders raise ErrKind::Data
// with the offending path; values are mapped to [0,1].
Image load_image(const std::string& path);
Image load_ppm(const std::string& path);
Image load_png(const std::string& path);
void save_ppm(const Image& img, const std::string& path);
void save_png(const Image& img, const std::string& path);

// Bilinear resample of a source rectangle (x0, y0, cw, ch) to out_h x out_w.
Image crop_resize(const Image& src, double x0, double y0, double cw, double ch, int out_h, int out_w);

Image hflip(const Image& img);
Image greyscale(const Image& img);
// v >= threshold ? 1 - v : v, per channel.
Image solarize(const Image& img, float threshold);
Image gaussian_blur(const Image& img, double sigma);
// Multiplicative brightness, then contrast and saturation blends toward the
// mean luma / per-pixel luma. Output clamped to [0,1].
Image color_jitter(const Image& img, double brightness, double contrast, double saturation);
Image clamp01(Image img);

// Area fraction uniform in [scale_lo, scale_hi], aspect log-uniform in
// [3/4, 4/3], ten placement attempts then center fallback.
Image random_resized_crop(const Image& img, int out_size, double scale_lo, double scale_hi, Rng& rng);

}  // namespace mimlab
