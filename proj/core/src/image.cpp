#include "mimlab/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mimlab/common.hpp"

namespace mimlab {

namespace {

uint8_t to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

float luma(const Image& img, int y, int x) {
  return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

int skip_ppm_space(std::istream& in) {
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = in.get();
    c = in.get();
  }
  return c;
}

int64_t read_ppm_int(std::istream& in, const std::string& path) {
  int c = skip_ppm_space(in);
  if (!std::isdigit(c)) raise(ErrKind::Data, "malformed ppm header: " + path);
  int64_t v = 0;
  while (std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrKind::Data, "cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') raise(ErrKind::Data, "not a P6 ppm: " + path);
  int64_t w = read_ppm_int(in, path);
  int64_t h = read_ppm_int(in, path);
  int64_t maxval = read_ppm_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) raise(ErrKind::Data, "unsupported ppm (need maxval <= 255): " + path);
  // read_ppm_int consumed the single whitespace after maxval, so the stream
  // already sits at the first pixel byte.
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) raise(ErrKind::Data, "truncated ppm: " + path);
  Image img(static_cast<int>(h), static_cast<int>(w));
  float inv = 1.0f / static_cast<float>(maxval);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raw[(static_cast<size_t>(y) * w + x) * 3 + c] * inv;
  return img;
}

void save_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrKind::Io, "cannot write image: " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> raw(static_cast<size_t>(img.w) * img.h * 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) raw[(static_cast<size_t>(y) * img.w + x) * 3 + c] = to_byte(img.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) raise(ErrKind::Io, "short write: " + path);
}

Image load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) raise(ErrKind::Data, "cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    raise(ErrKind::Data, "png reader init failed: " + path);
  }
  std::vector<uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    raise(ErrKind::Data, "undecodable png: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.assign(static_cast<size_t>(w) * h * 3, 0);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  Image img(static_cast<int>(h), static_cast<int>(w));
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raw[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

void save_png(const Image& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) raise(ErrKind::Io, "cannot write image: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    raise(ErrKind::Io, "png writer init failed: " + path);
  }
  std::vector<uint8_t> raw(static_cast<size_t>(img.w) * img.h * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    raise(ErrKind::Io, "png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) raw[(static_cast<size_t>(y) * img.w + x) * 3 + c] = to_byte(img.at(c, y, x));
    rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * img.w * 3;
  }
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrKind::Data, "cannot open image: " + path);
  char head[2] = {0, 0};
  in.read(head, 2);
  in.close();
  if (head[0] == 'P' && head[1] == '6') return load_ppm(path);
  if (static_cast<uint8_t>(head[0]) == 0x89 && head[1] == 'P') return load_png(path);
  raise(ErrKind::Data, "unrecognized image format (need ppm or png): " + path);
}

Image crop_resize(const Image& src, double x0, double y0, double cw, double ch, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0 || cw <= 0 || ch <= 0) raise(ErrKind::Usage, "crop_resize: non-positive extent");
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    double sy = y0 + (y + 0.5) * ch / out_h - 0.5;
    for (int x = 0; x < out_w; ++x) {
      double sx = x0 + (x + 0.5) * cw / out_w - 0.5;
      int iy = static_cast<int>(std::floor(sy));
      int ix = static_cast<int>(std::floor(sx));
      double fy = sy - iy, fx = sx - ix;
      int y1 = std::clamp(iy, 0, src.h - 1), y2 = std::clamp(iy + 1, 0, src.h - 1);
      int x1 = std::clamp(ix, 0, src.w - 1), x2 = std::clamp(ix + 1, 0, src.w - 1);
      for (int c = 0; c < 3; ++c) {
        double top = src.at(c, y1, x1) * (1 - fx) + src.at(c, y1, x2) * fx;
        double bot = src.at(c, y2, x1) * (1 - fx) + src.at(c, y2, x2) * fx;
        out.at(c, y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.h, img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) out.at(c, y, x) = img.at(c, y, img.w - 1 - x);
  return out;
}

Image greyscale(const Image& img) {
  Image out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = g;
    }
  return out;
}

Image solarize(const Image& img, float threshold) {
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.pix.size(); ++i) out.pix[i] = img.pix[i] >= threshold ? 1.0f - img.pix[i] : img.pix[i];
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double s = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= s;
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  Image tmp(img.h, img.w), out(img.h, img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<size_t>(i + radius)] * img.at(c, y, clampi(x + i, img.w));
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<size_t>(i + radius)] * tmp.at(c, clampi(y + i, img.h), x);
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

Image clamp01(Image img) {
  for (auto& v : img.pix) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

Image color_jitter(const Image& img, double brightness, double contrast, double saturation) {
  Image out = img;
  for (auto& v : out.pix) v = static_cast<float>(v * brightness);
  out = clamp01(std::move(out));
  double mean_l = 0;
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) mean_l += luma(out, y, x);
  mean_l /= static_cast<double>(out.h) * out.w;
  for (auto& v : out.pix) v = static_cast<float>(contrast * v + (1.0 - contrast) * mean_l);
  out = clamp01(std::move(out));
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      float g = luma(out, y, x);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(saturation * out.at(c, y, x) + (1.0 - saturation) * g);
    }
  return clamp01(std::move(out));
}

Image random_resized_crop(const Image& img, int out_size, double scale_lo, double scale_hi, Rng& rng) {
  double area = static_cast<double>(img.h) * img.w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * rng.uniform(scale_lo, scale_hi);
    double aspect = rng.log_uniform(3.0 / 4.0, 4.0 / 3.0);
    double cw = std::sqrt(target * aspect);
    double ch = std::sqrt(target / aspect);
    if (cw <= img.w && ch <= img.h) {
      double x0 = rng.uniform(0.0, img.w - cw);
      double y0 = rng.uniform(0.0, img.h - ch);
      return crop_resize(img, x0, y0, cw, ch, out_size, out_size);
    }
  }
  double side = std::min(img.h, img.w);
  return crop_resize(img, (img.w - side) / 2.0, (img.h - side) / 2.0, side, side, out_size, out_size);
}

}  // namespace mimlab
