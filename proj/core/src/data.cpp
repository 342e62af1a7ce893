#include "mimlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mimlab/common.hpp"

namespace fs = std::filesystem;

namespace mimlab {

LabeledDataset load_image_folder(const std::string& manifest_path, int64_t num_classes, const std::string& split) {
  std::ifstream in(manifest_path);
  if (!in) raise(ErrKind::Data, "cannot open manifest: " + manifest_path);
  fs::path root = fs::path(manifest_path).parent_path();
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = [&] { return manifest_path + ":" + std::to_string(lineno); };
    size_t tab = line.find('\t');
    if (tab == std::string::npos) raise(ErrKind::Data, "manifest line has no tab separator at " + where());
    std::string rel = line.substr(0, tab);
    int64_t label = 0;
    try {
      size_t used = 0;
      label = std::stoll(line.substr(tab + 1), &used);
    } catch (const std::exception&) {
      raise(ErrKind::Data, "bad label at " + where());
    }
    if (label < 0 || label >= num_classes)
      raise(ErrKind::Data, "label " + std::to_string(label) + " out of range [0," + std::to_string(num_classes) + ") at " + where());
    fs::path img_path = root / rel;
    if (!fs::exists(img_path)) raise(ErrKind::Data, "missing image " + img_path.string() + " at " + where());
    ds.images.push_back(load_image(img_path.string()));
    ds.labels.push_back(label);
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream manifest(fs::path(dir) / "manifest.tsv");
  if (!manifest) raise(ErrKind::Io, "cannot write manifest under " + dir);
  for (size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05zu.ppm", i);
    save_ppm(ds.images[i], (fs::path(dir) / name).string());
    manifest << name << "\t" << ds.labels[i] << "\n";
  }
}

namespace {

void hsv_to_rgb(double h, double s, double v, float* rgb) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  double c = v * s;
  double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  rgb[0] = static_cast<float>(r + m);
  rgb[1] = static_cast<float>(g + m);
  rgb[2] = static_cast<float>(b + m);
}

constexpr double kHueFamily[4] = {0.0, 120.0, 240.0, 60.0};

struct ShapeSpec {
  int shape;
  double cx, cy, r, rot;
  float rgb[3];
};

bool inside_shape(const ShapeSpec& s, double px, double py) {
  double dx = px - s.cx, dy = py - s.cy;
  double co = std::cos(s.rot), si = std::sin(s.rot);
  double x = dx * co + dy * si;
  double y = -dx * si + dy * co;
  switch (s.shape) {
    case 0:  // disc
      return x * x + y * y <= s.r * s.r;
    case 1:  // square
      return std::max(std::fabs(x), std::fabs(y)) <= s.r * 0.82;
    case 2: {  // equilateral triangle, circumradius r
      double vx[3], vy[3];
      for (int i = 0; i < 3; ++i) {
        double a = (90.0 + 120.0 * i) * std::numbers::pi / 180.0;
        vx[i] = s.r * std::cos(a);
        vy[i] = s.r * std::sin(a);
      }
      bool pos = false, neg = false;
      for (int i = 0; i < 3; ++i) {
        int j = (i + 1) % 3;
        double cr = (vx[j] - vx[i]) * (y - vy[i]) - (vy[j] - vy[i]) * (x - vx[i]);
        pos |= cr > 0;
        neg |= cr < 0;
      }
      return !(pos && neg);
    }
    default: {  // cross
      double arm = 0.34 * s.r;
      return (std::fabs(x) <= s.r && std::fabs(y) <= arm) || (std::fabs(y) <= s.r && std::fabs(x) <= arm);
    }
  }
}

// Renders one image at 2x resolution, then box-downsamples. The background is
// a bilinear patchwork of muted random colors so a pixel-space tokenizer sees
// texture, not flat fills.
Image render_synth(Rng& rng, int64_t label, int size) {
  int ss = size * 2;
  std::vector<float> hi(static_cast<size_t>(3) * ss * ss, 0.0f);

  constexpr int gridn = 4;
  float cells[gridn + 1][gridn + 1][3];
  for (int gy = 0; gy <= gridn; ++gy)
    for (int gx = 0; gx <= gridn; ++gx) {
      double h = rng.uniform(0.0, 360.0);
      double s = rng.uniform(0.10, 0.40);
      double v = rng.uniform(0.25, 0.75);
      hsv_to_rgb(h, s, v, cells[gy][gx]);
    }

  ShapeSpec spec;
  spec.shape = class_shape(label);
  spec.cx = rng.uniform(0.30, 0.70) * size;
  spec.cy = rng.uniform(0.30, 0.70) * size;
  spec.r = rng.uniform(0.20, 0.36) * size;
  spec.rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double hue = kHueFamily[class_hue(label)] + rng.uniform(-40.0, 40.0);
  double sat = rng.uniform(0.55, 1.0);
  double val = rng.uniform(0.60, 1.0);
  hsv_to_rgb(hue, sat, val, spec.rgb);

  for (int y = 0; y < ss; ++y)
    for (int x = 0; x < ss; ++x) {
      double px = (x + 0.5) / 2.0;  // original-resolution coordinates
      double py = (y + 0.5) / 2.0;
      float rgb[3];
      if (inside_shape(spec, px, py)) {
        for (int c = 0; c < 3; ++c) rgb[c] = spec.rgb[c];
      } else {
        double u = px / size * gridn, v = py / size * gridn;
        int gx = std::min(static_cast<int>(u), gridn - 1);
        int gy = std::min(static_cast<int>(v), gridn - 1);
        double fu = u - gx, fv = v - gy;
        for (int c = 0; c < 3; ++c) {
          double top = cells[gy][gx][c] * (1 - fu) + cells[gy][gx + 1][c] * fu;
          double bot = cells[gy + 1][gx][c] * (1 - fu) + cells[gy + 1][gx + 1][c] * fu;
          rgb[c] = static_cast<float>(top * (1 - fv) + bot * fv);
        }
      }
      for (int c = 0; c < 3; ++c) hi[(static_cast<size_t>(c) * ss + y) * ss + x] = rgb[c];
    }

  Image img(size, size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float acc = 0.0f;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) acc += hi[(static_cast<size_t>(c) * ss + 2 * y + sy) * ss + 2 * x + sx];
        float noisy = acc / 4.0f + static_cast<float>(rng.normal() * 0.02);
        img.at(c, y, x) = std::clamp(noisy, 0.0f, 1.0f);
      }
  return img;
}

LabeledDataset synth_split(uint64_t seed, const char* split, int64_t n, int64_t num_classes, int size) {
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.images.reserve(static_cast<size_t>(n));
  ds.labels.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t label = i % num_classes;
    Rng rng(mix_seed_str(seed, split, static_cast<uint64_t>(i)));
    ds.images.push_back(render_synth(rng, label, size));
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace

int class_shape(int64_t label) { return static_cast<int>(label % 4); }
int class_hue(int64_t label) { return static_cast<int>((label % 4 + label / 4) % 4); }

std::pair<LabeledDataset, LabeledDataset> synth_generate(uint64_t seed, int64_t n_train, int64_t n_test,
                                                         int64_t num_classes, int size) {
  if (num_classes < 2 || num_classes > 16)
    raise(ErrKind::Config, "synth_generate: num_classes must be in [2,16], got " + std::to_string(num_classes));
  if (size <= 0 || size % 8 != 0) raise(ErrKind::Config, "synth_generate: size must be a positive multiple of 8");
  return {synth_split(seed, "synth-train", n_train, num_classes, size),
          synth_split(seed, "synth-test", n_test, num_classes, size)};
}

PatchSequence patchify(const Image& img, int patch_size) {
  if (patch_size <= 0 || img.h % patch_size != 0 || img.w % patch_size != 0)
    raise(ErrKind::Shape, "patchify: image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                              " not divisible by patch size " + std::to_string(patch_size));
  PatchSequence ps;
  ps.rows = img.h / patch_size;
  ps.cols = img.w / patch_size;
  ps.n = static_cast<int64_t>(ps.rows) * ps.cols;
  ps.d = static_cast<int64_t>(3) * patch_size * patch_size;
  ps.patches = Tensor::zeros({ps.n, ps.d}, DType::F32);
  auto out = ps.patches.f32_mut();
  for (int pr = 0; pr < ps.rows; ++pr)
    for (int pc = 0; pc < ps.cols; ++pc) {
      int64_t base = (static_cast<int64_t>(pr) * ps.cols + pc) * ps.d;
      int64_t k = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch_size; ++y)
          for (int x = 0; x < patch_size; ++x)
            out[base + k++] = img.at(c, pr * patch_size + y, pc * patch_size + x);
    }
  return ps;
}

Image unpatchify(const PatchSequence& ps, int patch_size) {
  if (ps.d != static_cast<int64_t>(3) * patch_size * patch_size)
    raise(ErrKind::Shape, "unpatchify: patch dim does not match patch size");
  if (ps.n != static_cast<int64_t>(ps.rows) * ps.cols) raise(ErrKind::Shape, "unpatchify: grid does not match patch count");
  Image img(ps.rows * patch_size, ps.cols * patch_size);
  auto in = ps.patches.f32();
  for (int pr = 0; pr < ps.rows; ++pr)
    for (int pc = 0; pc < ps.cols; ++pc) {
      int64_t base = (static_cast<int64_t>(pr) * ps.cols + pc) * ps.d;
      int64_t k = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch_size; ++y)
          for (int x = 0; x < patch_size; ++x)
            img.at(c, pr * patch_size + y, pc * patch_size + x) = in[base + k++];
    }
  return img;
}

AugmentPolicy augment_policy_from_name(const std::string& name) {
  if (name == "none") return AugmentPolicy::None;
  if (name == "basic") return AugmentPolicy::Basic;
  if (name == "small_data") return AugmentPolicy::SmallData;
  raise(ErrKind::Config, "unknown augmentation policy: " + name);
}

const char* augment_policy_name(AugmentPolicy p) {
  switch (p) {
    case AugmentPolicy::None: return "none";
    case AugmentPolicy::Basic: return "basic";
    default: return "small_data";
  }
}

Image augment(const Image& img, AugmentPolicy policy, int out_size, Rng& rng) {
  if (policy == AugmentPolicy::None) {
    if (img.h == out_size && img.w == out_size) return img;
    double side = std::min(img.h, img.w);
    return crop_resize(img, (img.w - side) / 2.0, (img.h - side) / 2.0, side, side, out_size, out_size);
  }
  Image out = random_resized_crop(img, out_size, 0.2, 1.0, rng);
  if (rng.bernoulli(0.5)) out = hflip(out);
  if (policy == AugmentPolicy::SmallData) {
    if (rng.bernoulli(0.2)) out = greyscale(out);
    if (rng.bernoulli(0.2)) out = solarize(out, 0.5f);
    if (rng.bernoulli(0.5)) out = gaussian_blur(out, rng.uniform(0.1, 2.0));
    double fb = rng.uniform(0.6, 1.4);
    double fc = rng.uniform(0.6, 1.4);
    double fs = rng.uniform(0.6, 1.4);
    out = color_jitter(out, fb, fc, fs);
  }
  return clamp01(std::move(out));
}

}  // namespace mimlab
