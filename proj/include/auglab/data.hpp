#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "auglab/augdist.hpp"
#include "auglab/checkpoint.hpp"
#include "auglab/rng.hpp"
#include "auglab/tensor.hpp"
#include "auglab/transforms.hpp"

namespace auglab {

struct Dataset {
  Tensor images;  // [N, C, H, W]
  Tensor labels;  // [N], integer class ids stored as doubles
  std::map<std::string, Tensor> latents;

  long long size() const { return images.defined() ? images.shape()[0] : 0; }

  long long label(long long i) const { return static_cast<long long>(labels.value()[i]); }

  Tensor example(long long i) const {
    const int c = images.shape()[1], h = images.shape()[2], w = images.shape()[3];
    const long long n = static_cast<long long>(c) * h * w;
    std::vector<double> data(images.value().begin() + i * n,
                             images.value().begin() + (i + 1) * n);
    return Tensor({c, h, w}, std::move(data));
  }

  Tensor stack(const std::vector<long long>& indices) const {
    const int c = images.shape()[1], h = images.shape()[2], w = images.shape()[3];
    const long long n = static_cast<long long>(c) * h * w;
    std::vector<double> data(indices.size() * n);
    for (std::size_t b = 0; b < indices.size(); ++b)
      std::copy_n(images.value().begin() + indices[b] * n, n, data.begin() + b * n);
    return Tensor({static_cast<int>(indices.size()), c, h, w}, std::move(data));
  }

  std::vector<long long> label_vector(const std::vector<long long>& indices) const {
    std::vector<long long> out(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) out[b] = label(indices[b]);
    return out;
  }
};

// Dataset container files reuse the tensor format with reserved names.
inline void write_dataset(const std::string& path, const Dataset& d) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("images", d.images);
  tensors.emplace_back("labels", d.labels);
  for (const auto& [name, t] : d.latents) tensors.emplace_back("latent_" + name, t);
  write_tensor_file(path, tensors);
}

inline Dataset read_dataset(const std::string& path) {
  Dataset d;
  for (auto& [name, t] : read_tensor_file(path)) {
    if (name == "images")
      d.images = t;
    else if (name == "labels")
      d.labels = t;
    else if (name.rfind("latent_", 0) == 0)
      d.latents[name.substr(7)] = t;
    else
      throw IoError(path + ": unexpected tensor '" + name + "' in dataset file");
  }
  if (!d.images.defined() || !d.labels.defined())
    throw IoError(path + ": dataset file lacks images/labels");
  if (d.images.dim() != 4 || d.labels.size() != d.images.shape()[0])
    throw IoError(path + ": inconsistent dataset shapes");
  return d;
}

namespace render {

inline double wrap_pi(double a) { return std::atan2(std::sin(a), std::cos(a)); }

inline double smoothstep(double e0, double e1, double x) {
  double t = (x - e0) / (e1 - e0);
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return t * t * (3.0 - 2.0 * t);
}

using Poly = std::vector<std::pair<double, double>>;

inline bool point_in_poly(const Poly& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& [xi, yi] = poly[i];
    const auto& [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

}  // namespace render

// ---------------------------------------------------------------------------
// Glyph task: 32x32 grayscale, two rotationally asymmetric polygon glyphs,
// four classes = glyph x {up, down}. The base angle theta0 ~ U[-pi/4, pi/4]
// perturbs the canonical pose; the sign of cos(total angle) decides up/down,
// so the label-preserving relative rotation interval of an example is
// (-pi/2 - theta0, pi/2 - theta0).
// ---------------------------------------------------------------------------

constexpr int kGlyphSide = 32;
constexpr int kGlyphClasses = 4;

namespace render {

inline const Poly& glyph_poly(int glyph) {
  // L-like and T-like outlines in a [-0.6, 0.6] frame, y up.
  static const Poly kEll = {{-0.15, 0.55}, {0.15, 0.55},   {0.15, -0.25},
                            {0.45, -0.25}, {0.45, -0.55},  {-0.15, -0.55}};
  static const Poly kTee = {{-0.5, 0.55},  {0.5, 0.55},   {0.5, 0.25},  {0.15, 0.25},
                            {0.15, -0.55}, {-0.15, -0.55}, {-0.15, 0.25}, {-0.5, 0.25}};
  return glyph == 0 ? kEll : kTee;
}

}  // namespace render

// Renders one glyph at a total orientation (pure function of its inputs).
inline Tensor render_glyph(int glyph, double total_angle) {
  const render::Poly& poly = render::glyph_poly(glyph);
  const double scale = 20.0;  // px per unit; rotated glyph stays inside the frame
  const double center = (kGlyphSide - 1) / 2.0;
  const double ct = std::cos(-total_angle), st = std::sin(-total_angle);
  std::vector<double> img(static_cast<std::size_t>(kGlyphSide) * kGlyphSide, 0.0);
  const int ss = 3;
  for (int r = 0; r < kGlyphSide; ++r)
    for (int c = 0; c < kGlyphSide; ++c) {
      int hit = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = (c + (sx + 0.5) / ss - 0.5 - center) / scale;
          const double py = (center - (r + (sy + 0.5) / ss - 0.5)) / scale;
          // Rotate the sample point back into glyph coordinates.
          const double gx = ct * px - st * py;
          const double gy = st * px + ct * py;
          if (render::point_in_poly(poly, gx, gy)) ++hit;
        }
      img[r * kGlyphSide + c] = hit / static_cast<double>(ss * ss);
    }
  return Tensor({1, kGlyphSide, kGlyphSide}, std::move(img));
}

// The deterministic part of the glyph label law.
inline long long glyph_visual_label(int glyph, double total_angle) {
  const bool up = std::cos(total_angle) > 0.0;
  return glyph * 2 + (up ? 0 : 1);
}

// Label-preserving relative rotation interval for an example with base
// angle theta0 (same for up and down poses).
inline std::pair<double, double> glyph_true_interval(double theta0) {
  return {-kPi / 2.0 - theta0, kPi / 2.0 - theta0};
}

struct GlyphTask {
  Dataset train;
  Dataset test;
  double label_noise = 0.0;

  // p_true(Y | glyph, total angle): the visual label with probability
  // 1 - noise, the rest spread over the other classes.
  long long sample_label(int glyph, double total_angle, RngStream& rng) const {
    const long long visual = glyph_visual_label(glyph, total_angle);
    if (label_noise <= 0.0 || rng.uniform() >= label_noise) return visual;
    const long long shift = 1 + rng.uniform_index(kGlyphClasses - 1);
    return (visual + shift) % kGlyphClasses;
  }

  std::vector<double> label_law(int glyph, double total_angle) const {
    std::vector<double> p(kGlyphClasses, label_noise / (kGlyphClasses - 1));
    p[glyph_visual_label(glyph, total_angle)] = 1.0 - label_noise;
    return p;
  }
};

namespace detail {

inline Dataset gen_glyph_split(RngStream stream, long long n, double label_noise,
                               const GlyphTask& law) {
  std::vector<double> images;
  images.reserve(n * kGlyphSide * kGlyphSide);
  std::vector<double> labels(n), theta0(n), glyphs(n), poses(n);
  for (long long i = 0; i < n; ++i) {
    RngStream rng = stream.split(i);
    const int glyph = static_cast<int>(rng.uniform_index(2));
    const int pose = static_cast<int>(rng.uniform_index(2));  // 0 up, 1 down
    const double t0 = rng.uniform(-kPi / 4.0, kPi / 4.0);
    const double total = t0 + (pose == 1 ? kPi : 0.0);
    Tensor img = render_glyph(glyph, total);
    images.insert(images.end(), img.value().begin(), img.value().end());
    labels[i] = static_cast<double>(law.sample_label(glyph, total, rng));
    theta0[i] = t0;
    glyphs[i] = glyph;
    poses[i] = pose;
  }
  Dataset d;
  d.images = Tensor({static_cast<int>(n), 1, kGlyphSide, kGlyphSide}, std::move(images));
  d.labels = Tensor({static_cast<int>(n)}, std::move(labels));
  d.latents["theta0"] = Tensor({static_cast<int>(n)}, std::move(theta0));
  d.latents["glyph"] = Tensor({static_cast<int>(n)}, std::move(glyphs));
  d.latents["pose"] = Tensor({static_cast<int>(n)}, std::move(poses));
  (void)label_noise;
  return d;
}

}  // namespace detail

inline GlyphTask gen_glyphs(std::uint64_t seed, long long n_train, long long n_test,
                            double label_noise = 0.0) {
  if (n_train < 1 || n_test < 1) throw TensorError("gen_glyphs: need at least one example");
  GlyphTask task;
  task.label_noise = label_noise;
  RngStream master(seed);
  task.train = detail::gen_glyph_split(master.split(1), n_train, label_noise, task);
  task.test = detail::gen_glyph_split(master.split(2), n_test, label_noise, task);
  return task;
}

// ---------------------------------------------------------------------------
// Texture task: 24x24 RGB, 8 classes = 4 procedural patterns x 2 palettes
// (warm/cool hue family). Lighting conditions are fixed (dh, ds, dv) shifts
// applied at generation; class identity is invariant to lighting while the
// pixel statistics are not: palettes stay separable because the built-in
// hue shifts (±1/6) are smaller than the palette separation (1/2).
// ---------------------------------------------------------------------------

constexpr int kTextureSide = 24;
constexpr int kTextureClasses = 8;

struct LightingCondition {
  double dh, ds, dv;
};

inline const std::vector<LightingCondition>& lighting_conditions() {
  static const std::vector<LightingCondition> kConditions = {
      {0.0, 0.0, 0.0},        {1.0 / 6, 0.0, 0.0},   {-1.0 / 6, 0.0, 0.0},
      {0.0, 0.15, 0.0},       {0.0, -0.3, 0.0},      {0.0, 0.0, 0.2},
      {0.0, 0.0, -0.2},       {1.0 / 6, 0.0, 0.2},   {-1.0 / 6, 0.0, -0.2},
      {1.0 / 6, -0.3, 0.0},   {-1.0 / 6, 0.0, 0.2},  {0.0, -0.3, -0.2},
  };
  return kConditions;
}

namespace detail {

inline void shade_pixel(std::vector<double>& img, long long plane, long long idx, double mask,
                        const std::array<double, 3>& fg, const std::array<double, 3>& bg) {
  for (int ch = 0; ch < 3; ++ch)
    img[ch * plane + idx] = mask * fg[ch] + (1.0 - mask) * bg[ch];
}

inline Tensor render_texture(int klass, RngStream& rng) {
  const int pattern = klass / 2;
  const int palette = klass % 2;
  const double hue0 = (palette == 0 ? 0.04 : 0.54) + rng.uniform(-0.04, 0.04);
  const double hue = hue0 - std::floor(hue0);
  const auto fg = hsv_pixel_to_rgb(hue, 0.85, 0.8 + rng.uniform(-0.1, 0.1));
  const double bg_h = hue + 0.06 - std::floor(hue + 0.06);
  const auto bg = hsv_pixel_to_rgb(bg_h, 0.45, 0.35 + rng.uniform(-0.08, 0.08));

  const double phase1 = rng.uniform(0.0, 2.0 * kPi);
  const double phase2 = rng.uniform(0.0, 2.0 * kPi);
  const double jitter = rng.uniform(0.9, 1.1);

  const long long plane = static_cast<long long>(kTextureSide) * kTextureSide;
  std::vector<double> img(3 * plane, 0.0);
  for (int y = 0; y < kTextureSide; ++y)
    for (int x = 0; x < kTextureSide; ++x) {
      double mask = 0.0;
      switch (pattern) {
        case 0: {  // fine horizontal stripes
          const double s = std::sin(2.0 * kPi * y / (4.0 * jitter) + phase1);
          mask = render::smoothstep(-0.3, 0.3, s);
          break;
        }
        case 1: {  // coarse diagonal stripes
          const double u = (x + y) / std::sqrt(2.0);
          const double s = std::sin(2.0 * kPi * u / (8.0 * jitter) + phase1);
          mask = render::smoothstep(-0.3, 0.3, s);
          break;
        }
        case 2: {  // checkerboard
          const double s1 = std::tanh(3.0 * std::sin(2.0 * kPi * x / (8.0 * jitter) + phase1));
          const double s2 = std::tanh(3.0 * std::sin(2.0 * kPi * y / (8.0 * jitter) + phase2));
          mask = 0.5 * (1.0 + s1 * s2);
          break;
        }
        default: {  // dot lattice
          const double spacing = 6.0 * jitter;
          const double ox = phase1 / (2.0 * kPi) * spacing, oy = phase2 / (2.0 * kPi) * spacing;
          const double lx = x - ox, ly = y - oy;
          const double dx = lx - std::round(lx / spacing) * spacing;
          const double dy = ly - std::round(ly / spacing) * spacing;
          const double d = std::sqrt(dx * dx + dy * dy);
          mask = render::smoothstep(2.6, 1.6, d);
          break;
        }
      }
      shade_pixel(img, plane, y * kTextureSide + x, mask, fg, bg);
    }
  return Tensor({3, kTextureSide, kTextureSide}, std::move(img));
}

inline Tensor apply_lighting(const Tensor& img, const LightingCondition& cond) {
  const long long plane = static_cast<long long>(img.shape()[1]) * img.shape()[2];
  std::vector<double> out(img.size());
  for (long long i = 0; i < plane; ++i) {
    auto hsv = rgb_pixel_to_hsv(img.value()[i], img.value()[plane + i],
                                img.value()[2 * plane + i]);
    const double h = hsv[0] + cond.dh;
    auto rgb = hsv_pixel_to_rgb(h - std::floor(h),
                                std::min(1.0, std::max(0.0, hsv[1] + cond.ds)),
                                std::min(1.0, std::max(0.0, hsv[2] + cond.dv)));
    out[i] = rgb[0];
    out[plane + i] = rgb[1];
    out[2 * plane + i] = rgb[2];
  }
  return Tensor(img.shape(), std::move(out));
}

inline Dataset gen_texture_split(RngStream stream, const std::vector<int>& conditions,
                                 long long n_per_condition) {
  const long long n = n_per_condition * static_cast<long long>(conditions.size());
  std::vector<double> images;
  images.reserve(n * 3 * kTextureSide * kTextureSide);
  std::vector<double> labels(n), cond_latent(n);
  long long i = 0;
  for (int cond_idx : conditions) {
    const LightingCondition& cond = lighting_conditions().at(cond_idx);
    for (long long j = 0; j < n_per_condition; ++j, ++i) {
      RngStream rng = stream.split(i);
      const int klass = static_cast<int>(j % kTextureClasses);  // exact balance per condition
      Tensor img = apply_lighting(render_texture(klass, rng), cond);
      images.insert(images.end(), img.value().begin(), img.value().end());
      labels[i] = klass;
      cond_latent[i] = cond_idx;
    }
  }
  Dataset d;
  d.images = Tensor({static_cast<int>(n), 3, kTextureSide, kTextureSide}, std::move(images));
  d.labels = Tensor({static_cast<int>(n)}, std::move(labels));
  d.latents["condition"] = Tensor({static_cast<int>(n)}, std::move(cond_latent));
  return d;
}

}  // namespace detail

struct TextureTask {
  Dataset train;
  Dataset test;
  std::vector<int> train_conditions;
};

// Train images come from the selected conditions; test images mix all
// built-in conditions evenly. Class counts are exactly balanced within
// every condition, so n_per_condition must be a multiple of 8.
inline TextureTask gen_textures(std::uint64_t seed, const std::vector<int>& train_conditions,
                                long long n_per_condition, long long n_test_per_condition) {
  if (train_conditions.empty()) throw TensorError("gen_textures: empty condition set");
  for (int c : train_conditions)
    if (c < 0 || c >= static_cast<int>(lighting_conditions().size()))
      throw TensorError("gen_textures: condition index out of range");
  if (n_per_condition % kTextureClasses != 0 || n_test_per_condition % kTextureClasses != 0)
    throw TensorError("gen_textures: per-condition counts must be multiples of 8");
  TextureTask task;
  task.train_conditions = train_conditions;
  RngStream master(seed);
  task.train = detail::gen_texture_split(master.split(1), train_conditions, n_per_condition);
  std::vector<int> all_conditions(lighting_conditions().size());
  for (std::size_t i = 0; i < all_conditions.size(); ++i) all_conditions[i] = static_cast<int>(i);
  task.test = detail::gen_texture_split(master.split(2), all_conditions, n_test_per_condition);
  return task;
}

// ---------------------------------------------------------------------------
// Composite task: 48x48 RGB scenes with one saturated label-bearing shape
// (disk/square/triangle in red or blue, 6 classes) over desaturated clutter.
// The latent bounding box of the object is recorded; any crop that fully
// contains the object preserves the label.
// ---------------------------------------------------------------------------

constexpr int kCompositeSide = 48;
constexpr int kCompositeClasses = 6;

namespace detail {

// Coverage in [0,1] of shape `kind` (0 disk, 1 square, 2 triangle) centered
// at (cy, cx) with side `side`, at pixel (y, x); 2x2 supersampling.
inline double shape_coverage(int kind, double cy, double cx, double side, int y, int x) {
  const double half = side / 2.0;
  int hit = 0;
  for (int sy = 0; sy < 2; ++sy)
    for (int sx = 0; sx < 2; ++sx) {
      const double py = y + 0.25 + 0.5 * sy - cy;
      const double px = x + 0.25 + 0.5 * sx - cx;
      bool inside = false;
      switch (kind) {
        case 0: inside = px * px + py * py <= half * half; break;
        case 1: inside = std::abs(px) <= half && std::abs(py) <= half; break;
        default: {
          // upward triangle: apex at top, base at bottom of the box
          const double ny = py / half;  // -1 top .. +1 bottom
          if (ny >= -1.0 && ny <= 1.0) inside = std::abs(px) <= half * (ny + 1.0) / 2.0;
          break;
        }
      }
      if (inside) ++hit;
    }
  return hit / 4.0;
}

inline void paint_shape(std::vector<double>& img, long long plane, int h, int w, int kind,
                        double cy, double cx, double side, const std::array<double, 3>& color) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - side / 2 - 1)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(cy + side / 2 + 1)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - side / 2 - 1)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(cx + side / 2 + 1)));
  for (int y = r0; y <= r1; ++y)
    for (int x = c0; x <= c1; ++x) {
      const double cov = shape_coverage(kind, cy, cx, side, y, x);
      if (cov <= 0.0) continue;
      const long long idx = static_cast<long long>(y) * w + x;
      for (int ch = 0; ch < 3; ++ch)
        img[ch * plane + idx] = cov * color[ch] + (1.0 - cov) * img[ch * plane + idx];
    }
}

inline Dataset gen_composite_split(RngStream stream, long long n) {
  const int side = kCompositeSide;
  const long long plane = static_cast<long long>(side) * side;
  std::vector<double> images;
  images.reserve(n * 3 * plane);
  std::vector<double> labels(n), boxes(n * 3);
  for (long long i = 0; i < n; ++i) {
    RngStream rng = stream.split(i);
    std::vector<double> img(3 * plane);
    const double base = rng.uniform(0.1, 0.2);
    for (long long p = 0; p < plane; ++p)
      for (int ch = 0; ch < 3; ++ch) img[ch * plane + p] = base;

    // Desaturated clutter first, so the object always sits on top.
    const int n_distract = 6 + static_cast<int>(rng.uniform_index(5));
    for (int d = 0; d < n_distract; ++d) {
      const int kind = static_cast<int>(rng.uniform_index(3));
      const double dside = rng.uniform(4.0, 16.0);
      const double cy = rng.uniform(0.0, side - 1.0);
      const double cx = rng.uniform(0.0, side - 1.0);
      const auto color = hsv_pixel_to_rgb(rng.uniform(), rng.uniform(0.0, 0.15),
                                          rng.uniform(0.25, 0.75));
      paint_shape(img, plane, side, side, kind, cy, cx, dside, color);
    }

    const int shape = static_cast<int>(rng.uniform_index(3));
    const int color_id = static_cast<int>(rng.uniform_index(2));
    const double obj_side = rng.uniform(8.0, 24.0);
    const double cy = rng.uniform(obj_side / 2, side - 1.0 - obj_side / 2);
    const double cx = rng.uniform(obj_side / 2, side - 1.0 - obj_side / 2);
    const double hue0 = (color_id == 0 ? 0.0 : 0.6) + rng.uniform(-0.03, 0.03);
    const auto color = hsv_pixel_to_rgb(hue0 - std::floor(hue0), 0.9,
                                        rng.uniform(0.8, 0.95));
    paint_shape(img, plane, side, side, shape, cy, cx, obj_side, color);

    images.insert(images.end(), img.begin(), img.end());
    labels[i] = shape * 2 + color_id;
    boxes[i * 3] = cy;
    boxes[i * 3 + 1] = cx;
    boxes[i * 3 + 2] = obj_side;
  }
  Dataset d;
  d.images = Tensor({static_cast<int>(n), 3, side, side}, std::move(images));
  d.labels = Tensor({static_cast<int>(n)}, std::move(labels));
  d.latents["boxes"] = Tensor({static_cast<int>(n), 3}, std::move(boxes));
  return d;
}

}  // namespace detail

struct CompositeTask {
  Dataset train;
  Dataset test;

  Patch latent_box(const Dataset& split, long long i) const {
    const auto& b = split.latents.at("boxes").value();
    return Patch{b[i * 3], b[i * 3 + 1], b[i * 3 + 2]};
  }
};

inline CompositeTask gen_composites(std::uint64_t seed, long long n_train, long long n_test) {
  if (n_train < 1 || n_test < 1) throw TensorError("gen_composites: need at least one example");
  CompositeTask task;
  RngStream master(seed);
  task.train = detail::gen_composite_split(master.split(1), n_train);
  task.test = detail::gen_composite_split(master.split(2), n_test);
  return task;
}

// Classifies a composite crop from its pixels alone: color from the mean hue
// of saturated pixels, shape from the saturated mask's fill ratio and
// vertical centroid offset (squares fill their bounding box, triangles sit
// bottom-heavy, disks neither). The crop is bilinearly upsampled 4x first,
// which reconstructs subpixel boundaries and keeps both features stable down
// to the smallest object sizes. Returns -1 when no saturated object pixels
// are visible.
inline long long composite_box_oracle(const Tensor& crop) {
  Tensor fine = crop_resize(
      crop, Patch{(crop.shape()[1] - 1) / 2.0, (crop.shape()[2] - 1) / 2.0,
                  static_cast<double>(std::max(crop.shape()[1], crop.shape()[2]))},
      4 * std::max(crop.shape()[1], crop.shape()[2]));
  const long long h = fine.shape()[1], w = fine.shape()[2];
  const long long plane = h * w;
  double m00 = 0.0, m01 = 0.0;
  double hue_x = 0.0, hue_y = 0.0;
  double ymin = 1e300, ymax = -1e300, xmin = 1e300, xmax = -1e300;
  long long n_mask = 0;
  for (long long y = 0; y < h; ++y)
    for (long long x = 0; x < w; ++x) {
      const long long i = y * w + x;
      auto hsv = rgb_pixel_to_hsv(fine.value()[i], fine.value()[plane + i],
                                  fine.value()[2 * plane + i]);
      if (hsv[1] > 0.55 && hsv[2] > 0.3) {
        ++n_mask;
        m00 += 1.0;
        m01 += static_cast<double>(y);
        hue_x += std::cos(2.0 * kPi * hsv[0]);
        hue_y += std::sin(2.0 * kPi * hsv[0]);
        ymin = std::min(ymin, static_cast<double>(y));
        ymax = std::max(ymax, static_cast<double>(y));
        xmin = std::min(xmin, static_cast<double>(x));
        xmax = std::max(xmax, static_cast<double>(x));
      }
    }
  if (n_mask < 10 * 16) return -1;  // ~10 native pixels after 4x upsampling
  double hue = std::atan2(hue_y, hue_x) / (2.0 * kPi);
  if (hue < 0.0) hue += 1.0;
  const double dist_red = std::min(hue, 1.0 - hue);
  const double dist_blue = std::abs(hue - 0.6);
  const int color_id = dist_red <= dist_blue ? 0 : 1;

  const double fill = m00 / ((ymax - ymin + 1) * (xmax - xmin + 1));
  const double centroid_offset = (m01 / m00 - 0.5 * (ymin + ymax)) / (ymax - ymin + 1);
  int shape;
  if (centroid_offset > 0.06)
    shape = 2;
  else if (fill > 0.875)
    shape = 1;
  else
    shape = 0;
  return shape * 2 + color_id;
}

}  // namespace auglab
