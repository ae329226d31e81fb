#pragma once

#include <array>
#include <cmath>

#include "auglab/tensor.hpp"

namespace auglab {

// Images are [C, H, W] tensors with values in [0, 1], C = 1 or 3.

// One crop candidate: a square window of `side` pixels centered at
// (center_y, center_x); fractional centers are allowed.
struct Patch {
  double center_y = 0.0;
  double center_x = 0.0;
  double side = 0.0;
};

namespace detail {

inline void check_image(const Tensor& img, const char* op) {
  if (img.dim() != 3 || (img.shape()[0] != 1 && img.shape()[0] != 3))
    throw TensorError(std::string(op) + ": expected a [C,H,W] image with 1 or 3 channels");
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Bilinear read with zero fill outside the image.
inline double sample_bilinear(const double* plane, long long h, long long w, double sy,
                              double sx) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const long long y0 = static_cast<long long>(fy), x0 = static_cast<long long>(fx);
  const double wy = sy - fy, wx = sx - fx;
  auto at = [&](long long y, long long x) -> double {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : plane[y * w + x];
  };
  return (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
         wy * ((1.0 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
}

// d(sample)/d(sy) and d(sample)/d(sx) of the bilinear read above.
inline std::array<double, 2> sample_bilinear_dcoord(const double* plane, long long h,
                                                    long long w, double sy, double sx) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const long long y0 = static_cast<long long>(fy), x0 = static_cast<long long>(fx);
  const double wy = sy - fy, wx = sx - fx;
  auto at = [&](long long y, long long x) -> double {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : plane[y * w + x];
  };
  const double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
  const double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
  const double dy = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01);
  const double dx = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10);
  return {dy, dx};
}

inline void scatter_bilinear(double* gplane, long long h, long long w, double sy, double sx,
                             double g) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const long long y0 = static_cast<long long>(fy), x0 = static_cast<long long>(fx);
  const double wy = sy - fy, wx = sx - fx;
  auto put = [&](long long y, long long x, double v) {
    if (y >= 0 && y < h && x >= 0 && x < w) gplane[y * w + x] += v;
  };
  put(y0, x0, g * (1.0 - wy) * (1.0 - wx));
  put(y0, x0 + 1, g * (1.0 - wy) * wx);
  put(y0 + 1, x0, g * wy * (1.0 - wx));
  put(y0 + 1, x0 + 1, g * wy * wx);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RGB <-> HSV (hexcone). Value-level conversions, h in [0,1), grays map to
// h = 0 by convention.
// ---------------------------------------------------------------------------

inline std::array<double, 3> rgb_pixel_to_hsv(double r, double g, double b) {
  const double maxc = std::max(r, std::max(g, b));
  const double minc = std::min(r, std::min(g, b));
  const double v = maxc;
  const double delta = maxc - minc;
  const double s = maxc > 0.0 ? delta / maxc : 0.0;
  double hue = 0.0;
  if (delta > 0.0) {
    if (maxc == r)
      hue = (g - b) / delta;
    else if (maxc == g)
      hue = (b - r) / delta + 2.0;
    else
      hue = (r - g) / delta + 4.0;
    hue /= 6.0;
    if (hue < 0.0) hue += 1.0;
    if (hue >= 1.0) hue -= 1.0;
  }
  return {hue, s, v};
}

inline std::array<double, 3> hsv_pixel_to_rgb(double h, double s, double v) {
  const double hh = (h - std::floor(h)) * 6.0;
  int sextant = static_cast<int>(hh);
  if (sextant > 5) sextant = 5;  // h just below 1 after rounding
  const double f = hh - sextant;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sextant) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline Tensor rgb_hsv(const Tensor& img) {
  detail::check_image(img, "rgb_hsv");
  if (img.shape()[0] != 3) throw TensorError("rgb_hsv: expected an RGB image");
  const long long plane = static_cast<long long>(img.shape()[1]) * img.shape()[2];
  std::vector<double> out(img.size());
  for (long long i = 0; i < plane; ++i) {
    auto hsv = rgb_pixel_to_hsv(img.value()[i], img.value()[plane + i], img.value()[2 * plane + i]);
    out[i] = hsv[0];
    out[plane + i] = hsv[1];
    out[2 * plane + i] = hsv[2];
  }
  return Tensor(img.shape(), std::move(out));
}

inline Tensor hsv_rgb(const Tensor& img) {
  detail::check_image(img, "hsv_rgb");
  if (img.shape()[0] != 3) throw TensorError("hsv_rgb: expected a 3-channel image");
  const long long plane = static_cast<long long>(img.shape()[1]) * img.shape()[2];
  std::vector<double> out(img.size());
  for (long long i = 0; i < plane; ++i) {
    auto rgb = hsv_pixel_to_rgb(img.value()[i], img.value()[plane + i], img.value()[2 * plane + i]);
    out[i] = rgb[0];
    out[plane + i] = rgb[1];
    out[2 * plane + i] = rgb[2];
  }
  return Tensor(img.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// rotate: bilinear resampling about the image center, counter-clockwise for
// positive angles, zero fill outside the frame. Differentiable w.r.t. both
// the angle and the image.
// ---------------------------------------------------------------------------

inline Tensor rotate(const Tensor& img, const Tensor& angle) {
  detail::check_image(img, "rotate");
  if (angle.size() != 1) throw TensorError("rotate: angle must be a scalar");
  const double theta = angle.value()[0];
  if (!std::isfinite(theta)) throw NonFiniteError("rotate: non-finite angle");

  const long long c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ct = std::cos(theta), st = std::sin(theta);

  std::vector<double> out(img.size());
  for (long long r = 0; r < h; ++r)
    for (long long col = 0; col < w; ++col) {
      // y-up frame about the center; source = R(-theta) * dest.
      const double x = col - cx, y = cy - r;
      const double sx = ct * x + st * y;
      const double sy = -st * x + ct * y;
      const double src_r = cy - sy, src_c = cx + sx;
      for (long long ch = 0; ch < c; ++ch)
        out[(ch * h + r) * w + col] = detail::clamp01(
            detail::sample_bilinear(img.value().data() + ch * h * w, h, w, src_r, src_c));
    }
  Tensor result(img.shape(), std::move(out));
  return detail::make_result("rotate", {img, angle}, result,
                             [img, angle, result, c, h, w, cy, cx, ct, st]() {
    if (!result.has_grad()) return;
    const auto& g = result.grad();
    double dtheta = 0.0;
    for (long long r = 0; r < h; ++r)
      for (long long col = 0; col < w; ++col) {
        const double x = col - cx, y = cy - r;
        const double sx = ct * x + st * y;
        const double sy = -st * x + ct * y;
        const double src_r = cy - sy, src_c = cx + sx;
        // d(src)/d(theta)
        const double dsx = -st * x + ct * y;
        const double dsy = -ct * x - st * y;
        const double dsrc_r = -dsy, dsrc_c = dsx;
        for (long long ch = 0; ch < c; ++ch) {
          const double gv = g[(ch * h + r) * w + col];
          if (gv == 0.0) continue;
          if (angle.requires_grad()) {
            auto d = detail::sample_bilinear_dcoord(img.value().data() + ch * h * w, h, w,
                                                    src_r, src_c);
            dtheta += gv * (d[0] * dsrc_r + d[1] * dsrc_c);
          }
          if (img.requires_grad()) {
            img.impl()->ensure_grad();
            detail::scatter_bilinear(img.impl()->grad.data() + ch * h * w, h, w, src_r, src_c,
                                     gv);
          }
        }
      }
    if (angle.requires_grad()) detail::accum(angle, 0, dtheta);
  });
}

inline Tensor rotate(const Tensor& img, double angle) {
  return rotate(img, Tensor::scalar(angle));
}

// ---------------------------------------------------------------------------
// hsv_jitter: h' = (h + dh) mod 1 (hue is circular), s' and v' shifted and
// clipped to [0,1]. Differentiable w.r.t. the three shifts; the image is
// treated as a constant.
// ---------------------------------------------------------------------------

inline Tensor hsv_jitter(const Tensor& img, const Tensor& dh, const Tensor& ds,
                         const Tensor& dv) {
  detail::check_image(img, "hsv_jitter");
  if (img.shape()[0] != 3) throw TensorError("hsv_jitter: expected an RGB image");
  if (img.requires_grad())
    throw TensorError("hsv_jitter: gradient w.r.t. the image is not supported");
  if (dh.size() != 1 || ds.size() != 1 || dv.size() != 1)
    throw TensorError("hsv_jitter: shifts must be scalars");

  const double sh = dh.value()[0], ss = ds.value()[0], sv = dv.value()[0];
  const long long plane = static_cast<long long>(img.shape()[1]) * img.shape()[2];

  const bool identity = sh == 0.0 && ss == 0.0 && sv == 0.0;
  std::vector<double> out;
  if (identity) {
    out = img.value();
  } else {
    out.resize(img.size());
    for (long long i = 0; i < plane; ++i) {
      auto hsv = rgb_pixel_to_hsv(img.value()[i], img.value()[plane + i],
                                  img.value()[2 * plane + i]);
      const double h2 = (hsv[0] + sh) - std::floor(hsv[0] + sh);
      const double s2 = detail::clamp01(hsv[1] + ss);
      const double v2 = detail::clamp01(hsv[2] + sv);
      auto rgb = hsv_pixel_to_rgb(h2, s2, v2);
      out[i] = detail::clamp01(rgb[0]);
      out[plane + i] = detail::clamp01(rgb[1]);
      out[2 * plane + i] = detail::clamp01(rgb[2]);
    }
  }
  Tensor result(img.shape(), std::move(out));
  return detail::make_result("hsv_jitter", {img, dh, ds, dv}, result,
                             [img, dh, ds, dv, result, sh, ss, sv, plane]() {
    if (!result.has_grad()) return;
    const auto& g = result.grad();
    double gh = 0.0, gs = 0.0, gv = 0.0;
    for (long long i = 0; i < plane; ++i) {
      const double gr = g[i], gg = g[plane + i], gb = g[2 * plane + i];
      if (gr == 0.0 && gg == 0.0 && gb == 0.0) continue;
      auto hsv = rgb_pixel_to_hsv(img.value()[i], img.value()[plane + i],
                                  img.value()[2 * plane + i]);
      const double h2 = (hsv[0] + sh) - std::floor(hsv[0] + sh);
      const double s_raw = hsv[1] + ss, v_raw = hsv[2] + sv;
      const double s2 = detail::clamp01(s_raw), v2 = detail::clamp01(v_raw);
      const double pass_s = (s_raw >= 0.0 && s_raw <= 1.0) ? 1.0 : 0.0;
      const double pass_v = (v_raw >= 0.0 && v_raw <= 1.0) ? 1.0 : 0.0;

      const double hh = h2 * 6.0;
      int sextant = static_cast<int>(hh);
      if (sextant > 5) sextant = 5;
      const double f = hh - sextant;
      // Jacobian of hexcone HSV->RGB w.r.t. (h, s, v) in the current sextant.
      double dr_dh = 0, dg_dh = 0, db_dh = 0;
      double dr_ds = 0, dg_ds = 0, db_ds = 0;
      double dr_dv = 0, dg_dv = 0, db_dv = 0;
      const double vs6 = 6.0 * v2 * s2;
      switch (sextant) {
        case 0:
          dg_dh = vs6; dg_ds = -v2 * (1 - f); db_ds = -v2;
          dr_dv = 1; dg_dv = 1 - s2 * (1 - f); db_dv = 1 - s2;
          break;
        case 1:
          dr_dh = -vs6; dr_ds = -v2 * f; db_ds = -v2;
          dr_dv = 1 - s2 * f; dg_dv = 1; db_dv = 1 - s2;
          break;
        case 2:
          db_dh = vs6; dr_ds = -v2; db_ds = -v2 * (1 - f);
          dr_dv = 1 - s2; dg_dv = 1; db_dv = 1 - s2 * (1 - f);
          break;
        case 3:
          dg_dh = -vs6; dr_ds = -v2; dg_ds = -v2 * f;
          dr_dv = 1 - s2; dg_dv = 1 - s2 * f; db_dv = 1;
          break;
        case 4:
          dr_dh = vs6; dr_ds = -v2 * (1 - f); dg_ds = -v2;
          dr_dv = 1 - s2 * (1 - f); dg_dv = 1 - s2; db_dv = 1;
          break;
        default:
          db_dh = -vs6; dg_ds = -v2; db_ds = -v2 * f;
          dr_dv = 1; dg_dv = 1 - s2; db_dv = 1 - s2 * f;
          break;
      }
      gh += gr * dr_dh + gg * dg_dh + gb * db_dh;
      gs += (gr * dr_ds + gg * dg_ds + gb * db_ds) * pass_s;
      gv += (gr * dr_dv + gg * dg_dv + gb * db_dv) * pass_v;
    }
    if (dh.requires_grad()) detail::accum(dh, 0, gh);
    if (ds.requires_grad()) detail::accum(ds, 0, gs);
    if (dv.requires_grad()) detail::accum(dv, 0, gv);
  });
}

inline Tensor hsv_jitter(const Tensor& img, double dh, double ds, double dv) {
  return hsv_jitter(img, Tensor::scalar(dh), Tensor::scalar(ds), Tensor::scalar(dv));
}

// ---------------------------------------------------------------------------
// crop_resize: extract a square patch (zero fill past the frame) and resize
// to out_side x out_side with bilinear sampling, endpoints aligned so the
// full-image patch at out_side == width is the identity. Gradients flow to
// the image pixels only; patch coordinates are discrete choices.
// ---------------------------------------------------------------------------

inline Tensor crop_resize(const Tensor& img, const Patch& p, int out_side) {
  detail::check_image(img, "crop_resize");
  if (out_side < 1) throw TensorError("crop_resize: out_side must be at least 1");
  if (!(p.side >= 1.0)) throw TensorError("crop_resize: degenerate patch (side < 1 pixel)");
  const long long c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  const double half = (p.side - 1.0) / 2.0;
  if (p.center_y + half < -0.5 || p.center_y - half > h - 0.5 || p.center_x + half < -0.5 ||
      p.center_x - half > w - 0.5)
    throw TensorError("crop_resize: patch does not intersect the image");

  const double step = out_side > 1 ? (p.side - 1.0) / (out_side - 1) : 0.0;
  const double top = out_side > 1 ? p.center_y - half : p.center_y;
  const double left = out_side > 1 ? p.center_x - half : p.center_x;

  std::vector<double> out(static_cast<std::size_t>(c) * out_side * out_side);
  for (long long ch = 0; ch < c; ++ch) {
    const double* plane = img.value().data() + ch * h * w;
    for (int oy = 0; oy < out_side; ++oy)
      for (int ox = 0; ox < out_side; ++ox)
        out[(ch * out_side + oy) * out_side + ox] = detail::clamp01(
            detail::sample_bilinear(plane, h, w, top + oy * step, left + ox * step));
  }
  Tensor result(Shape{static_cast<int>(c), out_side, out_side}, std::move(out));
  return detail::make_result("crop_resize", {img}, result,
                             [img, result, c, h, w, top, left, step, out_side]() {
    if (!result.has_grad() || !img.requires_grad()) return;
    img.impl()->ensure_grad();
    const auto& g = result.grad();
    for (long long ch = 0; ch < c; ++ch) {
      double* gplane = img.impl()->grad.data() + ch * h * w;
      for (int oy = 0; oy < out_side; ++oy)
        for (int ox = 0; ox < out_side; ++ox) {
          const double gv = g[(ch * out_side + oy) * out_side + ox];
          if (gv != 0.0)
            detail::scatter_bilinear(gplane, h, w, top + oy * step, left + ox * step, gv);
        }
    }
  });
}

}  // namespace auglab
