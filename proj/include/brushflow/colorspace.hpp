#pragma once

// NTSC YIQ and sRGB/D65 CIELAB conversions, plus Lab chroma statistics.
//
// Conventions (pinned here, every loss depends on them):
//   YIQ: Y = 0.299 R + 0.587 G + 0.114 B, FCC NTSC I and Q rows.
//   Lab: sRGB piecewise transfer (threshold 0.04045, exponent 2.4), IEC
//        61966-2-1 sRGB->XYZ matrix, D65 white taken as the image of RGB
//        (1,1,1) so neutral inputs map to a = b = 0 exactly.

#include "brushflow/image.hpp"
#include "brushflow/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace brushflow::color {

inline const Mat3& yiq_matrix() {
  static const Mat3 m = (Mat3() << 0.299, 0.587, 0.114,  //
                         0.595716, -0.274453, -0.321263,  //
                         0.211456, -0.522591, 0.311135)
                            .finished();
  return m;
}

inline const Vec3& luma_weights() {
  static const Vec3 w(0.299, 0.587, 0.114);
  return w;
}

inline const Mat3& srgb_to_xyz_matrix() {
  static const Mat3 m = (Mat3() << 0.4124564, 0.3575761, 0.1804375,  //
                         0.2126729, 0.7151522, 0.0721750,             //
                         0.0193339, 0.1191920, 0.9503041)
                            .finished();
  return m;
}

inline const Mat3& xyz_to_srgb_matrix() {
  static const Mat3 m = srgb_to_xyz_matrix().inverse();
  return m;
}

inline const Vec3& d65_white() {
  static const Vec3 w = srgb_to_xyz_matrix() * Vec3::Ones();
  return w;
}

/// Counts inputs that were clamped into [0,1].
struct ClampCounter {
  std::size_t clamped = 0;
};

inline double clamp_unit(double v, ClampCounter* counter) {
  if (v < 0.0 || v > 1.0) {
    if (counter) ++counter->clamped;
    return std::clamp(v, 0.0, 1.0);
  }
  return v;
}

inline Vec3 rgb_to_yiq(const Vec3& rgb) { return yiq_matrix() * rgb; }

inline Image rgb_to_yiq(const Image& rgb, ClampCounter* counter = nullptr) {
  if (rgb.channels() != 3) throw std::invalid_argument("rgb_to_yiq expects 3 channels");
  Image out(rgb.width(), rgb.height(), 3);
  const Mat3& m = yiq_matrix();
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) {
      Vec3 p;
      for (int c = 0; c < 3; ++c) p(c) = clamp_unit(rgb.at(x, y, c), counter);
      const Vec3 q = m * p;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = q(c);
    }
  return out;
}

/// Y channel only, single-channel result.
inline Image luminance(const Image& rgb, ClampCounter* counter = nullptr) {
  Image out(rgb.width(), rgb.height(), 1);
  const Vec3& w = luma_weights();
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) acc += w(c) * clamp_unit(rgb.at(x, y, c), counter);
      out.at(x, y) = acc;
    }
  return out;
}

template <class T>
T srgb_to_linear(const T& c) {
  using std::pow;
  if (value_of(c) <= 0.04045) return c / 12.92;
  return pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  if (c <= 0.0031308) return 12.92 * c;
  return 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

namespace detail {
inline constexpr double kLabDelta = 6.0 / 29.0;

template <class T>
T lab_f(const T& t) {
  using std::cbrt;
  if (value_of(t) > kLabDelta * kLabDelta * kLabDelta) return cbrt(t);
  return t / (3.0 * kLabDelta * kLabDelta) + 4.0 / 29.0;
}

inline double lab_f_inv(double f) {
  if (f > kLabDelta) return f * f * f;
  return 3.0 * kLabDelta * kLabDelta * (f - 4.0 / 29.0);
}
}  // namespace detail

/// sRGB in [0,1] -> CIELAB (D65). Scalar-generic for per-pixel Jacobians.
template <class T>
V3<T> rgb_to_lab(const V3<T>& rgb) {
  V3<T> lin;
  for (int c = 0; c < 3; ++c) lin(c) = srgb_to_linear(rgb(c));
  const V3<T> xyz = srgb_to_xyz_matrix().cast<T>() * lin;
  const Vec3& white = d65_white();
  const T fx = detail::lab_f(T(xyz(0) / white(0)));
  const T fy = detail::lab_f(T(xyz(1) / white(1)));
  const T fz = detail::lab_f(T(xyz(2) / white(2)));
  return V3<T>(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz));
}

/// CIELAB -> sRGB; out-of-gamut results are clamped to [0,1].
inline Vec3 lab_to_rgb(const Vec3& lab, ClampCounter* counter = nullptr) {
  const double fy = (lab(0) + 16.0) / 116.0;
  const double fx = fy + lab(1) / 500.0;
  const double fz = fy - lab(2) / 200.0;
  const Vec3& white = d65_white();
  const Vec3 xyz(white(0) * detail::lab_f_inv(fx), white(1) * detail::lab_f_inv(fy),
                 white(2) * detail::lab_f_inv(fz));
  const Vec3 lin = xyz_to_srgb_matrix() * xyz;
  Vec3 rgb;
  for (int c = 0; c < 3; ++c) rgb(c) = clamp_unit(linear_to_srgb(lin(c)), counter);
  return rgb;
}

inline Image rgb_to_lab(const Image& rgb, ClampCounter* counter = nullptr) {
  if (rgb.channels() != 3) throw std::invalid_argument("rgb_to_lab expects 3 channels");
  Image out(rgb.width(), rgb.height(), 3);
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) {
      Vec3 p;
      for (int c = 0; c < 3; ++c) p(c) = clamp_unit(rgb.at(x, y, c), counter);
      const Vec3 lab = rgb_to_lab<double>(p);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = lab(c);
    }
  return out;
}

inline Image lab_to_rgb(const Image& lab, ClampCounter* counter = nullptr) {
  Image out(lab.width(), lab.height(), 3);
  for (int y = 0; y < lab.height(); ++y)
    for (int x = 0; x < lab.width(); ++x) {
      const Vec3 rgb = lab_to_rgb(Vec3(lab.at(x, y, 0), lab.at(x, y, 1), lab.at(x, y, 2)), counter);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb(c);
    }
  return out;
}

struct ChromaStats {
  Vec2 mean_ab = Vec2::Zero();
  Vec2 std_ab = Vec2::Zero();  // population standard deviation
};

inline ChromaStats chroma_stats(const Image& lab) {
  if (lab.pixel_count() == 0) throw std::invalid_argument("chroma_stats needs a nonempty raster");
  const double n = static_cast<double>(lab.pixel_count());
  ChromaStats s;
  for (int ch = 0; ch < 2; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < lab.pixel_count(); ++i) sum += lab.data()[i * 3 + 1 + ch];
    const double mean = sum / n;
    double sq = 0.0;
    for (std::size_t i = 0; i < lab.pixel_count(); ++i) {
      const double d = lab.data()[i * 3 + 1 + ch] - mean;
      sq += d * d;
    }
    s.mean_ab(ch) = mean;
    s.std_ab(ch) = std::sqrt(sq / n);
  }
  return s;
}

}  // namespace brushflow::color
