#pragma once

// Structure-tensor stroke orientation fields extracted from style images.

#include "brushflow/colorspace.hpp"
#include "brushflow/image.hpp"
#include "brushflow/numeric.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace brushflow {

enum class OrientationMode {
  coherence_direction,  // along strokes: eigenvector of the smaller eigenvalue
  leading_eigenvector,  // across strokes: eigenvector of the larger eigenvalue
};

struct FlowOptions {
  double smoothing_sigma = 1.0;
  double window_sigma = 4.0;
  OrientationMode mode = OrientationMode::coherence_direction;
};

inline constexpr double kCoherenceEpsilon = 1e-12;
inline constexpr double kMinLeadingEigenvalue = 1e-9;

class FlowField {
 public:
  FlowField() = default;
  FlowField(int width, int height)
      : width_(width),
        height_(height),
        orientation_(static_cast<std::size_t>(width) * height, Vec2::Zero()),
        coherence_(static_cast<std::size_t>(width) * height, 0.0) {}

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }

  Vec2& orientation(int x, int y) { return orientation_[index(x, y)]; }
  [[nodiscard]] const Vec2& orientation(int x, int y) const { return orientation_[index(x, y)]; }
  double& coherence(int x, int y) { return coherence_[index(x, y)]; }
  [[nodiscard]] double coherence(int x, int y) const { return coherence_[index(x, y)]; }

  /// Coherence in [0,1]; every orientation unit length or exactly zero.
  [[nodiscard]] bool satisfies_invariants() const {
    for (std::size_t i = 0; i < coherence_.size(); ++i) {
      if (!(coherence_[i] >= 0.0 && coherence_[i] <= 1.0)) return false;
      const double n = orientation_[i].norm();
      if (n != 0.0 && std::abs(n - 1.0) > 1e-6) return false;
    }
    return true;
  }

  /// Flips the sign of every orientation vector.
  [[nodiscard]] FlowField negated() const {
    FlowField out = *this;
    for (auto& v : out.orientation_) v = -v;
    return out;
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  [[nodiscard]] std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Vec2> orientation_;
  std::vector<double> coherence_;
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur of every channel, replicate borders.
inline Image gaussian_blur(const Image& src, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  Image tmp(src.width(), src.height(), src.channels());
  Image out(src.width(), src.height(), src.channels());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * src.clamped(x + i, y, c);
        tmp.at(x, y, c) = acc;
      }
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.clamped(x, y + i, c);
        out.at(x, y, c) = acc;
      }
  return out;
}

struct Eigen2 {
  double lambda1;  // larger
  double lambda2;
  Vec2 leading;    // unit eigenvector of lambda1
};

inline Eigen2 eigen_symmetric(double a, double b, double c) {
  const double mean = 0.5 * (a + c);
  const double half_diff = 0.5 * (a - c);
  const double radius = std::hypot(half_diff, b);
  const double theta = 0.5 * std::atan2(2.0 * b, a - c);
  return {mean + radius, mean - radius, Vec2(std::cos(theta), std::sin(theta))};
}

}  // namespace detail

/// Per-pixel structure tensor (channels: IxIx, IxIy, IyIy) of a single-channel
/// image. Gradients are Sobel responses of the pre-smoothed image; the
/// products are averaged with a Gaussian window. Replicate borders throughout.
inline Image structure_tensor(const Image& gray, double smoothing_sigma, double window_sigma) {
  if (gray.channels() != 1) throw std::invalid_argument("structure_tensor expects one channel");
  if (gray.width() < 3 || gray.height() < 3) throw std::invalid_argument("image must be >= 3x3");
  if (!(smoothing_sigma > 0.0 && window_sigma > 0.0))
    throw std::invalid_argument("sigmas must be positive");
  const Image smooth = detail::gaussian_blur(gray, smoothing_sigma);
  Image products(gray.width(), gray.height(), 3);
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) {
      auto s = [&](int dx, int dy) { return smooth.clamped(x + dx, y + dy); };
      const double ix =
          (s(1, -1) + 2.0 * s(1, 0) + s(1, 1) - s(-1, -1) - 2.0 * s(-1, 0) - s(-1, 1)) / 8.0;
      const double iy =
          (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1) - s(-1, -1) - 2.0 * s(0, -1) - s(1, -1)) / 8.0;
      products.at(x, y, 0) = ix * ix;
      products.at(x, y, 1) = ix * iy;
      products.at(x, y, 2) = iy * iy;
    }
  return detail::gaussian_blur(products, window_sigma);
}

/// Dominant stroke orientation and coherence of an RGB (or grayscale) image.
/// RGB input is reduced to YIQ luminance first.
inline FlowField extract_flow(const Image& image, const FlowOptions& options = {}) {
  const Image gray = image.channels() == 1 ? image : color::luminance(image);
  const Image tensor = structure_tensor(gray, options.smoothing_sigma, options.window_sigma);
  FlowField flow(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const auto e = detail::eigen_symmetric(tensor.at(x, y, 0), tensor.at(x, y, 1),
                                             tensor.at(x, y, 2));
      const double l1 = e.lambda1;
      const double l2 = std::max(e.lambda2, 0.0);
      if (l1 < kMinLeadingEigenvalue) continue;  // flat: zero orientation, zero coherence
      flow.coherence(x, y) = std::clamp((l1 - l2) / (l1 + l2 + kCoherenceEpsilon), 0.0, 1.0);
      flow.orientation(x, y) = options.mode == OrientationMode::leading_eigenvector
                                   ? e.leading
                                   : Vec2(-e.leading(1), e.leading(0));
    }
  return flow;
}

template <class T>
struct FlowSample {
  V2<T> orientation;  // unit, or zero where the interpolated tensor vanishes
  T coherence;
};

/// Bilinear sample at pixel coordinates `u` (pixel centers on integers,
/// clamped to the image). Orientation is interpolated as the outer product
/// v v^T and re-eigendecomposed, so v and -v blend without cancelling.
template <class T>
FlowSample<T> sample_flow(const FlowField& field, const V2<T>& u) {
  auto axis = [](const T& coord, int size, int& i0, int& i1) -> T {
    const double v = value_of(coord);
    if (size == 1 || v <= 0.0) {
      i0 = i1 = 0;
      return T(0.0);
    }
    if (v >= size - 1) {
      i0 = i1 = size - 1;
      return T(0.0);
    }
    i0 = std::min(static_cast<int>(std::floor(v)), size - 2);
    i1 = i0 + 1;
    return coord - double(i0);
  };
  int x0, x1, y0, y1;
  const T tx = axis(u(0), field.width(), x0, x1);
  const T ty = axis(u(1), field.height(), y0, y1);
  const T w00 = (T(1.0) - tx) * (T(1.0) - ty), w10 = tx * (T(1.0) - ty);
  const T w01 = (T(1.0) - tx) * ty, w11 = tx * ty;

  T a(0.0), b(0.0), c(0.0), coh(0.0);
  auto add = [&](const T& w, int x, int y) {
    const Vec2& v = field.orientation(x, y);
    a += w * (v(0) * v(0));
    b += w * (v(0) * v(1));
    c += w * (v(1) * v(1));
    coh += w * field.coherence(x, y);
  };
  add(w00, x0, y0);
  add(w10, x1, y0);
  add(w01, x0, y1);
  add(w11, x1, y1);

  FlowSample<T> s{V2<T>(T(0.0), T(0.0)), coh};
  const double anisotropy = std::hypot(value_of(a) - value_of(c), 2.0 * value_of(b));
  if (value_of(a) + value_of(c) < 1e-12 || anisotropy < 1e-12) return s;
  using std::atan2;
  using std::cos;
  using std::sin;
  const T theta = 0.5 * atan2(2.0 * b, a - c);
  s.orientation = V2<T>(cos(theta), sin(theta));
  return s;
}

/// Resamples a flow field to a new resolution (corner-aligned mapping).
inline FlowField resize_flow(const FlowField& field, int width, int height) {
  if (field.width() == width && field.height() == height) return field;
  FlowField out(width, height);
  const double sx = width > 1 ? double(field.width() - 1) / (width - 1) : 0.0;
  const double sy = height > 1 ? double(field.height() - 1) / (height - 1) : 0.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto s = sample_flow<double>(field, Vec2(x * sx, y * sy));
      out.orientation(x, y) = s.orientation;
      out.coherence(x, y) = s.orientation.squaredNorm() > 0.0 ? std::clamp(s.coherence, 0.0, 1.0) : 0.0;
    }
  return out;
}

/// Angle of an orientation folded into [0, 180) degrees.
inline double orientation_degrees(const Vec2& v) {
  double deg = std::atan2(v(1), v(0)) * 180.0 / std::numbers::pi;
  while (deg < 0.0) deg += 180.0;
  while (deg >= 180.0) deg -= 180.0;
  return deg;
}

/// Smallest angle between two undirected lines, in degrees, in [0, 90].
inline double line_angle_degrees(const Vec2& a, const Vec2& b) {
  const double c = std::abs(a.normalized().dot(b.normalized()));
  return std::acos(std::min(1.0, c)) * 180.0 / std::numbers::pi;
}

}  // namespace brushflow
