#pragma once

// Interleaved floating-point rasters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace brushflow {

class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels <= 0) throw std::invalid_argument("bad image shape");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }
  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  [[nodiscard]] double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  /// Replicated-border access.
  [[nodiscard]] double clamped(int x, int y, int c = 0) const {
    return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
  }

  std::vector<double>& data() { return data_; }
  [[nodiscard]] const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  [[nodiscard]] std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

/// Bilinear resize with pixel centers mapped corner-to-corner
/// (x_src = x_dst * (w_src - 1) / (w_dst - 1)).
inline Image resize_bilinear(const Image& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Image out(width, height, src.channels());
  const double sx = width > 1 ? double(src.width() - 1) / (width - 1) : 0.0;
  const double sy = height > 1 ? double(src.height() - 1) / (height - 1) : 0.0;
  for (int y = 0; y < height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(std::floor(fy)), src.height() - 1);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(std::floor(fx)), src.width() - 1);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        const double top = (1 - tx) * src.at(x0, y0, c) + tx * src.at(x1, y0, c);
        const double bottom = (1 - tx) * src.at(x0, y1, c) + tx * src.at(x1, y1, c);
        out.at(x, y, c) = (1 - ty) * top + ty * bottom;
      }
    }
  }
  return out;
}

}  // namespace brushflow
