#pragma once

// Fixed-size linear algebra aliases and scalar helpers shared by every module.
// Geometry code is written generically over the scalar so the same expression
// can be evaluated on doubles or on forward-mode jets.

#include <ceres/jet.h>

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>

namespace brushflow {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

template <class T>
using V2 = Eigen::Matrix<T, 2, 1>;
template <class T>
using V3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using V4 = Eigen::Matrix<T, 4, 1>;
template <class T>
using M2 = Eigen::Matrix<T, 2, 2>;
template <class T>
using M3 = Eigen::Matrix<T, 3, 3>;
template <class T>
using M23 = Eigen::Matrix<T, 2, 3>;

/// Number of differentiable parameters of one primitive's geometry:
/// mean (3), raw quaternion (4), log-scale (3).
inline constexpr int kGeometryParams = 10;
using GeoJet = ceres::Jet<double, kGeometryParams>;

inline double value_of(double x) { return x; }
template <class T, int N>
double value_of(const ceres::Jet<T, N>& x) {
  return x.a;
}

/// Raised when an input has no meaningful interpretation (zero quaternion,
/// singular matrix, ...).
class DegenerateInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// FNV-1a over raw bytes; used to fingerprint forward render state.
class Fingerprint {
 public:
  void add_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void add(double v) { add_bytes(&v, sizeof v); }
  void add(std::int64_t v) { add_bytes(&v, sizeof v); }
  template <class Derived>
  void add(const Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) add(static_cast<double>(m(i)));
  }
  [[nodiscard]] std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace brushflow
