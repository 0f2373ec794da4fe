#pragma once

// Gaussian primitives, quaternion rotation math, pinhole cameras and the
// perspective projection with its analytic Jacobian.

#include "brushflow/numeric.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

namespace brushflow {

inline constexpr double kDefaultZNear = 1e-4;
/// Below this pre-normalisation length the projected major axis is treated
/// as parallel to the view ray.
inline constexpr double kDegenerateAxisLength = 1e-6;
/// Opacity logits are kept inside this band so sigmoid stays strictly in (0,1).
inline constexpr double kMaxOpacityLogit = 30.0;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Quaternions, stored (w, x, y, z).

// Sums are paired as (w^2 + x^2) + (y^2 + z^2) so that the axis flip
// q -> q * (0,0,0,1) = (-z, y, -x, w) negates R e1 and R e2 bit-for-bit.
template <class T>
V4<T> normalized_quaternion(const V4<T>& q) {
  using std::sqrt;
  const T n = sqrt((q(0) * q(0) + q(1) * q(1)) + (q(2) * q(2) + q(3) * q(3)));
  if (!(value_of(n) > 0.0)) throw DegenerateInput("zero-norm quaternion");
  return q / n;
}

/// Rotation matrix of q / |q|; columns are the world images of e1, e2, e3.
template <class T>
M3<T> rotation_matrix(const V4<T>& q_raw) {
  const V4<T> q = normalized_quaternion(q_raw);
  const T w = q(0), x = q(1), y = q(2), z = q(3);
  const T two(2.0);
  M3<T> r;
  r << (w * w + x * x) - (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y),
      two * (x * y + w * z), (w * w + y * y) - (x * x + z * z), two * (y * z - w * x),
      two * (x * z - w * y), two * (y * z + w * x), (w * w + z * z) - (x * x + y * y);
  return r;
}

/// Hamilton product; rotation_matrix(a * b) == rotation_matrix(a) * rotation_matrix(b).
inline Vec4 quaternion_multiply(const Vec4& a, const Vec4& b) {
  return {a(0) * b(0) - a(1) * b(1) - a(2) * b(2) - a(3) * b(3),
          a(0) * b(1) + a(1) * b(0) + a(2) * b(3) - a(3) * b(2),
          a(0) * b(2) - a(1) * b(3) + a(2) * b(0) + a(3) * b(1),
          a(0) * b(3) + a(1) * b(2) - a(2) * b(1) + a(3) * b(0)};
}

/// Quaternion whose major axis R e1 (and e2) is the negation of q's.
inline Vec4 flip_major_axis(const Vec4& q) { return {-q(3), q(2), -q(1), q(0)}; }

/// Inverse of rotation_matrix for a proper rotation; returns w >= 0.
inline Vec4 quaternion_from_matrix(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out(0) < 0.0) out = -out;
  return out.normalized();
}

// ---------------------------------------------------------------------------

struct GaussianPrimitive {
  Vec3 mean = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 log_scale = Vec3::Zero();
  Vec3 color = Vec3::Constant(0.5);
  double opacity_logit = 0.0;

  [[nodiscard]] Vec3 scale() const { return log_scale.array().exp(); }
  [[nodiscard]] double opacity() const { return sigmoid(opacity_logit); }

  static GaussianPrimitive make(const Vec3& mean, const Vec4& rotation, const Vec3& scale,
                                const Vec3& color, double opacity) {
    if ((scale.array() <= 0.0).any()) throw std::invalid_argument("scales must be positive");
    if (!(opacity > 0.0 && opacity < 1.0)) throw std::invalid_argument("opacity must be in (0,1)");
    GaussianPrimitive g;
    g.mean = mean;
    g.rotation = normalized_quaternion(rotation);
    g.log_scale = scale.array().log();
    g.color = color;
    g.opacity_logit = logit(opacity);
    return g;
  }
};

using Scene = std::vector<GaussianPrimitive>;

/// Local canonical axes of a primitive and their world images.
struct Basis {
  static Vec3 e1() { return Vec3::UnitX(); }
  static Vec3 e2() { return Vec3::UnitY(); }
  static Vec3 e3() { return Vec3::UnitZ(); }
  Mat3 world_axes;  // columns: R(q) e1, R(q) e2, R(q) e3

  [[nodiscard]] Vec3 major() const { return world_axes.col(0); }
  [[nodiscard]] Vec3 minor() const { return world_axes.col(2); }
};

inline Basis basis_of(const GaussianPrimitive& g) { return {rotation_matrix(g.rotation)}; }

/// Reorders the local axes so scales are descending (e1 major, e3 minor) while
/// leaving the world-space covariance untouched.
inline void sort_axes(GaussianPrimitive& g) {
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return g.log_scale(a) > g.log_scale(b); });
  if (order == std::array<int, 3>{0, 1, 2}) return;
  const Mat3 r = rotation_matrix(g.rotation);
  Mat3 permuted;
  Vec3 scales;
  for (int k = 0; k < 3; ++k) {
    permuted.col(k) = r.col(order[k]);
    scales(k) = g.log_scale(order[k]);
  }
  if (permuted.determinant() < 0.0) permuted.col(2) = -permuted.col(2);
  g.rotation = quaternion_from_matrix(permuted);
  g.log_scale = scales;
}

// ---------------------------------------------------------------------------

struct Camera {
  std::string name;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();
  Vec2 focal = Vec2(1.0, 1.0);
  Vec2 principal_point = Vec2::Zero();
  int width = 1;
  int height = 1;
  double z_near = kDefaultZNear;

  [[nodiscard]] Vec3 center() const { return -rotation.transpose() * translation; }

  [[nodiscard]] double orthonormality_residual() const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  }

  void validate() const {
    if (orthonormality_residual() >= 1e-9)
      throw std::invalid_argument("camera rotation is not orthonormal");
    if (rotation.determinant() <= 0.0)
      throw std::invalid_argument("camera rotation is not proper");
    if (!(focal.array() > 0.0).all()) throw std::invalid_argument("focal must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("resolution must be positive");
  }

  /// Pinhole camera at `eye` looking at `target`; image y grows along -up.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_px,
                        int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right;
    cam.rotation.row(1) = down;
    cam.rotation.row(2) = forward;
    cam.translation = -cam.rotation * eye;
    cam.focal = Vec2(focal_px, focal_px);
    cam.principal_point = Vec2((width - 1) / 2.0, (height - 1) / 2.0);
    cam.width = width;
    cam.height = height;
    return cam;
  }
};

template <class T>
V3<T> to_camera_frame(const Camera& cam, const V3<T>& p) {
  return cam.rotation.cast<T>() * p + cam.translation.cast<T>();
}

template <class T>
struct ProjectedPoint {
  V2<T> pixel;
  T depth;
};

/// Perspective projection; std::nullopt marks a culled (behind z_near) point.
template <class T>
std::optional<ProjectedPoint<T>> project_point(const Camera& cam, const V3<T>& p) {
  const V3<T> c = to_camera_frame(cam, p);
  if (!(value_of(c(2)) > cam.z_near)) return std::nullopt;
  const T inv_z = T(1.0) / c(2);
  V2<T> u;
  u(0) = cam.focal(0) * c(0) * inv_z + cam.principal_point(0);
  u(1) = cam.focal(1) * c(1) * inv_z + cam.principal_point(1);
  return ProjectedPoint<T>{u, c(2)};
}

/// d project_point / d p (world). Zero for culled points.
template <class T>
M23<T> projection_jacobian(const Camera& cam, const V3<T>& p) {
  const V3<T> c = to_camera_frame(cam, p);
  M23<T> j = M23<T>::Zero();
  if (!(value_of(c(2)) > cam.z_near)) return j;
  const T inv_z = T(1.0) / c(2);
  M23<T> perspective;
  perspective << cam.focal(0) * inv_z, T(0.0), -cam.focal(0) * c(0) * inv_z * inv_z, T(0.0),
      cam.focal(1) * inv_z, -cam.focal(1) * c(1) * inv_z * inv_z;
  j = perspective * cam.rotation.cast<T>();
  return j;
}

/// Unit image-plane direction of the world major axis R(q) e1 at `mean`, or
/// std::nullopt when culled or when the axis projects to (near) zero length.
template <class T>
std::optional<V2<T>> project_axis(const Camera& cam, const V3<T>& mean, const V4<T>& rotation) {
  const V3<T> c = to_camera_frame(cam, mean);
  if (!(value_of(c(2)) > cam.z_near)) return std::nullopt;
  const V2<T> raw = projection_jacobian(cam, mean) * rotation_matrix(rotation).col(0);
  using std::sqrt;
  const T len = sqrt(raw.squaredNorm());
  if (!(value_of(len) >= kDegenerateAxisLength)) return std::nullopt;
  return V2<T>(raw / len);
}

inline std::optional<Vec2> project_axis(const Camera& cam, const GaussianPrimitive& g) {
  return project_axis<double>(cam, g.mean, g.rotation);
}

}  // namespace brushflow
