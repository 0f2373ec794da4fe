#pragma once

// Brute-force differentiable Gaussian splatting.
//
// Forward: every surviving footprint is depth sorted (ties by primitive
// index) and composited front to back with peak-normalised densities
//   C = sum_k c_k a_k T_k,  a_k = g_k alpha_k,  T_k = prod_{j<k} (1 - a_j),
// g = exp(-m/2) for squared Mahalanobis distance m <= 7, smootherstep-tapered
// to exactly 0 at m = 9 (the 3-sigma cutoff) so the density stays C2.
// Backward: exact reverse mode of the compositing sum per pixel, reduced to
// per-primitive gradients on the footprint (center, cov2d, color, opacity),
// then chained to mean / rotation / log-scale with forward-mode jets through
// footprint_geometry().

#include "brushflow/gs_core.hpp"
#include "brushflow/image.hpp"

#include <algorithm>
#include <numeric>
#include <thread>
#include <vector>

namespace brushflow {

/// Added to the cov2d diagonal (px^2).
inline constexpr double kDilationFloor = 0.3;
/// Squared Mahalanobis radius beyond which a footprint contributes nothing.
inline constexpr double kCutoffMahalanobisSq = 9.0;
/// Start of the smootherstep taper that takes the density to zero (with zero
/// slope and curvature) at the cutoff. Inside it the density is the plain exp(-m/2).
inline constexpr double kTaperStartMahalanobisSq = 7.0;

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class T>
struct FootprintGeometry {
  V2<T> center;
  M2<T> cov2d;
  T depth;
};

/// Screen-space center and covariance J Sigma J^T (+ dilation floor) of a
/// primitive; std::nullopt when the mean is behind the near plane.
template <class T>
std::optional<FootprintGeometry<T>> footprint_geometry(const Camera& cam, const V3<T>& mean,
                                                       const V4<T>& rotation,
                                                       const V3<T>& log_scale) {
  const auto projected = project_point(cam, mean);
  if (!projected) return std::nullopt;
  const M3<T> r = rotation_matrix(rotation);
  V3<T> variances;
  using std::exp;
  for (int i = 0; i < 3; ++i) variances(i) = exp(2.0 * log_scale(i));
  const M3<T> sigma = r * variances.asDiagonal() * r.transpose();
  const M23<T> j = projection_jacobian(cam, mean);
  M2<T> cov = j * sigma * j.transpose();
  cov(0, 0) += kDilationFloor;
  cov(1, 1) += kDilationFloor;
  return FootprintGeometry<T>{projected->pixel, cov, projected->depth};
}

struct Footprint2D {
  Vec2 center;
  Mat2 cov2d;
  Mat2 conic;  // cov2d^-1
  double depth = 0.0;
  Vec3 color;
  double alpha = 0.0;
  int min_x = 0, max_x = -1, min_y = 0, max_y = -1;  // inclusive pixel bounds

  [[nodiscard]] bool covers(int x, int y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
};

/// Projects a primitive to its 2D footprint; std::nullopt when culled (behind
/// the camera, or the 3-sigma extent misses the image entirely).
inline std::optional<Footprint2D> project_gaussian(const Camera& cam, const GaussianPrimitive& g) {
  const auto geo = footprint_geometry<double>(cam, g.mean, g.rotation, g.log_scale);
  if (!geo) return std::nullopt;
  Footprint2D f;
  f.center = geo->center;
  f.cov2d = geo->cov2d;
  f.conic = geo->cov2d.inverse();
  f.depth = geo->depth;
  f.color = g.color;
  f.alpha = g.opacity();
  const double trace_half = 0.5 * (f.cov2d(0, 0) + f.cov2d(1, 1));
  const double det = f.cov2d.determinant();
  const double lambda_max = trace_half + std::sqrt(std::max(0.0, trace_half * trace_half - det));
  const double radius = 3.0 * std::sqrt(lambda_max);
  if (!std::isfinite(radius) || !f.center.allFinite()) return std::nullopt;
  const double lo_x = std::ceil(f.center(0) - radius), hi_x = std::floor(f.center(0) + radius);
  const double lo_y = std::ceil(f.center(1) - radius), hi_y = std::floor(f.center(1) + radius);
  if (hi_x < 0.0 || hi_y < 0.0 || lo_x > cam.width - 1 || lo_y > cam.height - 1) return std::nullopt;
  f.min_x = static_cast<int>(std::max(lo_x, 0.0));
  f.max_x = static_cast<int>(std::min(hi_x, double(cam.width - 1)));
  f.min_y = static_cast<int>(std::max(lo_y, 0.0));
  f.max_y = static_cast<int>(std::min(hi_y, double(cam.height - 1)));
  return f;
}

/// Per-primitive gradient buffers, all indexed like the scene.
struct SceneGradients {
  std::vector<Vec3> mean;
  std::vector<Vec4> rotation;   // w.r.t. the raw (unnormalised) quaternion
  std::vector<Vec3> log_scale;
  std::vector<Vec3> color;
  std::vector<double> opacity_logit;
  std::vector<Vec2> screen_center;  // dL/du of the projected mean, per call

  SceneGradients() = default;
  explicit SceneGradients(std::size_t n) { resize(n); }

  void resize(std::size_t n) {
    mean.assign(n, Vec3::Zero());
    rotation.assign(n, Vec4::Zero());
    log_scale.assign(n, Vec3::Zero());
    color.assign(n, Vec3::Zero());
    opacity_logit.assign(n, 0.0);
    screen_center.assign(n, Vec2::Zero());
  }
  [[nodiscard]] std::size_t size() const { return mean.size(); }

  SceneGradients& operator+=(const SceneGradients& o) {
    if (o.size() != size()) throw std::invalid_argument("gradient buffer size mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      mean[i] += o.mean[i];
      rotation[i] += o.rotation[i];
      log_scale[i] += o.log_scale[i];
      color[i] += o.color[i];
      opacity_logit[i] += o.opacity_logit[i];
      screen_center[i] += o.screen_center[i];
    }
    return *this;
  }

  [[nodiscard]] bool all_finite() const {
    for (std::size_t i = 0; i < size(); ++i)
      if (!mean[i].allFinite() || !rotation[i].allFinite() || !log_scale[i].allFinite() ||
          !color[i].allFinite() || !std::isfinite(opacity_logit[i]))
        return false;
    return true;
  }

  friend bool operator==(const SceneGradients&, const SceneGradients&) = default;
};

/// Adds a weighted geometry-jet gradient (derivatives over mean, raw
/// quaternion, log-scale) into the buffers of primitive i.
inline void add_geometry_gradient(SceneGradients& grads, std::size_t i,
                                  const Eigen::Matrix<double, kGeometryParams, 1>& d) {
  grads.mean[i] += d.segment<3>(0);
  grads.rotation[i] += d.segment<4>(3);
  grads.log_scale[i] += d.segment<3>(7);
}

/// Seeds jets for one primitive's geometry parameters.
struct GeometryJets {
  V3<GeoJet> mean;
  V4<GeoJet> rotation;
  V3<GeoJet> log_scale;

  explicit GeometryJets(const GaussianPrimitive& g) {
    for (int i = 0; i < 3; ++i) mean(i) = GeoJet(g.mean(i), i);
    for (int i = 0; i < 4; ++i) rotation(i) = GeoJet(g.rotation(i), 3 + i);
    for (int i = 0; i < 3; ++i) log_scale(i) = GeoJet(g.log_scale(i), 7 + i);
  }
};

/// Fingerprint of (scene, camera), used to pair backward calls with their
/// forward state.
inline std::uint64_t render_state_key(const Scene& scene, const Camera& cam) {
  Fingerprint fp;
  fp.add(static_cast<std::int64_t>(scene.size()));
  for (const auto& g : scene) {
    fp.add(g.mean);
    fp.add(g.rotation);
    fp.add(g.log_scale);
    fp.add(g.color);
    fp.add(g.opacity_logit);
  }
  fp.add(cam.rotation);
  fp.add(cam.translation);
  fp.add(cam.focal);
  fp.add(cam.principal_point);
  fp.add(static_cast<std::int64_t>(cam.width));
  fp.add(static_cast<std::int64_t>(cam.height));
  fp.add(cam.z_near);
  return fp.value();
}

struct RenderOutput {
  Image image;      // RGB
  Image alpha_map;  // 1 - final transmittance
  std::uint64_t state_key = 0;
};

namespace detail {

struct PreparedScene {
  std::vector<std::optional<Footprint2D>> footprints;  // indexed like the scene
  std::vector<std::size_t> order;                      // surviving, front to back
};

inline PreparedScene prepare(const Scene& scene, const Camera& cam) {
  PreparedScene p;
  p.footprints.reserve(scene.size());
  for (const auto& g : scene) p.footprints.push_back(project_gaussian(cam, g));
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (p.footprints[i]) p.order.push_back(i);
  std::stable_sort(p.order.begin(), p.order.end(), [&](std::size_t a, std::size_t b) {
    return p.footprints[a]->depth < p.footprints[b]->depth;
  });
  return p;
}

struct Density {
  double value = 0.0;
  double d_mahalanobis = 0.0;  // d value / d m, m = offset^T conic offset
};

/// Peak-normalised density as a function of the squared Mahalanobis distance.
inline Density density_of_mahalanobis(double m) {
  if (m >= kCutoffMahalanobisSq) return {};
  const double e = std::exp(-0.5 * m);
  if (m <= kTaperStartMahalanobisSq) return {e, -0.5 * e};
  const double t = (m - kTaperStartMahalanobisSq) / (kCutoffMahalanobisSq - kTaperStartMahalanobisSq);
  // 1 - smootherstep(t): value, slope and curvature continuous at both ends.
  const double s = 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0);
  const double ds = -30.0 * t * t * (1.0 - t) * (1.0 - t) /
                    (kCutoffMahalanobisSq - kTaperStartMahalanobisSq);
  return {e * s, -0.5 * e * s + e * ds};
}

/// Density of footprint f at pixel (x, y); 0 beyond the 3-sigma cutoff.
inline Density footprint_density(const Footprint2D& f, int x, int y, Vec2& offset) {
  if (!f.covers(x, y)) return {};
  offset = Vec2(x, y) - f.center;
  return density_of_mahalanobis(offset.dot(f.conic * offset));
}

inline constexpr int kRowsPerBlock = 8;

/// Runs fn(block) over fixed row blocks. Blocks are independent; callers merge
/// per-block results in block order so output is independent of worker count.
template <class Fn>
void for_each_row_block(int height, Fn&& fn) {
  const int blocks = (height + kRowsPerBlock - 1) / kRowsPerBlock;
  const int workers =
      std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, std::max(blocks, 1));
  if (workers <= 1) {
    for (int b = 0; b < blocks; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int b = w; b < blocks; b += workers) fn(b);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline RenderOutput render(const Scene& scene, const Camera& cam) {
  if (cam.width <= 0 || cam.height <= 0) throw std::invalid_argument("empty image dimensions");
  const auto prepared = detail::prepare(scene, cam);
  RenderOutput out{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1),
                   render_state_key(scene, cam)};
  detail::for_each_row_block(cam.height, [&](int block) {
    const int y_end = std::min(cam.height, (block + 1) * detail::kRowsPerBlock);
    for (int y = block * detail::kRowsPerBlock; y < y_end; ++y)
      for (int x = 0; x < cam.width; ++x) {
        Vec3 color = Vec3::Zero();
        double transmittance = 1.0;
        for (const std::size_t i : prepared.order) {
          const Footprint2D& f = *prepared.footprints[i];
          Vec2 offset;
          const double g = detail::footprint_density(f, x, y, offset).value;
          if (g == 0.0) continue;
          const double a = g * f.alpha;
          color += f.color * (a * transmittance);
          transmittance *= 1.0 - a;
        }
        for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = color(c);
        out.alpha_map.at(x, y) = 1.0 - transmittance;
      }
  });
  return out;
}

/// Gradients of a loss with image gradient `dloss_dimage` (RGB) with respect
/// to every primitive parameter. Culled primitives get exact zeros.
inline SceneGradients render_backward(const RenderOutput& forward, const Scene& scene,
                                      const Camera& cam, const Image& dloss_dimage) {
  if (forward.state_key != render_state_key(scene, cam))
    throw ContractViolation("render_backward: scene/camera differ from the forward render");
  if (dloss_dimage.width() != cam.width || dloss_dimage.height() != cam.height ||
      dloss_dimage.channels() != 3)
    throw std::invalid_argument("render_backward: loss gradient has the wrong shape");

  const auto prepared = detail::prepare(scene, cam);
  const std::size_t n = scene.size();

  struct FootprintGrads {
    std::vector<Vec2> center;
    std::vector<Mat2> conic;
    std::vector<Vec3> color;
    std::vector<double> alpha;
  };
  const int blocks = (cam.height + detail::kRowsPerBlock - 1) / detail::kRowsPerBlock;
  std::vector<FootprintGrads> per_block(static_cast<std::size_t>(blocks));

  detail::for_each_row_block(cam.height, [&](int block) {
    FootprintGrads& acc = per_block[block];
    acc.center.assign(n, Vec2::Zero());
    acc.conic.assign(n, Mat2::Zero());
    acc.color.assign(n, Vec3::Zero());
    acc.alpha.assign(n, 0.0);
    struct Hit {
      std::size_t index;
      double g, dg_dm, a, transmittance;
      Vec2 offset;
    };
    std::vector<Hit> hits;
    const int y_end = std::min(cam.height, (block + 1) * detail::kRowsPerBlock);
    for (int y = block * detail::kRowsPerBlock; y < y_end; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec3 dcolor(dloss_dimage.at(x, y, 0), dloss_dimage.at(x, y, 1),
                          dloss_dimage.at(x, y, 2));
        if (dcolor.isZero(0.0)) continue;
        hits.clear();
        double transmittance = 1.0;
        for (const std::size_t i : prepared.order) {
          const Footprint2D& f = *prepared.footprints[i];
          Vec2 offset;
          const auto density = detail::footprint_density(f, x, y, offset);
          if (density.value == 0.0) continue;
          const double a = density.value * f.alpha;
          hits.push_back({i, density.value, density.d_mahalanobis, a, transmittance, offset});
          transmittance *= 1.0 - a;
        }
        // behind: color composited from the next hit onwards, relative to its T.
        Vec3 behind = Vec3::Zero();
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
          const Footprint2D& f = *prepared.footprints[it->index];
          acc.color[it->index] += dcolor * (it->a * it->transmittance);
          const double da = it->transmittance * dcolor.dot(f.color - behind);
          behind = f.color * it->a + behind * (1.0 - it->a);
          acc.alpha[it->index] += da * it->g;
          // m = d^T Q d with d = p - u: dm/du = -2 Q d, dm/dQ = d d^T.
          const double dm = da * f.alpha * it->dg_dm;
          acc.center[it->index] += (-2.0 * dm) * (f.conic * it->offset);
          acc.conic[it->index] += dm * (it->offset * it->offset.transpose());
        }
      }
  });

  FootprintGrads total{std::vector<Vec2>(n, Vec2::Zero()), std::vector<Mat2>(n, Mat2::Zero()),
                       std::vector<Vec3>(n, Vec3::Zero()), std::vector<double>(n, 0.0)};
  for (const auto& b : per_block)
    for (std::size_t i = 0; i < n; ++i) {
      total.center[i] += b.center[i];
      total.conic[i] += b.conic[i];
      total.color[i] += b.color[i];
      total.alpha[i] += b.alpha[i];
    }

  SceneGradients grads(n);
  for (const std::size_t i : prepared.order) {
    const Footprint2D& f = *prepared.footprints[i];
    const GaussianPrimitive& g = scene[i];
    grads.color[i] = total.color[i];
    const double alpha = f.alpha;
    grads.opacity_logit[i] = total.alpha[i] * alpha * (1.0 - alpha);
    grads.screen_center[i] = total.center[i];
    const Mat2 dcov = -f.conic * total.conic[i] * f.conic;
    const GeometryJets jets(g);
    const auto geo = footprint_geometry<GeoJet>(cam, jets.mean, jets.rotation, jets.log_scale);
    Eigen::Matrix<double, kGeometryParams, 1> d = Eigen::Matrix<double, kGeometryParams, 1>::Zero();
    for (int k = 0; k < 2; ++k) d += total.center[i](k) * geo->center(k).v;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) d += dcov(r, c) * geo->cov2d(r, c).v;
    add_geometry_gradient(grads, i, d);
  }
  return grads;
}

/// Backward for one view, added onto `accumulator` after being computed in
/// isolation, so accumulating views one by one equals summing per-view results.
inline void accumulate_render_backward(SceneGradients& accumulator, const RenderOutput& forward,
                                       const Scene& scene, const Camera& cam,
                                       const Image& dloss_dimage) {
  if (accumulator.size() != scene.size()) accumulator.resize(scene.size());
  accumulator += render_backward(forward, scene, cam, dloss_dimage);
}

/// Mean over surviving primitives of the projected footprint elongation
/// sqrt(lambda_max / lambda_min) of cov2d. Returns 0 when nothing survives.
inline double mean_elongation_ratio(const Scene& scene, const Camera& cam) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& g : scene) {
    const auto f = project_gaussian(cam, g);
    if (!f) continue;
    const Eigen::SelfAdjointEigenSolver<Mat2> es(f->cov2d);
    sum += std::sqrt(es.eigenvalues()(1) / es.eigenvalues()(0));
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace brushflow
