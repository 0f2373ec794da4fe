#pragma once

// Stylization energies.
//
//   align   per primitive  coh * (1 - |<a, v>|), a = normalised projected major
//           axis, (v, coh) the flow sampled at the projected center; mean over
//           contributing primitives.
//   aniso   per primitive  coh * (s_perp / s_par + max(0, rho - s_par / s_perp))
//           with s_par^2 = v^T cov2d v and s_perp^2 the same across v.
//   style   sum over layers of |G(render_Y) - G(style_Y)|_F^2,
//           G = F F^T / (H W) (channels x channels).
//   chroma  0.5 (|mu_ab - mu_ab_ref|_1 + |sigma_ab - sigma_ab_ref|_1) in Lab.
//   content mean squared feature difference at one layer, luminance only.
//
// Geometry terms add their gradients straight into SceneGradients; image
// terms return d loss / d render (RGB) for the renderer backward.

#include "brushflow/colorspace.hpp"
#include "brushflow/features.hpp"
#include "brushflow/flowfield.hpp"
#include "brushflow/splatter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace brushflow {

struct LossWeights {
  double w_align = 1.0;
  double w_aniso = 0.1;
  double w_style = 1.0;
  double w_chroma = 0.01;
  double w_content = 0.1;
  double aniso_target_ratio = 3.0;
  double tangential_lambda = 0.9;

  void validate() const {
    for (const double w : {w_align, w_aniso, w_style, w_chroma, w_content})
      if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
    if (!(aniso_target_ratio > 1.0)) throw std::invalid_argument("aniso_target_ratio must exceed 1");
    if (!(tangential_lambda >= 0.0 && tangential_lambda <= 1.0))
      throw std::invalid_argument("tangential_lambda must lie in [0,1]");
  }
};

struct GeometryLoss {
  double value = 0.0;
  std::size_t contributors = 0;
  [[nodiscard]] bool no_contribution() const { return contributors == 0; }
};

struct ImageLoss {
  double value = 0.0;
  Image gradient;  // d loss / d render, RGB
};

/// Per-primitive alignment term; invariant to the sign of either direction.
template <class T>
T alignment_term(const V2<T>& axis, const V2<T>& flow, const T& coherence) {
  using std::abs;
  return coherence * (T(1.0) - abs(axis.dot(flow)));
}

namespace detail {

using GeoGradient = Eigen::Matrix<double, kGeometryParams, 1>;

/// Shared driver for the per-primitive geometry losses. term(jets, center,
/// sample) returns the jet-valued term or std::nullopt to skip.
template <class Term>
GeometryLoss per_primitive_mean(const Scene& scene, const Camera& cam, const FlowField& flow,
                                SceneGradients* grads, double weight, Term&& term) {
  if (flow.width() != cam.width || flow.height() != cam.height)
    throw std::invalid_argument("flow resolution must match the camera resolution");
  std::vector<std::pair<std::size_t, GeoGradient>> contributions;
  GeometryLoss loss;
  double sum = 0.0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!project_gaussian(cam, scene[i])) continue;
    const GeometryJets jets(scene[i]);
    const auto center = project_point<GeoJet>(cam, jets.mean);
    const auto sample = sample_flow<GeoJet>(flow, center->pixel);
    if (!(sample.coherence.a > 0.0) || sample.orientation.squaredNorm().a == 0.0) continue;
    const std::optional<GeoJet> t = term(jets, sample);
    if (!t) continue;
    sum += t->a;
    ++loss.contributors;
    if (grads) contributions.emplace_back(i, t->v);
  }
  if (loss.contributors == 0) return loss;
  const double n = static_cast<double>(loss.contributors);
  loss.value = sum / n;
  if (grads) {
    if (grads->size() != scene.size()) grads->resize(scene.size());
    for (const auto& [i, d] : contributions) add_geometry_gradient(*grads, i, GeoGradient(d * (weight / n)));
  }
  return loss;
}

}  // namespace detail

/// Flow alignment of projected major axes. Gradients (scaled by `weight`)
/// reach rotation through the projected axis and mean through the projection
/// Jacobian and the flow sample point.
inline GeometryLoss align_loss(const Scene& scene, const Camera& cam, const FlowField& flow,
                               SceneGradients* grads = nullptr, double weight = 1.0) {
  return detail::per_primitive_mean(
      scene, cam, flow, grads, weight,
      [&](const GeometryJets& jets, const FlowSample<GeoJet>& sample) -> std::optional<GeoJet> {
        const auto axis = project_axis<GeoJet>(cam, jets.mean, jets.rotation);
        if (!axis) return std::nullopt;
        return alignment_term<GeoJet>(*axis, sample.orientation, sample.coherence);
      });
}

/// Internal weights of the two anisotropy sub-terms.
struct AnisoTermWeights {
  double across = 1.0;      // s_perp / s_par
  double elongation = 1.0;  // max(0, rho - s_par / s_perp)
};

/// Footprint anisotropy relative to the local flow: penalises extent across
/// the stroke and rewards elongation along it up to `target_ratio`.
inline GeometryLoss aniso_loss(const Scene& scene, const Camera& cam, const FlowField& flow,
                               double target_ratio, SceneGradients* grads = nullptr,
                               double weight = 1.0, AnisoTermWeights terms = {}) {
  return detail::per_primitive_mean(
      scene, cam, flow, grads, weight,
      [&](const GeometryJets& jets, const FlowSample<GeoJet>& sample) -> std::optional<GeoJet> {
        const auto geo = footprint_geometry<GeoJet>(cam, jets.mean, jets.rotation, jets.log_scale);
        const V2<GeoJet>& v = sample.orientation;
        const V2<GeoJet> across(-v(1), v(0));
        using std::sqrt;
        const GeoJet s_par = sqrt(v.dot(geo->cov2d * v));
        const GeoJet s_perp = sqrt(across.dot(geo->cov2d * across));
        GeoJet t = terms.across * (s_perp / s_par);
        const GeoJet shortfall = target_ratio - s_par / s_perp;
        if (shortfall.a > 0.0) t += terms.elongation * shortfall;
        return sample.coherence * t;
      });
}

// ---------------------------------------------------------------------------
// Image-space losses.

namespace detail {

/// Y plane of an RGB raster (no clamping; the loss path differentiates it).
inline Image luma_of(const Image& rgb) {
  Image y(rgb.width(), rgb.height(), 1);
  const Vec3& w = color::luma_weights();
  for (int py = 0; py < rgb.height(); ++py)
    for (int px = 0; px < rgb.width(); ++px)
      y.at(px, py) = w(0) * rgb.at(px, py, 0) + w(1) * rgb.at(px, py, 1) + w(2) * rgb.at(px, py, 2);
  return y;
}

/// Y plane from a YIQ raster: channel 0 only.
inline Image y_channel(const Image& yiq) {
  Image y(yiq.width(), yiq.height(), 1);
  for (int py = 0; py < yiq.height(); ++py)
    for (int px = 0; px < yiq.width(); ++px) y.at(px, py) = yiq.at(px, py, 0);
  return y;
}

/// Spreads d loss / d Y to RGB along the luminance row.
inline Image luma_gradient_to_rgb(const Image& dy) {
  Image out(dy.width(), dy.height(), 3);
  const Vec3& w = color::luma_weights();
  for (int py = 0; py < dy.height(); ++py)
    for (int px = 0; px < dy.width(); ++px)
      for (int c = 0; c < 3; ++c) out.at(px, py, c) = w(c) * dy.at(px, py);
  return out;
}

inline Eigen::MatrixXd gram(const FeatureMap& f) {
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      f.data.data(), f.channels, static_cast<Eigen::Index>(f.spatial()));
  return (m * m.transpose()) / static_cast<double>(f.spatial());
}

}  // namespace detail

/// Precomputed Gram matrices of a style image's luminance features.
class StyleTarget {
 public:
  StyleTarget(const Image& style_rgb, int width, int height, const FeatureExtractor& fx) {
    const Image resized = resize_bilinear(style_rgb, width, height);
    for (const auto& f : fx.forward(detail::luma_of(resized))) grams_.push_back(detail::gram(f));
    width_ = width;
    height_ = height;
  }
  [[nodiscard]] const std::vector<Eigen::MatrixXd>& grams() const { return grams_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }

 private:
  std::vector<Eigen::MatrixXd> grams_;
  int width_ = 0;
  int height_ = 0;
};

/// Style loss on a luminance plane. Gradient is d loss / d Y.
inline ImageLoss style_loss_on_luma(const Image& luma, const StyleTarget& target,
                                    const FeatureExtractor& fx) {
  if (luma.width() != target.width() || luma.height() != target.height())
    throw std::invalid_argument("style target resolution differs from the render");
  const auto features = fx.forward(luma);
  ImageLoss loss;
  std::vector<FeatureMap> dfeatures(features.size());
  for (std::size_t l = 0; l < features.size(); ++l) {
    const FeatureMap& f = features[l];
    const Eigen::MatrixXd diff = detail::gram(f) - target.grams()[l];
    loss.value += diff.squaredNorm();
    // d |G - S|^2 / dF = 4 (G - S) F / (H W) for symmetric G.
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> fm(
        f.data.data(), f.channels, static_cast<Eigen::Index>(f.spatial()));
    dfeatures[l] = FeatureMap(f.channels, f.width, f.height);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dm(
        dfeatures[l].data.data(), f.channels, static_cast<Eigen::Index>(f.spatial()));
    dm = (4.0 / static_cast<double>(f.spatial())) * diff * fm;
  }
  loss.gradient = fx.backward(luma, dfeatures);
  return loss;
}

/// Style loss of a YIQ render: only channel 0 (Y) is read.
inline ImageLoss style_loss_yiq(const Image& render_yiq, const StyleTarget& target,
                                const FeatureExtractor& fx) {
  return style_loss_on_luma(detail::y_channel(render_yiq), target, fx);
}

/// Style loss of an RGB render restricted to luminance; the RGB gradient is
/// nonzero only along (0.299, 0.587, 0.114).
inline ImageLoss style_loss_luma(const Image& render_rgb, const StyleTarget& target,
                                 const FeatureExtractor& fx) {
  ImageLoss loss = style_loss_on_luma(detail::luma_of(render_rgb), target, fx);
  loss.gradient = detail::luma_gradient_to_rgb(loss.gradient);
  return loss;
}

inline ImageLoss style_loss_luma(const Image& render_rgb, const Image& style_rgb,
                                 const FeatureExtractor& fx) {
  return style_loss_luma(render_rgb, StyleTarget(style_rgb, render_rgb.width(), render_rgb.height(), fx),
                         fx);
}

inline constexpr int kDefaultContentLayer = 1;

/// Features of a content reference at one layer.
class ContentTarget {
 public:
  ContentTarget(const Image& content_rgb, int width, int height, const FeatureExtractor& fx,
                int layer = kDefaultContentLayer)
      : layer_(layer), width_(width), height_(height) {
    if (layer < 0 || static_cast<std::size_t>(layer) >= fx.layer_count())
      throw std::invalid_argument("content layer out of range");
    features_ = fx.forward(detail::luma_of(resize_bilinear(content_rgb, width, height)))[layer];
  }
  [[nodiscard]] const FeatureMap& features() const { return features_; }
  [[nodiscard]] int layer() const { return layer_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }

 private:
  FeatureMap features_;
  int layer_;
  int width_;
  int height_;
};

inline ImageLoss content_loss(const Image& render_rgb, const ContentTarget& target,
                              const FeatureExtractor& fx) {
  if (render_rgb.width() != target.width() || render_rgb.height() != target.height())
    throw std::invalid_argument("content target resolution differs from the render");
  const Image luma = detail::luma_of(render_rgb);
  const auto features = fx.forward(luma);
  const FeatureMap& f = features[target.layer()];
  const double n = static_cast<double>(f.data.size());
  std::vector<FeatureMap> dfeatures(features.size());
  dfeatures[target.layer()] = FeatureMap(f.channels, f.width, f.height);
  ImageLoss loss;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const double d = f.data[i] - target.features().data[i];
    loss.value += d * d / n;
    dfeatures[target.layer()].data[i] = 2.0 * d / n;
  }
  loss.gradient = detail::luma_gradient_to_rgb(fx.backward(luma, dfeatures));
  return loss;
}

inline ImageLoss content_loss(const Image& render_rgb, const Image& content_rgb,
                              const FeatureExtractor& fx, int layer = kDefaultContentLayer) {
  return content_loss(render_rgb,
                      ContentTarget(content_rgb, render_rgb.width(), render_rgb.height(), fx, layer), fx);
}

/// Lab chroma-statistics loss. Subgradient of |.| at 0 is taken as 0.
inline ImageLoss chroma_loss(const Image& render_rgb, const color::ChromaStats& reference) {
  if (render_rgb.pixel_count() == 0) throw std::invalid_argument("chroma_loss needs a nonempty render");
  using Jet3 = ceres::Jet<double, 3>;
  const std::size_t n = render_rgb.pixel_count();
  std::vector<Eigen::Matrix<double, 2, 3>> jacobians(n);  // d(a,b)/d(rgb)
  Image lab(render_rgb.width(), render_rgb.height(), 3);
  for (std::size_t i = 0; i < n; ++i) {
    V3<Jet3> rgb;
    for (int c = 0; c < 3; ++c) {
      const double v = render_rgb.data()[i * 3 + c];
      // Clamped inputs are constant for the derivative.
      rgb(c) = (v < 0.0 || v > 1.0) ? Jet3(std::clamp(v, 0.0, 1.0)) : Jet3(v, c);
    }
    const V3<Jet3> out = color::rgb_to_lab<Jet3>(rgb);
    // Values from the plain path so statistics agree bit-for-bit with chroma_stats.
    const Vec3 value = color::rgb_to_lab<double>(Vec3(rgb(0).a, rgb(1).a, rgb(2).a));
    for (int c = 0; c < 3; ++c) lab.data()[i * 3 + c] = value(c);
    jacobians[i].row(0) = out(1).v.transpose();
    jacobians[i].row(1) = out(2).v.transpose();
  }
  const color::ChromaStats stats = color::chroma_stats(lab);
  auto sign = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
  ImageLoss loss;
  loss.value = 0.5 * ((stats.mean_ab - reference.mean_ab).cwiseAbs().sum() +
                      (stats.std_ab - reference.std_ab).cwiseAbs().sum());
  loss.gradient = Image(render_rgb.width(), render_rgb.height(), 3);
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 dab;
    for (int ch = 0; ch < 2; ++ch) {
      const double a = lab.data()[i * 3 + 1 + ch];
      double d = 0.5 * sign(stats.mean_ab(ch) - reference.mean_ab(ch)) / dn;
      if (stats.std_ab(ch) > 0.0)
        d += 0.5 * sign(stats.std_ab(ch) - reference.std_ab(ch)) * (a - stats.mean_ab(ch)) /
             (dn * stats.std_ab(ch));
      dab(ch) = d;
    }
    const Vec3 drgb = jacobians[i].transpose() * dab;
    for (int c = 0; c < 3; ++c) loss.gradient.data()[i * 3 + c] = drgb(c);
  }
  return loss;
}

inline ImageLoss chroma_loss(const Image& render_rgb, const Image& reference_rgb) {
  return chroma_loss(render_rgb, color::chroma_stats(color::rgb_to_lab(reference_rgb)));
}

}  // namespace brushflow
