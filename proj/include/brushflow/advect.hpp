#pragma once

// Dual-branch optimizer. One backward pass per iteration feeds two parameter
// groups: geometry (mean, rotation, log-scale) and appearance (color,
// opacity). Mean updates are projected onto the primitive's tangent plane
// before they are applied. Densification clones or splits primitives whose
// screen-space positional gradient stays large.

#include "brushflow/losses.hpp"

#include "json.hpp"

#include <iostream>
#include <random>
#include <string>

namespace brushflow {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string term, double value)
      : std::runtime_error("loss term '" + term + "' diverged (value " + std::to_string(value) + ")"),
        term_(std::move(term)) {}
  [[nodiscard]] const std::string& term() const { return term_; }

 private:
  std::string term_;
};

// ---------------------------------------------------------------------------
// Tangential constraint.

struct AdvectionUpdate {
  Vec3 raw_delta_mean;
  Vec3 tangential_delta_mean;
  Vec3 normal;  // R(q) e3
};

inline AdvectionUpdate tangential_project(const Vec3& delta, const Vec4& q, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0,1]");
  const Vec3 n = rotation_matrix(q).col(2);
  return {delta, delta - lambda * delta.dot(n) * n, n};
}

// ---------------------------------------------------------------------------

struct DensifySettings {
  bool enabled = true;
  int interval = 100;
  double grad_threshold = 2e-4;           // mean |dL/du| per visible view, pixels
  double scale_threshold_fraction = 0.01;  // of the scene extent
  double prune_opacity = 0.005;
  std::size_t max_primitives = 50000;
  double split_scale_divisor = 1.6;
};

struct OptimizerSettings {
  double lr_mean = 1.6e-4;  // multiplied by scene_extent
  double lr_rotation = 1e-3;
  double lr_scale = 5e-3;
  double lr_color = 2.5e-3;
  double lr_opacity = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double scene_extent = 1.0;
  std::uint64_t seed = 0;
  DensifySettings densify;

  [[nodiscard]] double mean_rate() const { return lr_mean * scene_extent; }
};

/// Adam moments for one parameter group of fixed width.
template <int N>
struct Moments {
  using Vec = Eigen::Matrix<double, N, 1>;
  std::vector<Vec> m, v;

  void resize(std::size_t n) {
    m.resize(n, Vec::Zero());
    v.resize(n, Vec::Zero());
  }
  void reset(std::size_t i) {
    m[i].setZero();
    v[i].setZero();
  }
  void keep(const std::vector<std::size_t>& sources) {
    std::vector<Vec> nm, nv;
    for (const std::size_t s : sources) {
      nm.push_back(s < m.size() ? m[s] : Vec::Zero());
      nv.push_back(s < v.size() ? v[s] : Vec::Zero());
    }
    m = std::move(nm);
    v = std::move(nv);
  }

  /// Adam update for element i; the step counter t starts at 1.
  Vec update(std::size_t i, const Vec& g, double lr, const OptimizerSettings& s, long t) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
    return -lr * ((m[i] / c1).array() / ((v[i] / c2).array().sqrt() + s.epsilon)).matrix();
  }
};

struct OptimizerState {
  long step = 0;
  Moments<3> mean;
  Moments<4> rotation;
  Moments<3> log_scale;
  Moments<3> color;
  Moments<1> opacity;
  // Densification statistics since the last densify call.
  std::vector<double> screen_grad_sum;
  std::vector<int> visible_views;
  std::vector<Vec3> last_mean_update;
  std::mt19937_64 rng;

  explicit OptimizerState(std::uint64_t seed = 0) : rng(seed) {}

  void resize(std::size_t n) {
    mean.resize(n);
    rotation.resize(n);
    log_scale.resize(n);
    color.resize(n);
    opacity.resize(n);
    screen_grad_sum.resize(n, 0.0);
    visible_views.resize(n, 0);
    last_mean_update.resize(n, Vec3::Zero());
  }

  /// Rebuilds per-primitive state after the scene was re-indexed; entry j of
  /// the new scene takes the state of old index sources[j] (or zeros when it
  /// is past the end).
  void reindex(const std::vector<std::size_t>& sources) {
    mean.keep(sources);
    rotation.keep(sources);
    log_scale.keep(sources);
    color.keep(sources);
    opacity.keep(sources);
    std::vector<Vec3> updates;
    for (const std::size_t s : sources)
      updates.push_back(s < last_mean_update.size() ? last_mean_update[s] : Vec3::Zero());
    last_mean_update = std::move(updates);
    screen_grad_sum.assign(sources.size(), 0.0);
    visible_views.assign(sources.size(), 0);
  }
};

// ---------------------------------------------------------------------------
// Per-view targets.

enum class ChromaReference { style, content };

/// Everything the losses compare against, prepared once per view.
struct ViewTargets {
  FlowField flow;  // at view resolution
  std::optional<StyleTarget> style;
  std::optional<ContentTarget> content;
};

struct StylizationTargets {
  std::vector<Camera> views;
  std::vector<ViewTargets> per_view;
  color::ChromaStats chroma;
  const FeatureExtractor* features = nullptr;

  /// `content_images` may be empty (no content term) or hold one image per view.
  static StylizationTargets build(std::vector<Camera> views, const FlowField& flow, const Image& style,
                                  const std::vector<Image>& content_images, const FeatureExtractor& fx,
                                  ChromaReference chroma_reference = ChromaReference::style) {
    if (views.empty()) throw std::invalid_argument("at least one view is required");
    if (!content_images.empty() && content_images.size() != views.size())
      throw std::invalid_argument("need one content reference per view");
    StylizationTargets t;
    t.features = &fx;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Camera& cam = views[v];
      ViewTargets vt{resize_flow(flow, cam.width, cam.height), StyleTarget(style, cam.width, cam.height, fx),
                     std::nullopt};
      if (!content_images.empty()) vt.content.emplace(content_images[v], cam.width, cam.height, fx);
      t.per_view.push_back(std::move(vt));
    }
    if (chroma_reference == ChromaReference::content && !content_images.empty()) {
      // Pool the Lab pixels of every content reference.
      std::vector<double> pooled;
      for (const auto& img : content_images) {
        const Image lab = color::rgb_to_lab(img);
        pooled.insert(pooled.end(), lab.data().begin(), lab.data().end());
      }
      Image all(static_cast<int>(pooled.size() / 3), 1, 3);
      all.data() = std::move(pooled);
      t.chroma = color::chroma_stats(all);
    } else {
      t.chroma = color::chroma_stats(color::rgb_to_lab(style));
    }
    t.views = std::move(views);
    return t;
  }
};

// ---------------------------------------------------------------------------

struct LossReport {
  long step = 0;
  double align = 0.0;  // summed over views, unweighted
  double aniso = 0.0;
  double style = 0.0;
  double chroma = 0.0;
  double content = 0.0;
  double total = 0.0;  // weighted
  std::size_t primitives = 0;
  std::size_t views = 0;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"step", step},       {"align", align},   {"aniso", aniso},
            {"style", style},     {"chroma", chroma}, {"content", content},
            {"total", total},     {"primitives", primitives}, {"views", views}};
  }
};

/// Gradient buffers plus the loss values of the views they came from.
struct Accumulated {
  SceneGradients grads;
  LossReport report;
};

inline void check_finite(const char* term, double value) {
  if (!std::isfinite(value)) throw DivergenceError(term, value);
}

/// Adds the gradients of the weighted objective over views [first, last) of
/// `targets` into `acc`. Also feeds the densification statistics in `state`
/// when given.
inline void accumulate_views(const Scene& scene, const StylizationTargets& targets, const LossWeights& weights,
                             std::size_t first, std::size_t last, Accumulated& acc,
                             OptimizerState* state = nullptr) {
  if (acc.grads.size() != scene.size()) acc.grads.resize(scene.size());
  if (state && state->screen_grad_sum.size() != scene.size()) state->resize(scene.size());
  const bool image_terms = weights.w_style > 0.0 || weights.w_chroma > 0.0 || weights.w_content > 0.0;
  for (std::size_t v = first; v < last; ++v) {
    const Camera& cam = targets.views[v];
    const ViewTargets& vt = targets.per_view[v];
    SceneGradients view(scene.size());
    if (weights.w_align > 0.0) {
      const double a = align_loss(scene, cam, vt.flow, &view, weights.w_align).value;
      check_finite("align", a);
      acc.report.align += a;
      acc.report.total += weights.w_align * a;
    }
    if (weights.w_aniso > 0.0) {
      const double a = aniso_loss(scene, cam, vt.flow, weights.aniso_target_ratio, &view, weights.w_aniso).value;
      check_finite("aniso", a);
      acc.report.aniso += a;
      acc.report.total += weights.w_aniso * a;
    }
    if (image_terms) {
      const RenderOutput rendered = render(scene, cam);
      Image dimage(cam.width, cam.height, 3);
      auto add = [&](const char* term, double w, const ImageLoss& l, double& slot) {
        check_finite(term, l.value);
        slot += l.value;
        acc.report.total += w * l.value;
        for (std::size_t i = 0; i < dimage.data().size(); ++i) dimage.data()[i] += w * l.gradient.data()[i];
      };
      if (weights.w_style > 0.0 && vt.style)
        add("style", weights.w_style, style_loss_luma(rendered.image, *vt.style, *targets.features),
            acc.report.style);
      if (weights.w_chroma > 0.0)
        add("chroma", weights.w_chroma, chroma_loss(rendered.image, targets.chroma), acc.report.chroma);
      if (weights.w_content > 0.0 && vt.content)
        add("content", weights.w_content, content_loss(rendered.image, *vt.content, *targets.features),
            acc.report.content);
      const SceneGradients image_grads = render_backward(rendered, scene, cam, dimage);
      if (state)
        for (std::size_t i = 0; i < scene.size(); ++i)
          if (project_gaussian(cam, scene[i])) {
            state->screen_grad_sum[i] += image_grads.screen_center[i].norm();
            ++state->visible_views[i];
          }
      view += image_grads;
    }
    acc.grads += view;
    ++acc.report.views;
  }
  if (!acc.grads.all_finite()) throw DivergenceError("gradient", std::numeric_limits<double>::quiet_NaN());
}

/// Applies one optimizer step from accumulated gradients. Geometry and
/// appearance groups use their own rates; a group with rate 0 is untouched.
inline void apply_update(Scene& scene, const SceneGradients& grads, const LossWeights& weights,
                         const OptimizerSettings& settings, OptimizerState& state) {
  if (grads.size() != scene.size()) throw std::invalid_argument("gradient buffers do not match the scene");
  state.resize(scene.size());
  const long t = ++state.step;
  // An overflowing step is divergence, not bad input.
  auto finite = [](const char* group, const auto& v) {
    if (!v.allFinite()) throw DivergenceError(group, std::numeric_limits<double>::quiet_NaN());
  };
  for (std::size_t i = 0; i < scene.size(); ++i) {
    GaussianPrimitive& g = scene[i];
    if (settings.mean_rate() > 0.0) {
      const Vec3 delta = state.mean.update(i, grads.mean[i], settings.mean_rate(), settings, t);
      const Vec3 applied = tangential_project(delta, g.rotation, weights.tangential_lambda).tangential_delta_mean;
      finite("mean update", g.mean + applied);
      if (!applied.isZero(0.0)) g.mean += applied;
      state.last_mean_update[i] = applied;
    }
    if (settings.lr_scale > 0.0) {
      const Vec3 ds = state.log_scale.update(i, grads.log_scale[i], settings.lr_scale, settings, t);
      finite("log-scale update", g.log_scale + ds);
      if (!ds.isZero(0.0)) g.log_scale += ds;
    }
    if (settings.lr_rotation > 0.0) {
      const Vec4 dq = state.rotation.update(i, grads.rotation[i], settings.lr_rotation, settings, t);
      if (!dq.isZero(0.0)) {
        const Vec4 raw = g.rotation + dq;
        finite("rotation update", raw);
        const Vec4 next = normalized_quaternion<double>(raw);
        if (!next.allFinite() || next.isZero(0.0)) throw DivergenceError("rotation update", raw.norm());
        g.rotation = next;
      }
    }
    if (settings.lr_color > 0.0) {
      const Vec3 dc = state.color.update(i, grads.color[i], settings.lr_color, settings, t);
      if (!dc.isZero(0.0)) g.color = (g.color + dc).cwiseMax(0.0).cwiseMin(1.0);
    }
    if (settings.lr_opacity > 0.0) {
      const Eigen::Matrix<double, 1, 1> d = state.opacity.update(
          i, Eigen::Matrix<double, 1, 1>(grads.opacity_logit[i]), settings.lr_opacity, settings, t);
      if (d(0) != 0.0) g.opacity_logit = std::clamp(g.opacity_logit + d(0), -kMaxOpacityLogit, kMaxOpacityLogit);
    }
    // Keep e1 the major axis. Rotation moments refer to the old axes.
    const Vec3 before = g.log_scale;
    sort_axes(g);
    if (g.log_scale != before) {
      state.rotation.reset(i);
      state.log_scale.reset(i);
    }
  }
}

/// One full iteration over every view.
inline LossReport step(Scene& scene, const StylizationTargets& targets, const LossWeights& weights,
                       const OptimizerSettings& settings, OptimizerState& state) {
  if (scene.empty()) throw std::invalid_argument("step needs a nonempty scene");
  Accumulated acc;
  accumulate_views(scene, targets, weights, 0, targets.views.size(), acc, &state);
  apply_update(scene, acc.grads, weights, settings, state);
  acc.report.step = state.step;
  acc.report.primitives = scene.size();
  return acc.report;
}

// ---------------------------------------------------------------------------

struct DensifyResult {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
  bool skipped_for_capacity = false;
};

inline DensifyResult densify(Scene& scene, OptimizerState& state, const OptimizerSettings& settings) {
  const DensifySettings& d = settings.densify;
  state.resize(scene.size());
  DensifyResult result;
  std::vector<char> over(scene.size(), 0);
  std::size_t growth = 0;
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (state.visible_views[i] > 0 && state.screen_grad_sum[i] / state.visible_views[i] > d.grad_threshold) {
      over[i] = 1;
      ++growth;
    }
  if (scene.size() + growth > d.max_primitives) {
    std::cerr << "warning: densification skipped, " << scene.size() + growth << " primitives would exceed the limit of "
              << d.max_primitives << "\n";
    result.skipped_for_capacity = true;
    std::fill(over.begin(), over.end(), 0);
  }

  const double scale_threshold = d.scale_threshold_fraction * settings.scene_extent;
  const std::size_t none = std::numeric_limits<std::size_t>::max();
  Scene next;
  std::vector<std::size_t> sources;  // old index, or `none` for a fresh primitive
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const GaussianPrimitive& g = scene[i];
    if (!over[i]) {
      next.push_back(g);
      sources.push_back(i);
    } else if (g.scale().maxCoeff() < scale_threshold) {
      next.push_back(g);
      sources.push_back(i);
      GaussianPrimitive clone = g;
      clone.mean += state.last_mean_update[i];
      next.push_back(clone);
      sources.push_back(none);
      ++result.cloned;
    } else {
      const Mat3 r = rotation_matrix(g.rotation);
      const Vec3 s = g.scale();
      for (int c = 0; c < 2; ++c) {
        GaussianPrimitive child = g;
        const Vec3 z(normal(state.rng), normal(state.rng), normal(state.rng));
        child.mean = g.mean + r * s.cwiseProduct(z);
        child.log_scale = g.log_scale.array() - std::log(d.split_scale_divisor);
        next.push_back(child);
        sources.push_back(none);
      }
      ++result.split;
    }
  }
  Scene kept;
  std::vector<std::size_t> kept_sources;
  for (std::size_t j = 0; j < next.size(); ++j) {
    if (next[j].opacity() < d.prune_opacity) {
      ++result.pruned;
      continue;
    }
    kept.push_back(next[j]);
    kept_sources.push_back(sources[j]);
  }
  scene = std::move(kept);
  state.reindex(kept_sources);
  return result;
}

/// Mean align loss over views (for reporting); 0 when nothing contributes.
inline double mean_align_loss(const Scene& scene, const StylizationTargets& targets) {
  double sum = 0.0;
  for (std::size_t v = 0; v < targets.views.size(); ++v)
    sum += align_loss(scene, targets.views[v], targets.per_view[v].flow).value;
  return sum / static_cast<double>(targets.views.size());
}

inline double mean_elongation_ratio(const Scene& scene, const std::vector<Camera>& views) {
  double sum = 0.0;
  for (const auto& cam : views) sum += mean_elongation_ratio(scene, cam);
  return sum / static_cast<double>(views.size());
}

}  // namespace brushflow
