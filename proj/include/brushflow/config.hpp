#pragma once

// Run configuration for the stylize command: one JSON document with a schema
// version. Unknown keys are errors; relative paths resolve against the
// config file's directory.

#include "brushflow/advect.hpp"
#include "brushflow/flowfield.hpp"
#include "brushflow/losses.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

namespace brushflow {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  std::filesystem::path scene;
  std::filesystem::path cameras;
  std::filesystem::path style;
  std::filesystem::path output_dir;
  int iterations = 3000;
  std::uint64_t seed = 0;
  int checkpoint_interval = 500;  // 0 disables checkpoint renders
  bool content_from_initial_render = true;
  ChromaReference chroma_reference = ChromaReference::style;
  LossWeights weights;
  OptimizerSettings optimizer;
  std::optional<double> scene_extent;  // computed from cameras and scene when absent
  FlowOptions flow;
  std::uint64_t feature_seed = 0;

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be at least 1");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be nonnegative");
    if (optimizer.densify.interval < 1) throw ConfigError("densify.interval must be at least 1");
    if (scene_extent && !(*scene_extent > 0.0)) throw ConfigError("scene_extent must be positive");
    if (!(flow.window_sigma > 0.0) || !(flow.smoothing_sigma >= 0.0)) throw ConfigError("bad flow sigmas");
    try {
      weights.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (const auto* p : {&scene, &cameras, &style})
      if (!std::filesystem::is_regular_file(*p)) throw ConfigError("no such file: " + p->string());
    if (output_dir.empty()) throw ConfigError("output_dir is required");
  }
};

namespace detail {

/// Reads fields out of one JSON object and rejects whatever is left over.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + prefix() + k + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'" + prefix() + key + "' has the wrong type");
    }
  }

  std::optional<nlohmann::json> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return j_.at(key);
  }

  template <class T>
  void require(const char* key, T& out) {
    if (!j_.contains(key)) throw ConfigError("missing required key '" + prefix() + key + "'");
    get(key, out);
  }

  [[nodiscard]] std::string prefix() const { return where_.empty() ? "" : where_ + "."; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  std::string scene, cameras, style, out, chroma = "style", content = "initial_render";
  {
    detail::ObjectReader r(j, "");
    int version = -1;
    r.require("schema_version", version);
    if (version != kConfigSchemaVersion)
      throw ConfigError("schema_version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kConfigSchemaVersion) + ")");
    r.require("scene", scene);
    r.require("cameras", cameras);
    r.require("style", style);
    r.require("output_dir", out);
    r.get("iterations", c.iterations);
    r.get("seed", c.seed);
    r.get("checkpoint_interval", c.checkpoint_interval);
    r.get("chroma_reference", chroma);
    r.get("content", content);
    r.get("feature_seed", c.feature_seed);

    if (auto s = r.sub("loss")) {
      detail::ObjectReader l(*s, "loss");
      l.get("w_align", c.weights.w_align);
      l.get("w_aniso", c.weights.w_aniso);
      l.get("w_style", c.weights.w_style);
      l.get("w_chroma", c.weights.w_chroma);
      l.get("w_content", c.weights.w_content);
      l.get("aniso_target_ratio", c.weights.aniso_target_ratio);
      l.get("tangential_lambda", c.weights.tangential_lambda);
      l.finish();
    }
    if (auto s = r.sub("optimizer")) {
      detail::ObjectReader o(*s, "optimizer");
      OptimizerSettings& op = c.optimizer;
      o.get("lr_mean", op.lr_mean);
      o.get("lr_rotation", op.lr_rotation);
      o.get("lr_scale", op.lr_scale);
      o.get("lr_color", op.lr_color);
      o.get("lr_opacity", op.lr_opacity);
      o.get("beta1", op.beta1);
      o.get("beta2", op.beta2);
      o.get("epsilon", op.epsilon);
      double extent = 0.0;
      o.get("scene_extent", extent);
      if (extent != 0.0) c.scene_extent = extent;
      o.finish();
    }
    if (auto s = r.sub("densify")) {
      detail::ObjectReader d(*s, "densify");
      DensifySettings& ds = c.optimizer.densify;
      d.get("enabled", ds.enabled);
      d.get("interval", ds.interval);
      d.get("grad_threshold", ds.grad_threshold);
      d.get("scale_threshold_fraction", ds.scale_threshold_fraction);
      d.get("prune_opacity", ds.prune_opacity);
      d.get("max_primitives", ds.max_primitives);
      d.get("split_scale_divisor", ds.split_scale_divisor);
      d.finish();
    }
    if (auto s = r.sub("flow")) {
      detail::ObjectReader f(*s, "flow");
      std::string mode = "coherence_direction";
      f.get("window_sigma", c.flow.window_sigma);
      f.get("smoothing_sigma", c.flow.smoothing_sigma);
      f.get("mode", mode);
      f.finish();
      if (mode == "coherence_direction") {
        c.flow.mode = OrientationMode::coherence_direction;
      } else if (mode == "leading_eigenvector") {
        c.flow.mode = OrientationMode::leading_eigenvector;
      } else {
        throw ConfigError("flow.mode must be coherence_direction or leading_eigenvector");
      }
    }
    r.finish();
  }

  if (chroma == "style") {
    c.chroma_reference = ChromaReference::style;
  } else if (chroma == "content") {
    c.chroma_reference = ChromaReference::content;
  } else {
    throw ConfigError("chroma_reference must be 'style' or 'content'");
  }
  if (content == "initial_render") {
    c.content_from_initial_render = true;
  } else if (content == "none") {
    c.content_from_initial_render = false;
  } else {
    throw ConfigError("content must be 'initial_render' or 'none'");
  }

  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  c.scene = resolve(scene);
  c.cameras = resolve(cameras);
  c.style = resolve(style);
  c.output_dir = resolve(out);
  c.optimizer.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

}  // namespace brushflow
