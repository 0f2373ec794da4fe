#pragma once

// Toy stylization fixture: 200 isotropic Gaussians on the plane z = 0 seen
// by a few near-frontal cameras, and a horizontal-stripe style image.

#include "brushflow/gs_core.hpp"
#include "brushflow/image.hpp"
#include "brushflow/scene_io.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace brushflow::testing {

inline constexpr int kToyPrimitives = 200;
inline constexpr int kToyResolution = 64;
inline constexpr int kToyIterations = 300;

struct ToyFixture {
  Scene scene;
  std::vector<Camera> cameras;
  Image style;
};

inline ToyFixture make_toy_fixture(std::uint64_t seed = 7, double stripe_period = 32.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  ToyFixture t;
  for (int i = 0; i < kToyPrimitives; ++i) {
    const Vec3 mean(0.9 * u(rng), 0.9 * u(rng), 0.0);
    const Vec4 q = Vec4(n(rng), n(rng), n(rng), n(rng)).normalized();
    const double s = 0.07;
    const Vec3 color(0.5 + 0.4 * mean(0), 0.5 + 0.4 * mean(1), 0.5 - 0.2 * mean(0));
    t.scene.push_back(GaussianPrimitive::make(mean, q, Vec3::Constant(s), color, 0.7));
  }
  const double focal = 0.45 * kToyResolution * 3.0;
  const std::vector<Vec3> eyes = {{0.0, 0.0, 3.0}, {0.35, 0.0, 2.95}, {-0.25, 0.25, 2.95}};
  for (std::size_t v = 0; v < eyes.size(); ++v) {
    Camera cam = Camera::look_at(eyes[v], Vec3::Zero(), Vec3(0.0, -1.0, 0.0), focal, kToyResolution, kToyResolution);
    cam.name = "view" + std::to_string(v);
    t.cameras.push_back(cam);
  }
  // Horizontal stripes: intensity varies along y only.
  t.style = Image(kToyResolution, kToyResolution, 3);
  for (int y = 0; y < kToyResolution; ++y)
    for (int x = 0; x < kToyResolution; ++x) {
      const double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * y / stripe_period);
      t.style.at(x, y, 0) = 0.15 + 0.75 * s;
      t.style.at(x, y, 1) = 0.25 + 0.55 * s;
      t.style.at(x, y, 2) = 0.55 - 0.35 * s;
    }
  return t;
}

/// Stylize config for the toy fixture. `geometry_terms` false gives the
/// ablation (w_align = w_aniso = 0).
inline nlohmann::json toy_config(const std::string& output_dir, bool geometry_terms, int iterations = kToyIterations) {
  return {{"schema_version", 1},
          {"scene", "scene.ply"},
          {"cameras", "cameras.json"},
          {"style", "style.png"},
          {"output_dir", output_dir},
          {"iterations", iterations},
          {"seed", 3},
          {"checkpoint_interval", 100},
          {"loss",
           {{"w_align", geometry_terms ? 1.0 : 0.0},
            {"w_aniso", geometry_terms ? 1.0 : 0.0},
            {"w_style", 1.0},
            {"w_chroma", 0.01},
            {"w_content", 0.1}}},
          {"densify", {{"enabled", false}}}};
}

/// Writes scene.ply, cameras.json, style.png, config_full.json and
/// config_ablation.json into `dir`.
inline void write_toy_fixture(const std::filesystem::path& dir, const ToyFixture& t = make_toy_fixture()) {
  std::filesystem::create_directories(dir);
  write_ply(dir / "scene.ply", t.scene);
  write_cameras(dir / "cameras.json", t.cameras);
  write_png(dir / "style.png", t.style);
  std::ofstream(dir / "config_full.json") << toy_config("out_full", true).dump(2) << '\n';
  std::ofstream(dir / "config_ablation.json") << toy_config("out_ablation", false).dump(2) << '\n';
}

}  // namespace brushflow::testing
