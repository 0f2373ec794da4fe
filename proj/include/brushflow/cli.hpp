#pragma once

// Command-line front end: extract-flow, stylize, render, judge.
// Exit codes: 0 success, 2 input or config error, 3 numerical divergence,
// 4 judge endpoints unavailable.

#include "brushflow/advect.hpp"
#include "brushflow/config.hpp"
#include "brushflow/features.hpp"
#include "brushflow/flowfield.hpp"
#include "brushflow/judge.hpp"
#include "brushflow/scene_io.hpp"
#include "brushflow/splatter.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace brushflow::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInternal = 1, kInputError = 2, kDiverged = 3, kServiceFailure = 4 };

/// Thrown by commands to leave with a specific exit code.
class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  [[nodiscard]] int code() const { return code_; }

 private:
  int code_;
};

/// File-name-safe camera label; falls back to the view index.
inline std::string view_file_stem(const Camera& cam, std::size_t index) {
  std::string s;
  for (char c : cam.name) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (s.empty() || s == "." || s == "..") {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%03zu", index);
    s = buf;
  }
  return s;
}

inline void render_views(const Scene& scene, const std::vector<Camera>& cams, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t v = 0; v < cams.size(); ++v)
    write_png(dir / (view_file_stem(cams[v], v) + ".png"), render(scene, cams[v]).image);
}

// ---------------------------------------------------------------------------

struct ExtractFlowArgs {
  fs::path style;
  fs::path out;
  fs::path viz;
  FlowOptions options;
};

inline int extract_flow_command(const ExtractFlowArgs& a, std::ostream& out) {
  const Image style = read_image(a.style);
  const FlowField flow = extract_flow(style, a.options);
  write_flow(a.out, flow);
  if (!a.viz.empty()) write_png(a.viz, flow_visualization(flow));
  out << "wrote " << a.out.string() << " (" << flow.width() << "x" << flow.height() << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct StylizeSummary {
  int iterations = 0;
  std::size_t primitives = 0;
  double mean_align_loss = 0.0;
  double mean_elongation_ratio = 0.0;
  double scene_extent = 0.0;
  LossReport last;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"iterations", iterations},
            {"primitives", primitives},
            {"mean_align_loss", mean_align_loss},
            {"mean_elongation_ratio", mean_elongation_ratio},
            {"scene_extent", scene_extent},
            {"last_step", last.to_json()}};
  }
};

/// Output layout under output_dir: scene.ply, log.jsonl, summary.json,
/// renders/<view>.png and checkpoints/iter_NNNNNN/<view>.png. Renders are
/// taken from the scene as it will read back from scene.ply, so the render
/// command reproduces them exactly.
inline StylizeSummary stylize(const RunConfig& cfg, std::ostream& progress) {
  Scene scene = read_ply(cfg.scene);
  if (scene.empty()) throw IoError("scene " + cfg.scene.string() + " has no primitives");
  const std::vector<Camera> cams = read_cameras(cfg.cameras);
  if (cams.empty()) throw IoError("cameras " + cfg.cameras.string() + " lists no views");
  const Image style = read_image(cfg.style);

  const FlowField flow = extract_flow(style, cfg.flow);
  const ConvBankExtractor fx(cfg.feature_seed);
  std::vector<Image> content;
  if (cfg.content_from_initial_render)
    for (const Camera& cam : cams) content.push_back(render(scene, cam).image);
  const StylizationTargets targets =
      StylizationTargets::build(cams, flow, style, content, fx, cfg.chroma_reference);

  OptimizerSettings settings = cfg.optimizer;
  settings.seed = cfg.seed;
  settings.scene_extent = cfg.scene_extent ? *cfg.scene_extent : scene_extent(cams, scene);
  OptimizerState state(cfg.seed);

  fs::create_directories(cfg.output_dir);
  std::ofstream log(cfg.output_dir / "log.jsonl");
  if (!log) throw IoError("cannot write " + (cfg.output_dir / "log.jsonl").string());

  StylizeSummary summary;
  summary.scene_extent = settings.scene_extent;
  for (int it = 1; it <= cfg.iterations; ++it) {
    try {
      summary.last = step(scene, targets, cfg.weights, settings, state);
    } catch (const DivergenceError& e) {
      throw CommandError(kDiverged, std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    nlohmann::json line = summary.last.to_json();
    line["iteration"] = it;
    if (settings.densify.enabled && it % settings.densify.interval == 0 && it < cfg.iterations) {
      const DensifyResult d = densify(scene, state, settings);
      line["densify"] = {{"cloned", d.cloned},
                         {"split", d.split},
                         {"pruned", d.pruned},
                         {"skipped_for_capacity", d.skipped_for_capacity},
                         {"primitives", scene.size()}};
    }
    log << line.dump() << '\n';
    if (cfg.checkpoint_interval > 0 && (it % cfg.checkpoint_interval == 0 || it == cfg.iterations)) {
      char dir[32];
      std::snprintf(dir, sizeof dir, "iter_%06d", it);
      render_views(quantize_like_ply(scene), cams, cfg.output_dir / "checkpoints" / dir);
      progress << "iteration " << it << "/" << cfg.iterations << "  total " << summary.last.total
               << "  primitives " << scene.size() << "\n";
    }
  }

  write_ply(cfg.output_dir / "scene.ply", scene);
  const Scene saved = read_ply(cfg.output_dir / "scene.ply");
  render_views(saved, cams, cfg.output_dir / "renders");
  summary.iterations = cfg.iterations;
  summary.primitives = saved.size();
  summary.mean_align_loss = mean_align_loss(saved, targets);
  summary.mean_elongation_ratio = mean_elongation_ratio(saved, cams);
  std::ofstream(cfg.output_dir / "summary.json") << summary.to_json().dump(2) << '\n';
  return summary;
}

// ---------------------------------------------------------------------------

inline int render_command(const fs::path& scene_path, const fs::path& cameras_path, const fs::path& out_dir,
                          std::ostream& out) {
  const Scene scene = read_ply(scene_path);
  const std::vector<Camera> cams = read_cameras(cameras_path);
  render_views(scene, cams, out_dir);
  out << "rendered " << cams.size() << " view(s) of " << scene.size() << " primitive(s) to " << out_dir.string()
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct JudgeArgs {
  fs::path pairs;
  fs::path judges;
  fs::path out;
  std::uint64_t seed = 0;
  std::string pooling = "pooled";
  int max_in_flight = 4;
  fs::path rubric;
};

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + " is not valid JSON: " + e.what());
  }
}

/// Writes verdicts.jsonl, report.json and report.txt under `out`.
inline int judge_command(const JudgeArgs& a, std::ostream& out) {
  const judge::Pooling pooling = judge::parse_pooling(a.pooling);
  const auto pairs = judge::parse_pair_manifest(read_json_file(a.pairs), a.pairs.parent_path());
  if (pairs.empty()) throw CommandError(kInputError, "pair manifest " + a.pairs.string() + " lists no pairs");
  const auto configs = judge::parse_judge_config(read_json_file(a.judges));
  std::vector<std::unique_ptr<judge::JudgeEndpoint>> owned;
  std::vector<const judge::JudgeEndpoint*> judges;
  for (const auto& c : configs) {
    owned.push_back(judge::make_endpoint(c));
    judges.push_back(owned.back().get());
  }
  const std::string rubric = a.rubric.empty() ? judge::load_rubric() : judge::load_rubric(a.rubric);
  const auto tasks = judge::build_tasks(pairs, a.seed);
  judge::PanelSettings settings;
  settings.max_in_flight = a.max_in_flight;
  const auto verdicts = judge::run_panel(tasks, judges, rubric, settings);

  fs::create_directories(a.out);
  judge::write_archive(a.out / "verdicts.jsonl", verdicts);
  const judge::PanelReport report = judge::aggregate(verdicts, pooling);
  std::ofstream(a.out / "report.json") << report.to_json().dump(2) << '\n';
  std::ofstream(a.out / "report.txt") << report.to_table();
  out << report.to_table();

  bool all_down = true;
  for (const auto& [name, s] : report.judges) {
    if (s.failures > 0) out << "judge " << name << ": " << s.failures << " failure(s)\n";
    if (s.protocol_violations > 0) out << "judge " << name << ": " << s.protocol_violations << " protocol violation(s)\n";
    if (s.failures < s.verdicts) all_down = false;
  }
  if (all_down) throw CommandError(kServiceFailure, "no judge endpoint could be reached");
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"brushflow: flow-aligned brushstroke stylization of Gaussian splat scenes"};
  app.require_subcommand(1);

  ExtractFlowArgs ef;
  std::string mode = "coherence_direction";
  auto* extract = app.add_subcommand("extract-flow", "Estimate the stroke orientation field of a style image");
  extract->add_option("--style", ef.style, "Style image (PNG or JPEG)")->required();
  extract->add_option("--out", ef.out, "Output FLW1 file")->required();
  extract->add_option("--window-sigma", ef.options.window_sigma, "Structure tensor integration sigma (px)")
      ->capture_default_str();
  extract->add_option("--smoothing-sigma", ef.options.smoothing_sigma, "Pre-smoothing sigma (px)")
      ->capture_default_str();
  extract->add_option("--mode", mode, "coherence_direction | leading_eigenvector")->capture_default_str();
  extract->add_option("--viz", ef.viz, "Optional PNG visualization");

  fs::path config_path;
  auto* stylize_cmd = app.add_subcommand("stylize", "Run the optimization described by a config file");
  stylize_cmd->add_option("--config", config_path, "Run config (JSON)")->required();

  fs::path scene_path, cameras_path, render_out;
  auto* render_cmd = app.add_subcommand("render", "Render a scene from every camera");
  render_cmd->add_option("--scene", scene_path, "Scene PLY")->required();
  render_cmd->add_option("--cameras", cameras_path, "Cameras JSON")->required();
  render_cmd->add_option("--out", render_out, "Output directory")->required();

  JudgeArgs ja;
  auto* judge_cmd = app.add_subcommand("judge", "Run the pairwise judge panel and aggregate its verdicts");
  judge_cmd->add_option("--pairs", ja.pairs, "Pair manifest (JSON)")->required();
  judge_cmd->add_option("--judges", ja.judges, "Judge config (JSON)")->required();
  judge_cmd->add_option("--out", ja.out, "Output directory")->required();
  judge_cmd->add_option("--seed", ja.seed, "Presentation-order seed")->capture_default_str();
  judge_cmd->add_option("--pooling", ja.pooling, "pooled | per_judge")->capture_default_str();
  judge_cmd->add_option("--max-in-flight", ja.max_in_flight, "Concurrent judge calls")->capture_default_str();
  judge_cmd->add_option("--rubric", ja.rubric, "Rubric file (defaults to the bundled asset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (*extract) {
      if (mode == "coherence_direction") {
        ef.options.mode = OrientationMode::coherence_direction;
      } else if (mode == "leading_eigenvector") {
        ef.options.mode = OrientationMode::leading_eigenvector;
      } else {
        throw CommandError(kInputError, "--mode must be coherence_direction or leading_eigenvector");
      }
      if (!(ef.options.window_sigma > 0.0) || !(ef.options.smoothing_sigma >= 0.0))
        throw CommandError(kInputError, "sigmas must be positive");
      return extract_flow_command(ef, out);
    }
    if (*stylize_cmd) {
      const RunConfig cfg = load_run_config(config_path);
      const StylizeSummary s = stylize(cfg, out);
      out << "done: " << s.primitives << " primitives, mean align loss " << s.mean_align_loss
          << ", mean elongation " << s.mean_elongation_ratio << "\n";
      return kOk;
    }
    if (*render_cmd) return render_command(scene_path, cameras_path, render_out, out);
    if (*judge_cmd) return judge_command(ja, out);
  } catch (const CommandError& e) {
    err << "error: " << e.what() << "\n";
    return e.code();
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const judge::TaskError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInputError;
}

}  // namespace brushflow::cli
