// vxsplat command-line front end.
//
// Exit status: 0 success, 1 input or usage error, 2 internal error.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "acceptance/criteria.hpp"
#include "report_json.hpp"
#include "vxsplat/vxsplat.hpp"

namespace fs = std::filesystem;
using namespace vxsplat;
using report::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitInternal = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help, bool required_out = false) {
  cmd->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
  auto* o = cmd->add_option("--out", c.out, out_help);
  if (required_out) o->required();
}

PipelineConfig load_pipeline_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) {
    std::vector<std::string> warnings;
    cfg = io::pipeline_config_from(io::read_config(c.config), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::string fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Where JSON lines go: a file when given, stdout otherwise.
class LineSink {
 public:
  explicit LineSink(const std::string& path) {
    if (path.empty()) return;
    file_.open(path, std::ios::trunc);
    if (!file_) throw InputError("cannot write " + path);
  }
  void write(const json& j) { (file_.is_open() ? file_ : std::cout) << j.dump() << "\n"; }

 private:
  std::ofstream file_;
};

// Default scene for `synth` without a config: a checkered plane, a sphere
// and a box under a short sweep.
SceneSpec default_scene() {
  const std::string text =
      "scene.seed = 1\n"
      "scene.camera = 56 56 31.5 31.5 64 64\n"
      "scene.lidar = uniform 4000 8 0.005 60 50\n"
      "scene.surface = plane 0 0 1 0.1 checker 0.85 0.3 0.2 0.15 0.35 0.8 0.15\n"
      "scene.surface = sphere 0.25 0.2 0.22 0.1 waves 0.9 0.8 0.2 0.2 0.6 0.3 0.05\n"
      "scene.surface = box -0.35 -0.1 0.1 -0.2 0.1 0.25 solid 0.3 0.7 0.4\n"
      "scene.trajectory = line -0.1 -0.45 0.8 0.1 -0.35 0.8 0 0.05 0.1 10\n";
  return io::scene_spec_from(io::parse_config_text(text, "<default scene>"));
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, int frames_override) {
  if (c.out.empty()) throw InputError("synth: --out DIR is required");
  SceneSpec scene;
  if (c.config.empty()) {
    scene = default_scene();
  } else {
    std::vector<std::string> warnings;
    scene = io::scene_spec_from(io::read_config(c.config), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  if (c.seed) scene.seed = *c.seed;
  if (frames_override > 0) {
    if (scene.trajectory.empty()) throw InputError("synth: scene has no trajectory");
    scene.trajectory.resize(std::min<std::size_t>(scene.trajectory.size(), frames_override));
  }
  scene.validate();
  std::vector<FrameSample> frames;
  std::size_t points = 0;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
    frames.push_back(simulate_frame(scene, i));
    points += frames.back().points.size();
  }
  io::write_stream(c.out, scene, frames);
  std::cout << "synth: " << frames.size() << " frames, " << points << " points -> " << c.out << "\n";
  return kExitOk;
}

int cmd_densify(const Common& c, const std::string& input, const std::string& stats_path) {
  if (c.out.empty()) throw InputError("densify: --out FILE.ply is required");
  const PipelineConfig cfg = load_pipeline_config(c);
  const io::PlyCloud cloud = io::read_ply(input);
  VoxelMap map(cfg.voxel_size, cfg.sensor_var);
  const auto set = map.store_frame(cloud.points);
  const DensifyOutput out = densify_frame(set, map, cfg.densify());

  std::vector<ColoredPoint> dense;
  LineSink stats(stats_path);
  for (const auto& v : out.voxels) {
    for (std::size_t i = 0; i < v.prediction.points.size(); ++i) {
      dense.push_back({v.prediction.points[i], v.prediction.colors[i], v.prediction.variances[i]});
    }
    stats.write(report::voxel_json(v.prediction, *map.find(v.prediction.key)));
  }
  for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& [key, e] : out.errors) std::cerr << "error: voxel " << to_string(key) << ": " << e << "\n";
  io::write_ply(c.out, dense);
  std::cout << "densify: " << cloud.points.size() << " points in " << set.size() << " voxels, " << out.voxels.size()
            << " solved, " << dense.size() << " points -> " << c.out << "\n";
  return kExitOk;
}

int cmd_map(const Common& c, const std::string& stream_dir, const std::string& reports_path, int workers) {
  if (c.out.empty()) throw InputError("map: --out FILE is required");
  PipelineConfig cfg = load_pipeline_config(c);
  if (workers > 0) cfg.workers = static_cast<unsigned>(workers);
  std::vector<std::string> warnings;
  const io::StreamData stream = io::read_stream(stream_dir, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  LineSink sink(reports_path);
  const RunResult r = run(stream.frames, cfg, [&](const FrameReport& rep) { sink.write(report::frame_json(rep)); });
  sink.write(report::summary_json(r.summary));

  // The worker count does not change the result, so it is left out of the echo.
  PipelineConfig echo = cfg;
  echo.workers = 1;
  const std::string bytes = io::encode_map(r.map, io::to_config_text(echo));
  io::write_file_bytes(c.out, bytes);
  std::cout << "map: " << r.summary.frames << " frames, " << r.map.size() << " primitives, mean PSNR "
            << r.summary.mean_psnr << " dB -> " << c.out << " fnv1a64 " << fnv1a64(bytes) << "\n";
  return r.summary.frame_errors == r.summary.frames ? kExitInput : kExitOk;
}

Camera camera_from_args(const std::string& stream_dir, int frame, const std::string& intrinsics,
                        const std::string& pose) {
  if (!stream_dir.empty()) {
    const auto scene = io::scene_spec_from(io::read_config(fs::path(stream_dir) / "scene.cfg"));
    const auto poses = io::read_trajectory(fs::path(stream_dir) / "trajectory.txt");
    if (frame < 0 || static_cast<std::size_t>(frame) >= poses.size()) {
      throw InputError("render: frame " + std::to_string(frame) + " is outside the stream");
    }
    Camera cam = scene.intrinsics;
    cam.camera_from_world = poses[frame].world_from_camera.inverse();
    return cam;
  }
  if (intrinsics.empty() || pose.empty()) throw InputError("render: give --stream DIR or both --intrinsics and --pose");
  const auto cfg = io::parse_config_text("scene.camera = " + intrinsics + "\nscene.pose = 0 " + pose + "\n", "<args>");
  const SceneSpec s = io::scene_spec_from(cfg);
  Camera cam = s.intrinsics;
  cam.camera_from_world = s.trajectory.at(0).world_from_camera.inverse();
  return cam;
}

int cmd_render(const Common& c, const std::string& map_path, const Camera& cam) {
  if (c.out.empty()) throw InputError("render: --out DIR is required");
  cam.validate();
  const io::MapFile m = io::read_map(map_path);
  const RenderBuffers b = render(m.primitives, cam);
  fs::create_directories(c.out);
  io::write_png(fs::path(c.out) / "color.png", b.color);
  io::write_depth_png(fs::path(c.out) / "depth.png", b.depth);
  io::write_gray_png(fs::path(c.out) / "silhouette.png", b.silhouette);
  std::cout << "render: " << m.primitives.size() << " primitives, " << cam.width << "x" << cam.height << " -> "
            << c.out << "/{color,depth,silhouette}.png\n";
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& a_path, const std::string& b_path) {
  const RgbImage a = io::read_image(a_path);
  const RgbImage b = io::read_image(b_path);
  if (!a.same_size(b)) throw InputError("eval: images differ in size");
  const double p = psnr(a, b);
  const double s = ssim(a, b);
  std::printf("PSNR %.2f dB\nSSIM %.4f\n", p, s);
  if (!c.out.empty()) {
    std::ofstream o(c.out);
    if (!o) throw InputError("cannot write " + c.out);
    o << json{{"psnr", p}, {"ssim", s}}.dump() << "\n";
  }
  return kExitOk;
}

int cmd_bench(const Common& c, int voxels, int points, std::vector<unsigned> workers) {
  const PipelineConfig cfg = load_pipeline_config(c);
  if (voxels < 1 || points < 1) throw InputError("bench: --voxels and --points must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::vector<GprProblem> problems;
  for (int i = 0; i < voxels; ++i) {
    problems.push_back(synthetic_voxel_problem(rng, points, cfg.n_s, cfg.n_r, cfg.voxel_size, cfg.sensor_var));
  }
  if (workers.empty()) {
    workers = {1};
    const unsigned hw = std::thread::hardware_concurrency();
    if (hw > 1) workers.push_back(hw);
  }
  std::vector<BenchRow> rows;
  for (unsigned w : workers) rows.push_back(bench_solver(problems, std::max(1u, w)));
  const std::string table = format_bench_table(rows);
  std::cout << table;
  if (!c.out.empty()) io::write_file_bytes(c.out, table);
  for (const auto& r : rows) {
    if (r.failures) return kExitInternal;
  }
  return kExitOk;
}

int cmd_verify(const Common& c, const std::vector<int>& only, int workers) {
  const unsigned w = workers > 0 ? static_cast<unsigned>(workers) : std::max(1u, std::thread::hardware_concurrency());
  const std::set<int> pick(only.begin(), only.end());
  std::ostringstream all;
  int failed = 0, ran = 0;
  for (const auto& crit : acceptance::all_criteria(w)) {
    if (!pick.empty() && !pick.count(crit.id)) continue;
    const auto r = acceptance::run_criterion(crit);
    const std::string line = acceptance::format_result(r);
    std::cout << line << std::endl;
    all << line << "\n";
    failed += !r.pass;
    ++ran;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed\n";
  if (!c.out.empty()) io::write_file_bytes(c.out, all.str());
  return failed ? kExitInternal : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vxsplat: voxel-GPR Gaussian splatting mapper"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common common;

  auto* synth = app.add_subcommand("synth", "simulate a scene into a stream directory");
  int frames = 0;
  add_common(synth, common, "stream directory to create");
  synth->add_option("--frames", frames, "keep only the first N frames");

  auto* densify = app.add_subcommand("densify", "voxel-GPR densification of a PLY point cloud");
  std::string densify_in, stats_path;
  densify->add_option("input", densify_in, "input PLY")->required()->check(CLI::ExistingFile);
  add_common(densify, common, "output PLY");
  densify->add_option("--stats", stats_path, "per-voxel JSON lines (default stdout)");

  auto* map = app.add_subcommand("map", "run the mapping pipeline over a stream");
  std::string stream_dir, reports_path;
  int map_workers = 0;
  map->add_option("stream", stream_dir, "stream directory")->required();
  add_common(map, common, "output map file");
  map->add_option("--reports", reports_path, "per-frame JSON lines (default stdout)");
  map->add_option("--workers", map_workers, "threads for solving and gradients");

  auto* rend = app.add_subcommand("render", "render a map file to color, depth and silhouette PNGs");
  std::string map_path, render_stream, intrinsics, pose;
  int render_frame = 0;
  rend->add_option("map", map_path, "map file")->required()->check(CLI::ExistingFile);
  add_common(rend, common, "output directory");
  rend->add_option("--stream", render_stream, "take the camera from this stream");
  rend->add_option("--frame", render_frame, "frame index within --stream");
  rend->add_option("--intrinsics", intrinsics, "\"fx fy cx cy width height\"");
  rend->add_option("--pose", pose, "world-from-camera \"tx ty tz qx qy qz qw\"");

  auto* eval = app.add_subcommand("eval", "PSNR and SSIM between two images");
  std::string img_a, img_b;
  eval->add_option("a", img_a, "first image (PNG or PPM)")->required()->check(CLI::ExistingFile);
  eval->add_option("b", img_b, "second image (PNG or PPM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", common.out, "also write the metrics as JSON");

  auto* bench = app.add_subcommand("bench", "batched vs sequential GPR solver timings");
  int voxels = 1000, points = 32;
  std::vector<unsigned> bench_workers;
  add_common(bench, common, "also write the table to this file");
  bench->add_option("--voxels", voxels, "number of voxel problems");
  bench->add_option("--points", points, "training points per voxel");
  bench->add_option("--workers", bench_workers, "worker counts to time")->delimiter(',');

  auto* verify = app.add_subcommand("verify", "run the acceptance oracle suites");
  std::vector<int> only;
  int verify_workers = 0;
  verify->add_option("criteria", only, "criterion numbers to run (default all)");
  verify->add_option("--out", common.out, "also write the result lines to this file");
  verify->add_option("--workers", verify_workers, "threads for the optimization criterion");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitInput;
  }

  try {
    if (*synth) return cmd_synth(common, frames);
    if (*densify) return cmd_densify(common, densify_in, stats_path);
    if (*map) return cmd_map(common, stream_dir, reports_path, map_workers);
    if (*rend) return cmd_render(common, map_path, camera_from_args(render_stream, render_frame, intrinsics, pose));
    if (*eval) return cmd_eval(common, img_a, img_b);
    if (*bench) return cmd_bench(common, voxels, points, bench_workers);
    if (*verify) return cmd_verify(common, only, verify_workers);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
