#pragma once

#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vxsplat/frame.hpp"
#include "vxsplat/io/config.hpp"
#include "vxsplat/io/image_io.hpp"
#include "vxsplat/io/ply.hpp"
#include "vxsplat/io/trajectory.hpp"

namespace vxsplat::io {

// A stream is a directory:
//   scene.cfg        scene keys; scene.camera gives the intrinsics
//   trajectory.txt   one world-from-camera pose per frame
//   NNNNNN.ply       LiDAR points of frame N (world frame)
//   NNNNNN.png       RGB image of frame N

inline std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

inline void write_stream(const std::filesystem::path& dir, const SceneSpec& scene, std::span<const FrameSample> frames) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
  write_file_bytes(dir / "scene.cfg", scene_to_config_text(scene));
  std::vector<TimedPose> poses;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const FrameSample& f = frames[i];
    poses.push_back({f.timestamp, f.camera.camera_from_world.inverse()});
    write_ply(dir / (frame_stem(i) + ".ply"), f.points);
    write_png(dir / (frame_stem(i) + ".png"), f.image);
  }
  write_trajectory(dir / "trajectory.txt", poses);
}

struct StreamData {
  SceneSpec scene;
  std::vector<FrameSample> frames;
};

inline StreamData read_stream(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr) {
  if (!std::filesystem::is_directory(dir)) throw InputError("stream directory " + dir.string() + " does not exist");
  StreamData s;
  s.scene = scene_spec_from(read_config(dir / "scene.cfg"), warnings);
  const auto poses = read_trajectory(dir / "trajectory.txt");
  if (poses.empty()) throw InputError(dir.string() + ": trajectory.txt has no poses");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    FrameSample f;
    f.timestamp = poses[i].t;
    f.camera = s.scene.intrinsics;
    f.camera.camera_from_world = poses[i].world_from_camera.inverse();
    const auto ply = dir / (frame_stem(i) + ".ply");
    const auto png = dir / (frame_stem(i) + ".png");
    if (!std::filesystem::exists(ply)) throw InputError("missing " + ply.string());
    if (!std::filesystem::exists(png)) throw InputError("missing " + png.string());
    f.points = read_ply(ply).points;
    f.image = read_png(png);
    f.validate();
    s.frames.push_back(std::move(f));
  }
  s.scene.trajectory = poses;
  return s;
}

}  // namespace vxsplat::io
