#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "scenes.hpp"
#include "vxsplat/scene_synth.hpp"

using namespace vxsplat;

namespace {

SceneSpec head_on(double plane_z, LidarSpec lidar) {
  SceneSpec s;
  s.surfaces.push_back(Surface::plane(Vec3::UnitZ(), plane_z));
  s.lidar = lidar;
  s.intrinsics = scenes::small_intrinsics(16, 12, 10.0);
  s.trajectory = {{0.0, Pose::Identity()}};  // camera frame == world frame, looking down +z
  return s;
}

}  // namespace

TEST(scene_synth, noise_free_points_lie_on_surfaces) {
  SceneSpec s = scenes::static_plane_scene(2, 0.0);
  s.surfaces.push_back(Surface::sphere(Vec3(0.1, 0.0, 0.25), 0.12));
  s.surfaces.push_back(Surface::box(Vec3(-0.3, 0.1, 0.1), Vec3(-0.15, 0.25, 0.3)));
  for (std::size_t i = 0; i < 2; ++i) {
    const FrameSample f = simulate_frame(s, i);
    ASSERT_GT(f.points.size(), 1000u);
    for (const auto& p : f.points) {
      double best = 1e9;
      for (const auto& surf : s.surfaces) best = std::min(best, surf.distance(p.position));
      EXPECT_LE(best, 1e-9);
    }
  }
}

TEST(scene_synth, range_noise_statistics) {
  LidarSpec l;
  l.rays = 10000;
  l.noise = 0.01;
  l.hfov_deg = l.vfov_deg = 10.0;
  const SceneSpec s = head_on(2.0, l);
  const FrameSample f = simulate_frame(s, 0);
  ASSERT_GE(f.points.size(), 9900u);
  double sum = 0, sq = 0;
  for (const auto& p : f.points) sum += p.position.z() - 2.0;
  const double mean = sum / f.points.size();
  for (const auto& p : f.points) sq += std::pow(p.position.z() - 2.0 - mean, 2);
  const double sd = std::sqrt(sq / (f.points.size() - 1));
  EXPECT_GE(sd, 0.009);
  EXPECT_LE(sd, 0.011);
}

TEST(scene_synth, same_seed_same_frame) {
  const SceneSpec s = scenes::static_plane_scene(3, 0.01);
  const FrameSample a = simulate_frame(s, 2), b = simulate_frame(s, 2);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].position, b.points[i].position);
    EXPECT_EQ(a.points[i].color, b.points[i].color);
  }
  EXPECT_EQ(a.image, b.image);
  SceneSpec other = s;
  other.seed = s.seed + 1;
  EXPECT_NE(simulate_frame(other, 2).points[0].position, a.points[0].position);
}

TEST(scene_synth, line_scan_rows_are_sparse) {
  LidarSpec l;
  l.pattern = LidarPattern::LineScan;
  const SceneSpec s = head_on(2.0, l);
  const FrameSample f = simulate_frame(s, 0);
  std::map<long, std::vector<double>> rows;  // y in micrometers -> xs
  for (const auto& p : f.points) rows[std::lround(p.position.y() * 1e6)].push_back(p.position.x());
  ASSERT_EQ(rows.size(), static_cast<std::size_t>(l.rows));
  double max_in_row = 0, min_row_gap = 1e9;
  long prev = 0;
  bool first = true;
  for (auto& [y, xs] : rows) {
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 1; i < xs.size(); ++i) max_in_row = std::max(max_in_row, xs[i] - xs[i - 1]);
    if (!first) min_row_gap = std::min(min_row_gap, (y - prev) * 1e-6);
    prev = y;
    first = false;
  }
  EXPECT_GE(min_row_gap, 5.0 * max_in_row);
}

TEST(scene_synth, rosette_does_not_repeat_between_frames) {
  LidarSpec l;
  l.pattern = LidarPattern::Rosette;
  l.rays = 500;
  SceneSpec s = head_on(2.0, l);
  s.trajectory.push_back({0.1, Pose::Identity()});
  const FrameSample a = simulate_frame(s, 0), b = simulate_frame(s, 1);
  ASSERT_FALSE(a.points.empty());
  EXPECT_NE(a.points[0].position, b.points[0].position);
  for (const auto& p : a.points) {
    EXPECT_LE(std::abs(p.position.x() / p.position.z()), std::tan(M_PI / 4) + 1e-12);
  }
}

TEST(analytic_depth, fronto_parallel_plane_is_uniform) {
  const SceneSpec s = head_on(2.0, {});
  const ScalarImage d = analytic_depth(s, camera_at(s, 0));
  for (double v : d.data) EXPECT_NEAR(v, 2.0, 1e-12);
}

TEST(analytic_depth, tilted_plane_matches_closed_form) {
  SceneSpec s = head_on(2.0, {});
  const Vec3 n = Vec3(0.2, -0.1, 1.0).normalized();
  s.surfaces = {Surface::plane(n, 2.0 * n.z())};
  const Camera cam = camera_at(s, 0);
  const ScalarImage d = analytic_depth(s, cam);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir = cam.backproject(x, y, 1.0);
      EXPECT_NEAR(d.at(x, y), 2.0 * n.z() / n.dot(dir), 1e-12);
    }
  }
}

TEST(analytic_depth, empty_scene_is_zero) {
  SceneSpec s = head_on(2.0, {});
  s.surfaces.clear();
  const ScalarImage d = analytic_depth(s, camera_at(s, 0));
  for (double v : d.data) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(simulate_frame(s, 0), InputError);
}

TEST(scene_synth, ground_truth_image_uses_surface_color) {
  SceneSpec s = head_on(2.0, {});
  s.surfaces[0].texture.a = Vec3(0.2, 0.4, 0.6);
  const FrameSample f = simulate_frame(s, 0);
  for (int y = 0; y < f.image.height; ++y)
    for (int x = 0; x < f.image.width; ++x) EXPECT_EQ(pixel_rgb(f.image, x, y), Vec3(0.2, 0.4, 0.6));
}

TEST(scene_synth, rejects_bad_specs) {
  SceneSpec s = head_on(2.0, {});
  EXPECT_THROW(simulate_frame(s, 1), InputError);
  s.lidar.noise = -1.0;
  EXPECT_THROW(simulate_frame(s, 0), InputError);
  s.lidar.noise = 0.0;
  s.trajectory.clear();
  EXPECT_THROW(simulate_frame(s, 0), InputError);
}

TEST(surfaces, intersections) {
  const Surface sph = Surface::sphere(Vec3(0, 0, 5), 1.0);
  EXPECT_NEAR(*sph.intersect(Vec3::Zero(), Vec3::UnitZ()), 4.0, 1e-12);
  EXPECT_NEAR(*sph.intersect(Vec3(0, 0, 5), Vec3::UnitZ()), 1.0, 1e-12);  // from inside
  EXPECT_FALSE(sph.intersect(Vec3::Zero(), -Vec3::UnitZ()));
  const Surface box = Surface::box(Vec3(-1, -1, 2), Vec3(1, 1, 3));
  EXPECT_NEAR(*box.intersect(Vec3::Zero(), Vec3::UnitZ()), 2.0, 1e-12);
  EXPECT_FALSE(box.intersect(Vec3(5, 0, 0), Vec3::UnitZ()));
  EXPECT_NEAR(box.distance(Vec3(0, 0, 2.5)), 0.5, 1e-12);
  EXPECT_NEAR(box.distance(Vec3(0, 0, 4)), 1.0, 1e-12);
}
