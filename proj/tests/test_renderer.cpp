#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <Eigen/Dense>

#include "vxsplat/renderer.hpp"

using namespace vxsplat;

namespace {

Camera cam64(int w = 64, int h = 64) {
  Camera c;
  c.fx = c.fy = 60;
  c.cx = (w - 1) / 2.0;
  c.cy = (h - 1) / 2.0;
  c.width = w;
  c.height = h;
  return c;
}

GaussianPrimitive splat(const Vec3& p, double s, double opacity, const Vec3& rgb) {
  GaussianPrimitive g;
  g.position = p;
  g.scale = Vec3::Constant(s);
  g.opacity = opacity;
  g.sh0 = rgb_to_sh0(rgb);
  return g;
}

std::vector<GaussianPrimitive> random_scene(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> xy(-0.6, 0.6), z(1.0, 3.0), s(0.01, 0.1), o(0.05, 1.0), c(0.0, 1.0);
  std::vector<GaussianPrimitive> out;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive g = splat(Vec3(xy(rng), xy(rng), z(rng)), s(rng), o(rng), Vec3(c(rng), c(rng), c(rng)));
    g.scale = Vec3(s(rng), s(rng), s(rng));
    g.rotation = Quat(c(rng) - 0.5, c(rng) - 0.5, c(rng) - 0.5, c(rng) - 0.5).normalized();
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST(project_gaussian, on_axis_examples) {
  Camera c;
  c.fx = c.fy = 100;
  c.cx = c.cy = 50;
  c.width = c.height = 101;
  const double s = 0.02;
  const auto p = project_gaussian(splat(Vec3(0, 0, 1), s, 0.5, Vec3::Zero()), c);
  ASSERT_TRUE(p);
  EXPECT_NEAR(p->mean2d.x(), 50, 1e-12);
  EXPECT_NEAR(p->mean2d.y(), 50, 1e-12);
  EXPECT_EQ(p->depth, 1.0);
  const double expect = std::pow(100 * s / 1.0, 2) + kDilation;
  EXPECT_NEAR(p->cov2d(0, 0), expect, 1e-6);
  EXPECT_NEAR(p->cov2d(1, 1), expect, 1e-6);
  EXPECT_NEAR(p->cov2d(0, 1), 0.0, 1e-6);
  EXPECT_FALSE(project_gaussian(splat(Vec3(0, 0, -1), s, 0.5, Vec3::Zero()), c));
  EXPECT_FALSE(project_gaussian(splat(Vec3(0, 0, 0.005), s, 0.5, Vec3::Zero()), c));
  EXPECT_FALSE(project_gaussian(splat(Vec3(50, 0, 1), s, 0.5, Vec3::Zero()), c));
}

TEST(project_gaussian, covariance_floor_and_symmetry) {
  std::mt19937_64 rng(31);
  const Camera c = cam64();
  for (const auto& g : random_scene(rng, 100)) {
    const auto p = project_gaussian(g, c);
    if (!p) continue;
    EXPECT_EQ(p->cov2d(0, 1), p->cov2d(1, 0));
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat2>(p->cov2d).eigenvalues().minCoeff(), kDilation - 1e-9);
  }
}

TEST(blend_samples, single_opaque_splat) {
  const BlendSample s{1.0, Vec3(0.2, 0.4, 0.6), 2.5};
  const PixelAccum a = blend_samples(std::span<const BlendSample>(&s, 1));
  EXPECT_EQ(a.color, Vec3(0.2, 0.4, 0.6));
  EXPECT_EQ(a.silhouette, 1.0);
  EXPECT_EQ(a.depth, 2.5);
}

TEST(blend_samples, two_splat_expansion) {
  const BlendSample s[2] = {{0.5, Vec3(1, 0, 0), 1.0}, {0.5, Vec3(0, 0, 1), 2.0}};
  const PixelAccum a = blend_samples(s);
  EXPECT_NEAR(a.color.x(), 0.5, 1e-12);
  EXPECT_NEAR(a.color.y(), 0.0, 1e-12);
  EXPECT_NEAR(a.color.z(), 0.25, 1e-12);
  EXPECT_NEAR(a.silhouette, 0.75, 1e-12);
  EXPECT_NEAR(a.depth, 1.0, 1e-12);
}

TEST(render, two_splats_through_rasterizer) {
  // Wide, flat splats on the optical axis so that the center pixel sees
  // exactly the configured opacities.
  Camera c = cam64(65, 65);
  std::vector<GaussianPrimitive> map = {splat(Vec3(0, 0, 2), 0.3, 0.5, Vec3(0, 0, 1)),
                                        splat(Vec3(0, 0, 1), 0.3, 0.5, Vec3(1, 0, 0))};
  const RenderBuffers b = render(map, c);
  EXPECT_NEAR(b.color.at(32, 32, 0), 0.5, 1e-6);
  EXPECT_NEAR(b.color.at(32, 32, 1), 0.0, 1e-6);
  EXPECT_NEAR(b.color.at(32, 32, 2), 0.25, 1e-6);
  EXPECT_NEAR(b.silhouette.at(32, 32), 0.75, 1e-6);
  EXPECT_NEAR(b.depth.at(32, 32), 1.0, 1e-6);
}

TEST(render, empty_map_is_black) {
  const RenderBuffers b = render({}, cam64());
  EXPECT_TRUE(std::all_of(b.color.data.begin(), b.color.data.end(), [](double v) { return v == 0; }));
  EXPECT_TRUE(std::all_of(b.depth.data.begin(), b.depth.data.end(), [](double v) { return v == 0; }));
  EXPECT_TRUE(std::all_of(b.silhouette.data.begin(), b.silhouette.data.end(), [](double v) { return v == 0; }));
}

TEST(render, silhouette_identity_against_direct_composite) {
  std::mt19937_64 rng(32);
  const Camera c = cam64();
  for (int trial = 0; trial < 5; ++trial) {
    const auto map = random_scene(rng, 60);
    const RenderBuffers b = render(map, c);
    // Independent composite: every splat evaluated at every pixel.
    std::vector<std::pair<double, int>> order;
    for (std::size_t i = 0; i < map.size(); ++i) order.push_back({c.to_camera(map[i].position).z(), int(i)});
    std::sort(order.begin(), order.end());
    for (int y = 0; y < c.height; y += 3) {
      for (int x = 0; x < c.width; x += 3) {
        double transmit = 1.0;
        for (auto [z, i] : order) {
          const auto s = make_raster_splat(map[i], i, c);
          if (!s || !s->covers(x, y)) continue;
          const double a = splat_alpha(*s, x, y);
          if (a < kAlphaMin) continue;
          transmit *= 1.0 - a;
          if (transmit < kTransmittanceCutoff) break;
        }
        const double s = b.silhouette.at(x, y);
        EXPECT_NEAR(s, 1.0 - transmit, 1e-6);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_GE(b.depth.at(x, y), 0.0);
      }
    }
  }
}

TEST(render, color_bounded_by_silhouette) {
  std::mt19937_64 rng(33);
  const Camera c = cam64();
  const auto map = random_scene(rng, 80);
  Vec3 cmax = Vec3::Zero();
  for (const auto& g : map) cmax = cmax.cwiseMax(sh0_to_rgb(g.sh0));
  const RenderBuffers b = render(map, c);
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x)
      for (int ch = 0; ch < 3; ++ch) EXPECT_LE(b.color.at(x, y, ch), b.silhouette.at(x, y) * cmax(ch) + 1e-6);
}

TEST(render, adding_a_splat_never_lowers_silhouette) {
  std::mt19937_64 rng(34);
  const Camera c = cam64();
  auto map = random_scene(rng, 40);
  const RenderBuffers before = render(map, c);
  map.push_back(random_scene(rng, 1)[0]);
  const RenderBuffers after = render(map, c);
  for (std::size_t i = 0; i < before.silhouette.data.size(); ++i)
    EXPECT_GE(after.silhouette.data[i], before.silhouette.data[i] - 1e-12);
}

TEST(render, equal_depth_permutation_invariance) {
  const Camera c = cam64();
  // Overlapping footprints, all at the same depth.
  std::vector<GaussianPrimitive> map = {splat(Vec3(0.05, 0, 2), 0.08, 0.7, Vec3(1, 0, 0)),
                                        splat(Vec3(-0.05, 0, 2), 0.08, 0.7, Vec3(0, 1, 0)),
                                        splat(Vec3(0, 0.04, 2), 0.08, 0.7, Vec3(0, 0, 1)),
                                        splat(Vec3(0, 0.04, 2), 0.08, 0.7, Vec3(0, 0, 1))};
  const RenderBuffers ref = render(map, c);
  std::vector<int> idx = {0, 1, 2, 3};
  while (std::next_permutation(idx.begin(), idx.end())) {
    std::vector<GaussianPrimitive> perm;
    for (int i : idx) perm.push_back(map[i]);
    const RenderBuffers b = render(perm, c);
    EXPECT_EQ(b.color, ref.color);
    EXPECT_EQ(b.depth, ref.depth);
    EXPECT_EQ(b.silhouette, ref.silhouette);
  }
}
