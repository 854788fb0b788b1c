#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles/oracles.hpp"
#include "vxsplat/splat_init.hpp"

using namespace vxsplat;

namespace {

Subgrid random_subgrid(std::mt19937_64& rng, int n = 9) {
  std::uniform_real_distribution<double> pos(-1.0, 1.0), var(1e-4, 0.5);
  Subgrid g;
  for (int i = 0; i < n; ++i) {
    g.points.emplace_back(pos(rng), pos(rng), pos(rng));
    g.weights.push_back(1.0 / var(rng));
    g.colors.emplace_back(0.5, 0.5, 0.5);
  }
  return g;
}

VoxelPrediction grid_prediction(int n_s, int n_r) {
  VoxelPrediction p;
  p.key = {0, 0, 0};
  p.n_s = n_s;
  p.n_r = n_r;
  const int side = n_s * n_r;
  for (int i = 0; i < side * side; ++i) {
    p.points.emplace_back(0.01 * (i % side), 0.01 * (i / side), 0.1);
    p.colors.emplace_back(0.2, 0.4, 0.6);
    p.variances.push_back(0.01 + 0.001 * i);
  }
  return p;
}

Camera test_camera() {
  Camera c;
  c.fx = c.fy = 100;
  c.cx = c.cy = 50;
  c.width = c.height = 101;
  return c;
}

}  // namespace

TEST(partition_subgrids, counts_and_union) {
  const auto pred = grid_prediction(3, 3);
  const auto grids = partition_subgrids(pred, 3, 3);
  ASSERT_EQ(grids.size(), 9u);
  std::set<std::tuple<double, double, double>> seen;
  for (const auto& g : grids) {
    EXPECT_EQ(g.points.size(), 9u);
    for (const auto& p : g.points) EXPECT_TRUE(seen.insert({p.x(), p.y(), p.z()}).second);
  }
  EXPECT_EQ(seen.size(), 81u);
  EXPECT_EQ(partition_subgrids(grid_prediction(1, 4), 1, 4).size(), 1u);
  EXPECT_THROW(partition_subgrids(pred, 2, 3), ContractError);
}

TEST(partition_subgrids, weight_floor) {
  auto pred = grid_prediction(1, 2);
  pred.variances[0] = 0.0;
  pred.variances[1] = -1e-12;
  const auto g = partition_subgrids(pred, 1, 2)[0];
  EXPECT_EQ(g.weights[0], 1e8);
  EXPECT_EQ(g.weights[1], 1e8);
}

TEST(init_position, examples) {
  Subgrid sq;
  sq.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  sq.weights = {1, 1, 1, 1};
  EXPECT_TRUE(init_position(sq).isApprox(Vec3(0.5, 0.5, 0)));
  Subgrid two;
  two.points = {{0, 0, 0}, {1, 0, 0}};
  two.weights = {1, 3};
  EXPECT_DOUBLE_EQ(init_position(two).x(), 0.75);
}

TEST(init_covariance, examples) {
  Subgrid g;
  g.points = {{-1, 0, 0}, {1, 0, 0}};
  g.weights = {1, 1};
  const auto c = init_covariance(g, Vec3::Zero());
  EXPECT_TRUE(c.phi.isApprox(Vec3(1, 0, 0).asDiagonal().toDenseMatrix()));
  EXPECT_EQ(c.scale, Vec3(1, kScaleFloor, kScaleFloor));
  EXPECT_EQ(c.rotation.coeffs(), Quat::Identity().coeffs());

  Subgrid same;
  same.points.assign(4, Vec3(0.3, 0.3, 0.3));
  same.weights.assign(4, 2.0);
  const auto z = init_covariance(same, init_position(same));
  EXPECT_EQ(z.phi, Mat3::Zero());
  EXPECT_EQ(z.scale, Vec3::Constant(kScaleFloor));
}

TEST(init_covariance, variance_mode_keeps_diagonal) {
  Subgrid g;
  g.points = {{-0.5, 0, 0}, {0.5, 0, 0}};
  g.weights = {1, 1};
  EXPECT_DOUBLE_EQ(init_covariance(g, Vec3::Zero(), ScaleMode::Variance).scale.x(), 0.25);
  EXPECT_DOUBLE_EQ(init_covariance(g, Vec3::Zero(), ScaleMode::StdDev).scale.x(), 0.5);
}

TEST(init_covariance, matches_bruteforce_oracle_and_invariances) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> k(0.1, 10.0), t(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Subgrid g = random_subgrid(rng);
    const Vec3 p = init_position(g);
    const Vec3 po = oracle::weighted_mean(g.points, g.weights);
    EXPECT_LE((p - po).cwiseAbs().maxCoeff(), 1e-12);
    const auto c = init_covariance(g, p);
    const Mat3 co = oracle::weighted_covariance(g.points, g.weights, po);
    EXPECT_LE((c.phi - co).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(c.phi, c.phi.transpose());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat3>(c.phi).eigenvalues().minCoeff(), -1e-7);

    Subgrid scaled = g;
    const double s = k(rng);
    for (double& w : scaled.weights) w *= s;
    const Vec3 ps = init_position(scaled);
    EXPECT_LE((ps - p).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((init_covariance(scaled, ps).phi - c.phi).cwiseAbs().maxCoeff(), 1e-12);

    Subgrid moved = g;
    const Vec3 shift(t(rng), t(rng), t(rng));
    for (auto& q : moved.points) q += shift;
    const Vec3 pm = init_position(moved);
    EXPECT_LE((pm - (p + shift)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((init_covariance(moved, pm).phi - c.phi).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(init_color, white_pixel_and_fallback) {
  const Camera cam = test_camera();
  RgbImage img(cam.width, cam.height, 1.0);
  const Vec3 y = init_color(Vec3(0, 0, 1), cam, img, Vec3::Zero());
  EXPECT_NEAR(y.x(), 0.5 / kShC0, 1e-12);
  EXPECT_NEAR(y.x(), 1.7724538509055159, 1e-9);
  const Vec3 fb(0.1, 0.2, 0.3);
  EXPECT_LE((sh0_to_rgb(init_color(Vec3(0, 0, -1), cam, img, fb)) - fb).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((sh0_to_rgb(init_color(Vec3(10, 0, 1), cam, img, fb)) - fb).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(init_color, sh_round_trip) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 y(u(rng), u(rng), u(rng));
    EXPECT_LE((rgb_to_sh0(sh0_to_rgb(y)) - y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(init_gaussians_for_voxel, count_bounds_and_determinism) {
  const auto pred = grid_prediction(3, 3);
  const Camera cam = test_camera();
  RgbImage img(cam.width, cam.height, 0.25);
  SplatInitConfig cfg;
  const auto a = init_gaussians_for_voxel(pred, cam, img, cfg);
  ASSERT_EQ(a.size(), 9u);
  Vec3 lo = pred.points[0], hi = pred.points[0];
  for (const auto& p : pred.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  for (const auto& g : a) {
    const double m = 3.0 * g.scale.maxCoeff();
    EXPECT_TRUE((g.position.array() >= lo.array() - m).all());
    EXPECT_TRUE((g.position.array() <= hi.array() + m).all());
    EXPECT_EQ(g.opacity, 0.5);
    EXPECT_EQ(g.source, pred.key);
    EXPECT_NEAR(g.rotation.norm(), 1.0, 1e-9);
    EXPECT_TRUE((g.scale.array() >= kScaleFloor).all());
  }
  const auto b = init_gaussians_for_voxel(pred, cam, img, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].position, b[i].position);
    EXPECT_EQ(a[i].scale, b[i].scale);
    EXPECT_EQ(a[i].sh0, b[i].sh0);
  }
}
