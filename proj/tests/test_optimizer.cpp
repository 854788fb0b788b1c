#include <gtest/gtest.h>

#include <random>

#include "vxsplat/optimizer.hpp"

using namespace vxsplat;

namespace {

Camera make_cam(const Vec3& eye, int w = 40, int h = 32) {
  Camera c;
  c.fx = c.fy = 40;
  c.cx = (w - 1) / 2.0;
  c.cy = (h - 1) / 2.0;
  c.width = w;
  c.height = h;
  c.camera_from_world = look_at(eye, Vec3(0, 0, 0), Vec3::UnitY());
  return c;
}

std::vector<GaussianPrimitive> random_map(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> xy(-0.5, 0.5), z(-0.05, 0.05), s(0.02, 0.08), o(0.3, 0.9), c(0, 1);
  std::vector<GaussianPrimitive> out;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive g;
    g.position = Vec3(xy(rng), xy(rng), z(rng));
    g.scale = Vec3(s(rng), s(rng), 0.3 * s(rng));
    g.rotation = Quat(1.0, 0.2 * (c(rng) - 0.5), 0.2 * (c(rng) - 0.5), 0.2 * (c(rng) - 0.5)).normalized();
    g.opacity = o(rng);
    g.sh0 = rgb_to_sh0(Vec3(c(rng), c(rng), c(rng)));
    out.push_back(g);
  }
  return out;
}

RgbImage noisy_target(std::mt19937_64& rng, const std::vector<GaussianPrimitive>& map, const Camera& cam) {
  RgbImage img = render(map, cam).color;
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (double& v : img.data) v = std::clamp(v + 0.2 + u(rng), 0.0, 1.0);
  return img;
}

}  // namespace

TEST(local_loss_model, base_matches_full_evaluation) {
  std::mt19937_64 rng(61);
  const auto map = random_map(rng, 40);
  const std::vector<TrainingFrame> frames{{make_cam(Vec3(0, 0, 1.5)), {}}, {make_cam(Vec3(0.2, 0.1, 1.4)), {}}};
  std::vector<TrainingFrame> f2 = frames;
  for (auto& f : f2) f.observed = noisy_target(rng, map, f.camera);
  std::vector<Vec3> pts{Vec3(0.1, 0.1, 0.0), Vec3(-0.3, 0.2, 0.02)};
  const OptimizerConfig cfg;
  const LocalLossModel model(map, f2, pts, cfg);
  const LossBreakdown full = evaluate_loss(map, f2, pts, cfg);
  EXPECT_EQ(model.base().total, full.total);
}

TEST(local_loss_model, delta_equals_full_recompute_for_every_parameter) {
  std::mt19937_64 rng(62);
  const auto map = random_map(rng, 60);
  std::vector<TrainingFrame> frames{{make_cam(Vec3(0, 0, 1.5)), {}},
                                    {make_cam(Vec3(0.25, -0.1, 1.4)), {}},
                                    {make_cam(Vec3(-0.2, 0.15, 1.6)), {}}};
  for (auto& f : frames) f.observed = noisy_target(rng, map, f.camera);
  std::vector<Vec3> pts;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 50; ++i) pts.emplace_back(u(rng), u(rng), 0.1 * u(rng));
  for (bool hinge : {false, true}) {
    OptimizerConfig cfg;
    cfg.loss.structure.hinge = hinge;
    const LocalLossModel model(map, frames, pts, cfg);
    const double base = evaluate_loss(map, frames, pts, cfg).total;
    int checked = 0;
    for (int id : model.visible()) {
      if (id % 7 != 0) continue;
      for (int j = 0; j < kSplatParams; ++j) {
        for (double step : {1e-4, -0.02}) {
          std::vector<GaussianPrimitive> moved = map;
          set_param(moved[static_cast<std::size_t>(id)], j, get_param(map[static_cast<std::size_t>(id)], j) + step);
          const double full = evaluate_loss(moved, frames, pts, cfg).total - base;
          const ParamGroup grp = param_group(j);
          const double local = model.delta(id, moved[static_cast<std::size_t>(id)], grp, grp == ParamGroup::Color ? j - 3 : -1);
          EXPECT_NEAR(local, full, 1e-12) << "id " << id << " param " << j << " step " << step;
          EXPECT_NEAR(model.delta(id, moved[static_cast<std::size_t>(id)]), full, 1e-12);
          ++checked;
        }
      }
    }
    EXPECT_GT(checked, 100);
  }
}

TEST(local_loss_model, delta_handles_splat_leaving_and_entering_view) {
  std::mt19937_64 rng(63);
  auto map = random_map(rng, 20);
  std::vector<TrainingFrame> frames{{make_cam(Vec3(0, 0, 1.5)), {}}, {make_cam(Vec3(0.1, 0, 1.5)), {}}};
  for (auto& f : frames) f.observed = noisy_target(rng, map, f.camera);
  const OptimizerConfig cfg;
  const LocalLossModel model(map, frames, {}, cfg);
  const double base = evaluate_loss(map, frames, {}, cfg).total;
  std::vector<GaussianPrimitive> moved = map;
  moved[3].position = Vec3(0, 0, 5.0);  // behind both cameras
  EXPECT_NEAR(model.delta(3, moved[3]), evaluate_loss(moved, frames, {}, cfg).total - base, 1e-12);
}

TEST(optimize_step, zero_learning_rates_leave_map_unchanged) {
  std::mt19937_64 rng(64);
  auto map = random_map(rng, 20);
  std::vector<TrainingFrame> frames{{make_cam(Vec3(0, 0, 1.5)), {}}};
  frames[0].observed = noisy_target(rng, map, frames[0].camera);
  OptimizerConfig cfg;
  cfg.lr = {0, 0, 0, 0, 0};
  AdamState adam;
  const auto before = map;
  const StepResult r = optimize_step(map, frames, {}, cfg, adam);
  EXPECT_TRUE(std::isfinite(r.loss.total));
  for (std::size_t i = 0; i < map.size(); ++i) {
    EXPECT_EQ(map[i].position, before[i].position);
    EXPECT_EQ(map[i].sh0, before[i].sh0);
    EXPECT_EQ(map[i].opacity, before[i].opacity);
    EXPECT_EQ(map[i].scale, before[i].scale);
    EXPECT_EQ(map[i].rotation.coeffs(), before[i].rotation.coeffs());
  }
}

TEST(optimize_step, single_gaussian_color_fit) {
  Camera cam;
  cam.fx = cam.fy = 20;
  cam.cx = cam.cy = 3.5;
  cam.width = cam.height = 8;
  GaussianPrimitive g;
  g.position = Vec3(0, 0, 1);
  g.scale = Vec3(2, 2, 2);
  g.opacity = 1.0;
  g.sh0 = rgb_to_sh0(Vec3(0.5, 0.5, 0.5));
  std::vector<GaussianPrimitive> map{g};
  const Vec3 target(0.6, 0.42, 0.55);
  std::vector<TrainingFrame> frames{{cam, RgbImage(8, 8)}};
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) set_pixel_rgb(frames[0].observed, x, y, target);
  OptimizerConfig cfg;
  cfg.lr.position = cfg.lr.opacity = cfg.lr.scale = cfg.lr.rotation = 0.0;
  AdamState adam;
  double first = 0, last = 0;
  int steps = 0;
  for (; steps < 200; ++steps) {
    const StepResult r = optimize_step(map, frames, {}, cfg, adam);
    ASSERT_TRUE(r.applied) << r.error;
    if (steps == 0) first = r.loss.total;
    last = r.loss.total;
    const Vec3 c = pixel_rgb(render(map, cam).color, 4, 4);
    if ((c - target).cwiseAbs().maxCoeff() <= 0.05) break;
  }
  EXPECT_LT(steps, 200);
  EXPECT_LE(last, first);
}

TEST(optimize_step, reduces_loss_on_small_scene) {
  std::mt19937_64 rng(65);
  const auto truth = random_map(rng, 30);
  auto map = truth;
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& g : map) {
    g.opacity = 0.5;
    g.sh0 += rgb_to_sh0(Vec3::Constant(0.5 + u(rng))) - rgb_to_sh0(Vec3::Constant(0.5));
  }
  std::vector<TrainingFrame> frames{{make_cam(Vec3(0, 0, 1.5)), {}}, {make_cam(Vec3(0.15, 0.1, 1.5)), {}}};
  for (auto& f : frames) f.observed = render(truth, f.camera).color;
  const OptimizerConfig cfg;
  AdamState adam;
  const double start = evaluate_loss(map, frames, {}, cfg).total;
  for (int i = 0; i < 15; ++i) ASSERT_TRUE(optimize_step(map, frames, {}, cfg, adam).applied);
  const double end = evaluate_loss(map, frames, {}, cfg).total;
  EXPECT_LT(end, start);
  for (const auto& g : map) {
    EXPECT_GT(g.opacity, 0.001 - 1e-15);
    EXPECT_LE(g.opacity, 1.0);
    EXPECT_TRUE((g.scale.array() >= kScaleFloor).all());
    EXPECT_NEAR(g.rotation.norm(), 1.0, 1e-12);
  }
}

TEST(optimize_step, worker_count_does_not_change_result) {
  std::mt19937_64 rng(66);
  const auto truth = random_map(rng, 25);
  auto a = truth;
  for (auto& g : a) g.opacity = 0.4;
  auto b = a;
  std::vector<TrainingFrame> frames{{make_cam(Vec3(0, 0, 1.5)), {}}, {make_cam(Vec3(0.15, 0.1, 1.5)), {}}};
  for (auto& f : frames) f.observed = render(truth, f.camera).color;
  OptimizerConfig one, three;
  three.workers = 3;
  AdamState sa, sb;
  for (int i = 0; i < 3; ++i) {
    optimize_step(a, frames, {}, one, sa);
    optimize_step(b, frames, {}, three, sb);
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int j = 0; j < kSplatParams; ++j) EXPECT_EQ(get_param(a[i], j), get_param(b[i], j));
}
