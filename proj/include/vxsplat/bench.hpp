#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vxsplat/gpr.hpp"

namespace vxsplat {

/// Plane patch inside one voxel: n noisy samples at uneven positions and the
/// (n_s n_r)^2 prediction grid over the voxel face.
inline GprProblem synthetic_voxel_problem(std::mt19937_64& rng, int n, int n_s = 3, int n_r = 3,
                                          double voxel_size = 0.2, double noise_var = 1e-4) {
  std::uniform_real_distribution<double> u(0.0, voxel_size), slope(-0.5, 0.5);
  std::normal_distribution<double> g(0.0, std::sqrt(noise_var));
  const double a = slope(rng), b = slope(rng);
  GprProblem p;
  p.x.resize(n, 2);
  p.f.resize(n);
  p.noise_diag = Eigen::VectorXd::Constant(n, noise_var);
  for (int i = 0; i < n; ++i) {
    // Squaring one coordinate bunches samples toward an edge.
    const double s = u(rng), t = u(rng);
    p.x(i, 0) = s * s / voxel_size;
    p.x(i, 1) = t;
    p.f(i) = a * p.x(i, 0) + b * p.x(i, 1) + g(rng);
  }
  Extent2 e;
  e.hi = Vec2::Constant(voxel_size);
  p.x_star = make_mesh_grid(e, n_s, n_r);
  return p;
}

struct BenchRow {
  std::size_t voxels = 0;
  int n = 0;
  int m = 0;
  unsigned workers = 1;
  double sequential_ms = 0.0;
  double batched_ms = 0.0;
  double max_abs_diff = 0.0;
  std::size_t failures = 0;
};

/// Times a plain loop of gpr_solve against gpr_solve_batch on the same
/// problems and records their largest disagreement.
inline BenchRow bench_solver(const std::vector<GprProblem>& problems, unsigned workers) {
  using clock = std::chrono::steady_clock;
  BenchRow row;
  row.voxels = problems.size();
  row.n = problems.empty() ? 0 : static_cast<int>(problems[0].x.rows());
  row.m = problems.empty() ? 0 : static_cast<int>(problems[0].x_star.rows());
  row.workers = workers;

  std::vector<std::optional<GprResult>> seq(problems.size());
  auto t0 = clock::now();
  for (std::size_t i = 0; i < problems.size(); ++i) {
    try {
      seq[i] = gpr_solve(problems[i]);
    } catch (const std::exception&) {
    }
  }
  row.sequential_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();

  t0 = clock::now();
  const auto batch = gpr_solve_batch(problems, workers);
  row.batched_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();

  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (!batch[i].ok() || !seq[i]) {
      row.failures += batch[i].ok() != seq[i].has_value() || !batch[i].ok();
      continue;
    }
    row.max_abs_diff = std::max(row.max_abs_diff, (batch[i].result->mu_star - seq[i]->mu_star).cwiseAbs().maxCoeff());
    row.max_abs_diff = std::max(row.max_abs_diff,
                                (batch[i].result->sigma_star_diag - seq[i]->sigma_star_diag).cwiseAbs().maxCoeff());
  }
  return row;
}

inline std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::string out = "voxels     n     m  workers  sequential_ms  batched_ms  speedup  max_abs_diff  failures\n";
  char buf[200];
  for (const BenchRow& r : rows) {
    const double speedup = r.batched_ms > 0 ? r.sequential_ms / r.batched_ms : 0.0;
    std::snprintf(buf, sizeof buf, "%6zu %5d %5d %8u %14.2f %11.2f %8.2f %13.3g %9zu\n", r.voxels, r.n, r.m, r.workers,
                  r.sequential_ms, r.batched_ms, speedup, r.max_abs_diff, r.failures);
    out += buf;
  }
  return out;
}

}  // namespace vxsplat
