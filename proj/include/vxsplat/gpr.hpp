#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vxsplat/common.hpp"
#include "vxsplat/voxel_map.hpp"

namespace vxsplat {

using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Floor on each diagonal noise term, so noiseless problems still factor.
inline constexpr double kGprJitter = 1e-10;

/// Indices of the two parameter axes for a value axis: X -> (y, z),
/// Y -> (z, x), Z -> (x, y).
inline std::pair<int, int> parameter_axes(Axis value_axis) {
  switch (value_axis) {
    case Axis::X: return {1, 2};
    case Axis::Y: return {2, 0};
    case Axis::Z: return {0, 1};
  }
  return {0, 1};
}

struct AxisSelection {
  Axis value_axis = Axis::Z;
  Eigen::VectorXd f;
  Points2 x;
};

inline AxisSelection split_by_axis(std::span<const Vec3> points, Axis value_axis) {
  const auto [a, b] = parameter_axes(value_axis);
  const int v = static_cast<int>(value_axis);
  AxisSelection sel;
  sel.value_axis = value_axis;
  sel.f.resize(static_cast<Eigen::Index>(points.size()));
  sel.x.resize(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    sel.f(r) = points[i](v);
    sel.x(r, 0) = points[i](a);
    sel.x(r, 1) = points[i](b);
  }
  return sel;
}

inline Vec3 assemble_point(double u, double w, double value, Axis value_axis) {
  const auto [a, b] = parameter_axes(value_axis);
  Vec3 p;
  p(static_cast<int>(value_axis)) = value;
  p(a) = u;
  p(b) = w;
  return p;
}

/// PCA plane fit: the value axis is the coordinate axis closest in angle to
/// the smallest-eigenvalue eigenvector. Ties prefer Z, then Y, then X.
/// Throws DegenerateGeometryError when the second eigenvalue is not above
/// min_spread_var (absolute, m^2) or the points are numerically collinear.
inline AxisSelection select_value_axis(std::span<const Vec3> points, double min_spread_var = 0.0) {
  if (points.size() < 3) throw DegenerateGeometryError("axis selection needs at least 3 points");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 evals = eig.eigenvalues();  // ascending
  if (!(evals(2) > 1e-24) || evals(1) <= 1e-9 * evals(2) || evals(1) <= min_spread_var) {
    throw DegenerateGeometryError("point set is collinear or coincident");
  }
  const Vec3 normal = eig.eigenvectors().col(0).cwiseAbs();
  const double best = normal.maxCoeff();
  Axis chosen = Axis::X;
  for (Axis a : {Axis::Z, Axis::Y, Axis::X}) {
    if (normal(static_cast<int>(a)) >= best - 1e-12) {
      chosen = a;
      break;
    }
  }
  return split_by_axis(points, chosen);
}

/// Axis-aligned rectangle in the parameter plane.
struct Extent2 {
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();
};

/// (n_s*n_r)^2 query points: n_s x n_s subgrids, each an n_r x n_r grid of
/// fine-cell centers. Ordered by (subgrid row, subgrid col, fine row, fine
/// col); a row runs along the first parameter coordinate.
inline Points2 make_mesh_grid(const Extent2& extent, int n_s, int n_r) {
  if (n_s < 1 || n_r < 1) throw InputError("make_mesh_grid: n_s and n_r must be >= 1");
  const int side = n_s * n_r;
  const Vec2 step = (extent.hi - extent.lo) / static_cast<double>(side);
  Points2 grid(static_cast<Eigen::Index>(side) * side, 2);
  Eigen::Index row = 0;
  for (int sr = 0; sr < n_s; ++sr) {
    for (int sc = 0; sc < n_s; ++sc) {
      for (int fr = 0; fr < n_r; ++fr) {
        for (int fc = 0; fc < n_r; ++fc) {
          grid(row, 0) = extent.lo.x() + (sc * n_r + fc + 0.5) * step.x();
          grid(row, 1) = extent.lo.y() + (sr * n_r + fr + 0.5) * step.y();
          ++row;
        }
      }
    }
  }
  return grid;
}

/// Squared-exponential kernel exp(-lambda * |a_i - b_j|^2).
inline Eigen::MatrixXd kernel_matrix(const Points2& xa, const Points2& xb, double lambda) {
  if (!(lambda > 0.0)) throw InputError("kernel lambda must be positive");
  Eigen::MatrixXd k(xa.rows(), xb.rows());
  for (Eigen::Index j = 0; j < xb.rows(); ++j) {
    for (Eigen::Index i = 0; i < xa.rows(); ++i) {
      const double du = xa(i, 0) - xb(j, 0);
      const double dv = xa(i, 1) - xb(j, 1);
      k(i, j) = std::exp(-lambda * (du * du + dv * dv));
    }
  }
  return k;
}

struct GprProblem {
  Points2 x;
  Eigen::VectorXd f;
  Eigen::VectorXd noise_diag;
  Points2 x_star;
  double lambda = 1.0;
  bool keep_full_covariance = false;
};

struct GprResult {
  Eigen::VectorXd mu_star;
  Eigen::VectorXd sigma_star_diag;
  std::optional<Eigen::MatrixXd> sigma_star_full;
};

/// Posterior mean and covariance on x_star:
///   mu    = K*^T (K + diag(noise))^-1 f
///   Sigma = K** - K*^T (K + diag(noise))^-1 K*
/// via Cholesky of the regularized kernel. f is used as given.
inline GprResult gpr_solve(const GprProblem& problem) {
  const Eigen::Index n = problem.x.rows();
  if (n < 1) throw InputError("gpr_solve: no training points");
  if (problem.f.size() != n || problem.noise_diag.size() != n) {
    throw InputError("gpr_solve: x, f and noise_diag sizes differ");
  }
  if ((problem.noise_diag.array() < 0.0).any() || !problem.noise_diag.allFinite()) {
    throw InputError("gpr_solve: noise variances must be finite and non-negative");
  }

  Eigen::MatrixXd k = kernel_matrix(problem.x, problem.x, problem.lambda);
  k.diagonal().array() += problem.noise_diag.array().max(kGprJitter);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw NumericalError("Cholesky factorization failed");

  const Eigen::MatrixXd k_star = kernel_matrix(problem.x, problem.x_star, problem.lambda);
  GprResult out;
  out.mu_star = k_star.transpose() * llt.solve(problem.f);
  const Eigen::MatrixXd v = llt.matrixL().solve(k_star);
  out.sigma_star_diag = (1.0 - v.colwise().squaredNorm().array()).matrix().transpose();
  if (problem.keep_full_covariance) {
    Eigen::MatrixXd full = kernel_matrix(problem.x_star, problem.x_star, problem.lambda);
    full.noalias() -= v.transpose() * v;
    out.sigma_star_full = std::move(full);
  }
  if (!out.mu_star.allFinite() || !out.sigma_star_diag.allFinite()) {
    throw NumericalError("non-finite posterior");
  }
  return out;
}

struct BatchItem {
  std::optional<GprResult> result;
  std::string error;

  bool ok() const { return result.has_value(); }
};

/// Solves independent problems; worker w handles indices w, w+W, ... so the
/// per-problem arithmetic is the same as the sequential path. Failures are
/// reported per index.
inline std::vector<BatchItem> gpr_solve_batch(std::span<const GprProblem> problems, unsigned workers = 1) {
  std::vector<BatchItem> out(problems.size());
  auto run = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < problems.size(); i += stride) {
      try {
        out[i].result = gpr_solve(problems[i]);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(problems.size(), 1))));
  if (workers == 1) {
    run(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  for (auto& t : pool) t.join();
  return out;
}

struct DensifyConfig {
  std::size_t tau = 10;
  int n_s = 3;
  int n_r = 3;
  double eta = 0.3;
  double kernel_lambda = 1.0;
  unsigned workers = 1;
  /// Minimum in-plane spread, in multiples of the sensor variance, for the
  /// second PCA eigenvalue; below it the cell is treated as degenerate.
  double planarity_factor = 2.0;
};

struct DensifiedVoxel {
  VoxelPrediction prediction;
  bool first_solve = false;
};

struct DensifyOutput {
  std::vector<DensifiedVoxel> voxels;
  std::vector<std::string> warnings;
  std::vector<std::pair<VoxelKey, std::string>> errors;
};

/// Parameter-plane rectangle of a voxel for the given value axis.
inline Extent2 voxel_parameter_extent(const VoxelKey& key, double voxel_size, Axis value_axis) {
  const Vec3 lo = voxel_min_corner(key, voxel_size);
  const auto [a, b] = parameter_axes(value_axis);
  Extent2 e;
  e.lo = Vec2(lo(a), lo(b));
  e.hi = e.lo + Vec2::Constant(voxel_size);
  return e;
}

/// Runs one densification pass over the voxels touched by a frame: Ready and
/// Active cells are solved in one batch; Unready cells that crossed tau are
/// promoted first; Converged cells are left alone.
inline DensifyOutput densify_frame(const FrameUpdateSet& update_set, VoxelMap& map, const DensifyConfig& cfg) {
  struct Job {
    VoxelKey key;
    Axis axis;
    double f_mean;
    std::vector<ColoredPoint> training;
    Points2 x;
  };

  DensifyOutput out;
  std::vector<Job> jobs;
  std::vector<GprProblem> problems;
  const double min_spread = cfg.planarity_factor * map.sensor_var();

  for (const VoxelKey& key : update_set.keys) {
    VoxelCell* cell = map.find(key);
    if (!cell) throw ContractError("update set references missing voxel " + to_string(key));
    if (cell->state == VoxelState::Converged) continue;
    if (cell->state == VoxelState::Unready && cell->points.size() < cfg.tau) continue;

    std::vector<ColoredPoint> training = cell->training_points();
    std::vector<Vec3> positions;
    positions.reserve(training.size());
    for (const auto& p : training) positions.push_back(p.position);

    AxisSelection sel;
    try {
      sel = select_value_axis(positions, min_spread);
    } catch (const DegenerateGeometryError& e) {
      out.warnings.push_back("voxel " + to_string(key) + " skipped: " + e.what());
      continue;
    }
    if (cell->state == VoxelState::Unready) advance_state(*cell, VoxelState::Ready, &map.log());
    map.log().submissions.push_back({map.log().frame, key, cell->state});

    GprProblem prob;
    const double f_mean = sel.f.mean();
    prob.f = sel.f.array() - f_mean;
    prob.x = sel.x;
    prob.noise_diag.resize(static_cast<Eigen::Index>(training.size()));
    for (std::size_t i = 0; i < training.size(); ++i) prob.noise_diag(static_cast<Eigen::Index>(i)) = training[i].noise_var;
    prob.x_star = make_mesh_grid(voxel_parameter_extent(key, map.voxel_size(), sel.value_axis), cfg.n_s, cfg.n_r);
    prob.lambda = cfg.kernel_lambda;

    jobs.push_back({key, sel.value_axis, f_mean, std::move(training), std::move(sel.x)});
    problems.push_back(std::move(prob));
  }

  const std::vector<BatchItem> results = gpr_solve_batch(problems, cfg.workers);

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Job& job = jobs[j];
    if (!results[j].ok()) {
      out.errors.emplace_back(job.key, results[j].error);
      continue;
    }
    const GprResult& res = *results[j].result;
    const Points2& xs = problems[j].x_star;

    VoxelPrediction pred;
    pred.key = job.key;
    pred.value_axis = job.axis;
    pred.n_s = cfg.n_s;
    pred.n_r = cfg.n_r;
    pred.points.reserve(static_cast<std::size_t>(xs.rows()));
    for (Eigen::Index q = 0; q < xs.rows(); ++q) {
      pred.points.push_back(assemble_point(xs(q, 0), xs(q, 1), res.mu_star(q) + job.f_mean, job.axis));
      pred.variances.push_back(res.sigma_star_diag(q));

      // Color of the nearest training point in the parameter plane.
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < job.x.rows(); ++i) {
        const double d = (job.x.row(i) - xs.row(q)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      pred.colors.push_back(job.training[static_cast<std::size_t>(best)].color);
    }

    VoxelCell& cell = map.at(job.key);
    const bool first = cell.state == VoxelState::Ready;
    update_voxel_variances(cell, pred, cfg.eta, &map.log());
    out.voxels.push_back({std::move(pred), first});
  }
  return out;
}

}  // namespace vxsplat
