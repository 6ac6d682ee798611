#pragma once

// Internals shared by the forward-backward passes and the control-side
// solvers (variational, adjoint): evaluation-point access, shape checks,
// LSMC regression. Not installed.

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <string>
#include <vector>

#include "hmf/solver.hpp"

namespace hmf::detail {

inline Mat unflatten_z(const ComponentDims& dims, const Eigen::RowVectorXd& row) {
  Mat z(dims.l, dims.d);
  for (int i = 0; i < dims.l; ++i)
    for (int j = 0; j < dims.d; ++j) z(i, j) = row(i * dims.d + j);
  return z;
}

inline StatePoint point_at(const TrajectoryEnsemble& e, int v, int node, int p, double t) {
  StatePoint pt;
  pt.t = t;
  pt.u = e.atlas.labels[v];
  pt.x = e.x[v][node].row(p).transpose();
  pt.y = e.y[v][node].row(p).transpose();
  pt.z = unflatten_z(e.dims, e.z[v][node].row(p));
  pt.a = e.a[v][node].row(p).transpose();
  return pt;
}

inline void check_dims_equal(const ComponentDims& a, const ComponentDims& b,
                             const char* stage) {
  if (a.n != b.n || a.l != b.l || a.d != b.d || a.k != b.k)
    fail(ErrorCode::InvalidInput, stage, "component dimensions do not match");
}

inline void check_ensemble(const CoefficientModel& m, const TrajectoryEnsemble& e,
                           const char* stage) {
  check_dims_equal(m.dims(), e.dims, stage);
  e.grid.validate();
  const int M = e.atlas.size();
  const std::size_t nodes = static_cast<std::size_t>(e.grid.steps) + 1;
  if (M == 0) fail(ErrorCode::InvalidInput, stage, "ensemble has an empty atlas");
  for (const auto* arrays : {&e.x, &e.y, &e.z, &e.a}) {
    if (static_cast<int>(arrays->size()) != M || (*arrays)[0].size() != nodes)
      fail(ErrorCode::InvalidInput, stage, "ensemble arrays not sized [type][node]");
  }
}

inline void check_noise(const TrajectoryEnsemble& e, const NoiseEnsemble& noise,
                        const char* stage) {
  if (noise.d != e.dims.d || noise.grid.steps != e.grid.steps ||
      noise.grid.horizon != e.grid.horizon)
    fail(ErrorCode::InvalidInput, stage, "noise ensemble does not match trajectories");
  for (int v = 0; v < e.atlas.size(); ++v) {
    if (noise.particles(v) != e.particles(v))
      fail(ErrorCode::InvalidInput, stage, "noise particle count does not match");
  }
}

inline void check_flow(const TrajectoryEnsemble& e, const KernelFlow& flow,
                       const char* stage) {
  if (static_cast<int>(flow.nodes.size()) != e.grid.steps + 1)
    fail(ErrorCode::InvalidInput, stage, "kernel flow node count does not match grid");
  for (const MeasureKernel& k : flow.nodes) {
    if (!k.atlas.same_as(e.atlas))
      fail(ErrorCode::InvalidInput, stage, "kernel flow atlas does not match");
    check_dims_equal(k.dims, e.dims, stage);
  }
  if (!flow.terminal_x.atlas.same_as(e.atlas) || flow.terminal_x.mask != kMaskX)
    fail(ErrorCode::InvalidInput, stage, "terminal kernel must be the X marginal");
}

// Aggregates per node for every type, or empty when the model has no
// running channels.
inline std::vector<std::vector<AggregateValues>> flow_aggregates(
    const CoefficientModel& m, const KernelFlow& flow, const TimeGrid& grid) {
  std::vector<std::vector<AggregateValues>> aggs(flow.nodes.size());
  if (m.channels().empty()) {
    for (std::size_t j = 0; j < aggs.size(); ++j)
      aggs[j].assign(flow.nodes[j].atlas.size(), AggregateValues{});
    return aggs;
  }
  for (std::size_t j = 0; j < aggs.size(); ++j)
    aggs[j] = compute_aggregates(m, flow.nodes[j], grid.node(static_cast<int>(j)));
  return aggs;
}

[[noreturn]] inline void diverged(const char* stage, const char* pass, int v, int step) {
  fail(ErrorCode::NonConvergence, stage,
       std::string(pass) + " state diverged at step " + std::to_string(step) +
           " (type " + std::to_string(v) + ")");
}

// Least-squares fit with pivoted QR; rank deficiency switches to a ridge
// solve on the Gram matrix. Fitted values, not coefficients, are the product.
struct Regressor {
  Mat B;
  Eigen::ColPivHouseholderQR<Mat> qr;
  bool ridge = false;
  Eigen::LDLT<Mat> gram;

  Regressor(Mat basis, double ridge_scale) : B(std::move(basis)) {
    qr.compute(B);
    if (qr.rank() < B.cols()) {
      ridge = true;
      Mat g = B.transpose() * B;
      const double trace = g.trace();
      g.diagonal().array() += ridge_scale * (trace > 0 ? trace / B.cols() : 1.0);
      gram.compute(g);
    }
  }

  Mat fit(const Mat& targets) const {
    if (!ridge) return B * qr.solve(targets);
    return B * gram.solve(B.transpose() * targets);
  }
};

inline Mat basis_matrix(const Mat& x, const Mat& chi, const RegressionSpec& spec) {
  const int rows = static_cast<int>(x.rows());
  const int n = static_cast<int>(x.cols());
  int cols = 1;
  if (spec.degree >= 1) cols += n;
  if (spec.degree >= 2) cols += n * (n + 1) / 2;
  if (spec.include_initial) cols += static_cast<int>(chi.cols());
  Mat B(rows, cols);
  B.col(0).setOnes();
  int c = 1;
  if (spec.degree >= 1) {
    B.middleCols(c, n) = x;
    c += n;
  }
  if (spec.degree >= 2) {
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) B.col(c++) = x.col(i).cwiseProduct(x.col(j));
  }
  if (spec.include_initial) B.middleCols(c, chi.cols()) = chi;
  return B;
}

inline void check_regression_spec(const RegressionSpec& spec, const char* stage) {
  if (spec.degree < 0 || spec.degree > 2)
    fail(ErrorCode::InvalidInput, stage, "basis degree must be 0, 1 or 2");
  if (!(spec.ridge >= 0) || !std::isfinite(spec.ridge))
    fail(ErrorCode::InvalidInput, stage, "ridge strength must be finite and >= 0");
}

// Sup over nodes of the m-weighted mean-square distance between two
// [type][node] stacks of equal shape.
inline double stack_distance(const TypeAtlas& atlas, int steps,
                             const std::vector<std::vector<Mat>>& xa,
                             const std::vector<std::vector<Mat>>& xb) {
  double worst = 0.0;
  for (int j = 0; j <= steps; ++j) {
    double acc = 0.0;
    for (int v = 0; v < atlas.size(); ++v)
      acc += atlas.weights[v] * (xa[v][j] - xb[v][j]).squaredNorm() / xa[v][j].rows();
    worst = std::max(worst, std::sqrt(acc));
  }
  return worst;
}

}  // namespace hmf::detail
