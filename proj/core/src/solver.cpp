#include "hmf/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <ostream>
#include <utility>

#include "hmf/common.hpp"
#include "hmf/rng.hpp"
#include "solver_detail.hpp"

namespace hmf {
namespace {

constexpr const char* kStage = "solver";

using detail::basis_matrix;
using detail::point_at;
using detail::Regressor;
using detail::unflatten_z;

void check_ensemble(const CoefficientModel& m, const TrajectoryEnsemble& e) {
  detail::check_ensemble(m, e, kStage);
}

void check_noise(const TrajectoryEnsemble& e, const NoiseEnsemble& noise) {
  detail::check_noise(e, noise, kStage);
}

void check_flow(const TrajectoryEnsemble& e, const KernelFlow& flow) {
  detail::check_flow(e, flow, kStage);
}

std::vector<std::vector<AggregateValues>> flow_aggregates(const CoefficientModel& m,
                                                          const KernelFlow& flow,
                                                          const TimeGrid& grid) {
  return detail::flow_aggregates(m, flow, grid);
}

[[noreturn]] void diverged(const char* pass, int v, int step) {
  detail::diverged(kStage, pass, v, step);
}

void check_regression_spec(const RegressionSpec& spec) {
  detail::check_regression_spec(spec, kStage);
}

}  // namespace

void TimeGrid::validate() const {
  if (!(horizon > 0) || !std::isfinite(horizon))
    fail(ErrorCode::InvalidInput, kStage, "horizon must be positive and finite");
  if (steps < 1) fail(ErrorCode::InvalidInput, kStage, "grid needs at least one step");
}

NoiseEnsemble simulate_noise(const CoefficientModel& m, const InitialLaw& law,
                             const TypeAtlas& atlas, int particles,
                             const TimeGrid& grid, uint64_t seed) {
  grid.validate();
  if (particles < 1)
    fail(ErrorCode::InvalidInput, kStage, "particle count must be >= 1");
  if (atlas.size() == 0) fail(ErrorCode::InvalidInput, kStage, "empty type atlas");
  law.validate(m.dims());

  NoiseEnsemble noise;
  noise.grid = grid;
  noise.seed = seed;
  noise.d = m.dims().d;
  const int M = atlas.size();
  const int n = m.dims().n;
  const int cols = grid.steps * noise.d;
  const double root_dt = std::sqrt(grid.dt());
  noise.increments.resize(M);
  noise.initial.resize(M);
  for (int v = 0; v < M; ++v) {
    noise.increments[v].resize(particles, cols);
    noise.initial[v].resize(particles, n);
    Mat& incr = noise.increments[v];
    Mat& init = noise.initial[v];
    const double u = atlas.labels[v];
    parallel_for(particles, [&](int p) {
      RandomStream stream(seed, static_cast<uint32_t>(v), static_cast<uint32_t>(p),
                          kStreamBrownian);
      for (int c = 0; c < cols; ++c) incr(p, c) = root_dt * stream.normal(c);
      init.row(p) = law.sample(u, seed, v, p).transpose();
    });
  }
  return noise;
}

TrajectoryEnsemble initial_ensemble(const CoefficientModel& m, const TypeAtlas& atlas,
                                    const NoiseEnsemble& noise) {
  if (atlas.size() == 0) fail(ErrorCode::InvalidInput, kStage, "empty type atlas");
  if (static_cast<int>(noise.initial.size()) != atlas.size())
    fail(ErrorCode::InvalidInput, kStage, "noise ensemble does not match the atlas");
  TrajectoryEnsemble e;
  e.atlas = atlas;
  e.dims = m.dims();
  e.grid = noise.grid;
  const int M = atlas.size();
  const int nodes = noise.grid.steps + 1;
  e.x.resize(M);
  e.y.resize(M);
  e.z.resize(M);
  e.a.resize(M);
  for (int v = 0; v < M; ++v) {
    const int N = noise.particles(v);
    e.x[v].assign(nodes, noise.initial[v]);
    e.y[v].assign(nodes, Mat::Zero(N, e.dims.l));
    e.z[v].assign(nodes, Mat::Zero(N, e.dims.zdim()));
    e.a[v].assign(nodes, Mat::Zero(N, e.dims.k));
  }
  return e;
}

MeasureKernel empirical_kernel(const TrajectoryEnsemble& e, int node) {
  if (node < 0 || node > e.grid.steps)
    fail(ErrorCode::InvalidInput, kStage, "node index out of range");
  MeasureKernel k;
  k.atlas = e.atlas;
  k.dims = e.dims;
  k.mask = kMaskAll;
  k.clouds.reserve(e.atlas.size());
  for (int v = 0; v < e.atlas.size(); ++v) {
    Mat points(e.particles(v), e.dims.total());
    int c = 0;
    for (const Mat* block : {&e.x[v][node], &e.y[v][node], &e.z[v][node], &e.a[v][node]}) {
      points.middleCols(c, block->cols()) = *block;
      c += static_cast<int>(block->cols());
    }
    k.clouds.push_back(uniform_cloud(points));
  }
  return k;
}

KernelFlow empirical_flow(const TrajectoryEnsemble& e) {
  KernelFlow flow;
  flow.nodes.reserve(e.grid.steps + 1);
  for (int j = 0; j <= e.grid.steps; ++j) flow.nodes.push_back(empirical_kernel(e, j));
  flow.terminal_x = project(flow.nodes.back(), kMaskX);
  return flow;
}

void solve_forward(const CoefficientModel& m, const Control& ctrl,
                   const NoiseEnsemble& noise, const KernelFlow& flow,
                   TrajectoryEnsemble& e) {
  check_ensemble(m, e);
  check_noise(e, noise);
  check_flow(e, flow);
  if (ctrl.dim() != e.dims.k)
    fail(ErrorCode::InvalidInput, kStage, "control dimension does not match model");
  const auto aggs = flow_aggregates(m, flow, e.grid);
  const int n = e.dims.n;
  const int d = e.dims.d;
  const double dt = e.grid.dt();

  for (int v = 0; v < e.atlas.size(); ++v) {
    const double u = e.atlas.labels[v];
    const int N = e.particles(v);
    e.x[v][0] = noise.initial[v];
    for (int j = 0; j < e.grid.steps; ++j) {
      const double t = e.grid.node(j);
      e.a[v][j] = ctrl.values(v, u, j, t, e.x[v][j]);
      if (e.a[v][j].rows() != N || e.a[v][j].cols() != e.dims.k)
        fail(ErrorCode::Internal, kStage, "control returned a misshaped block");
      const AggregateValues& agg = aggs[j][v];
      Mat& next = e.x[v][j + 1];
      parallel_for(N, [&](int p) {
        const StatePoint pt = point_at(e, v, j, p, t);
        const Vec b = m.drift(pt, agg);
        const Mat sig = m.diffusion(pt, agg);
        if (b.size() != n || sig.rows() != n || sig.cols() != d)
          fail(ErrorCode::Internal, kStage, "model returned a misshaped coefficient");
        const Vec db = noise.increments[v].row(p).segment(j * d, d).transpose();
        next.row(p) = e.x[v][j].row(p) + dt * b.transpose() + (sig * db).transpose();
      });
      if (!next.allFinite()) diverged("forward", v, j + 1);
    }
    e.a[v][e.grid.steps] =
        ctrl.values(v, u, e.grid.steps, e.grid.horizon, e.x[v][e.grid.steps]);
    if (e.a[v][e.grid.steps].rows() != N || e.a[v][e.grid.steps].cols() != e.dims.k)
      fail(ErrorCode::Internal, kStage, "control returned a misshaped block");
  }
}

BackwardDiagnostics solve_backward(const CoefficientModel& m, const NoiseEnsemble& noise,
                                   const KernelFlow& flow, const RegressionSpec& basis,
                                   TrajectoryEnsemble& e) {
  check_ensemble(m, e);
  check_noise(e, noise);
  check_flow(e, flow);
  check_regression_spec(basis);
  const auto aggs = flow_aggregates(m, flow, e.grid);
  const auto taggs = m.terminal_channels().empty()
                         ? std::vector<AggregateValues>(e.atlas.size())
                         : compute_terminal_aggregates(m, flow.terminal_x);
  const int l = e.dims.l;
  const int d = e.dims.d;
  const int steps = e.grid.steps;
  const double dt = e.grid.dt();

  BackwardDiagnostics diag;
  double sq_fit = 0.0;  // accumulated ||e||^2 over (type, particle, step)
  double sq_mart = 0.0;

  for (int v = 0; v < e.atlas.size(); ++v) {
    const double u = e.atlas.labels[v];
    const int N = e.particles(v);
    Mat& yT = e.y[v][steps];
    parallel_for(N, [&](int p) {
      const Vec g = m.terminal_condition(u, e.x[v][steps].row(p).transpose(), taggs[v]);
      if (g.size() != l)
        fail(ErrorCode::Internal, kStage, "model returned a misshaped terminal value");
      yT.row(p) = g.transpose();
    });
    if (!yT.allFinite()) diverged("backward", v, steps);

    for (int j = steps - 1; j >= 0; --j) {
      const double t = e.grid.node(j);
      const AggregateValues& agg = aggs[j][v];
      // X_0 is the initial draw itself, so the chi0 columns would duplicate it
      RegressionSpec spec = basis;
      if (j == 0) spec.include_initial = false;
      const Regressor reg(basis_matrix(e.x[v][j], noise.initial[v], spec), basis.ridge);
      if (reg.ridge) ++diag.ridge_fallbacks;

      const Mat ypred = reg.fit(e.y[v][j + 1]);

      // martingale-increment regression for Z, predictable part removed
      Mat ztarget(N, e.dims.zdim());
      for (int p = 0; p < N; ++p) {
        for (int i = 0; i < l; ++i)
          for (int jj = 0; jj < d; ++jj)
            ztarget(p, i * d + jj) = (e.y[v][j + 1](p, i) - ypred(p, i)) *
                                     noise.increments[v](p, j * d + jj) / dt;
      }
      e.z[v][j] = reg.fit(ztarget);

      Mat yin = ypred;
      Mat target(N, l);
      for (int pass = 0; pass < 2; ++pass) {
        parallel_for(N, [&](int p) {
          StatePoint pt = point_at(e, v, j, p, t);
          pt.y = yin.row(p).transpose();
          const Vec f = m.driver(pt, agg);
          if (f.size() != l)
            fail(ErrorCode::Internal, kStage, "model returned a misshaped driver");
          target.row(p) = e.y[v][j + 1].row(p) + dt * f.transpose();
        });
        yin = reg.fit(target);
      }
      e.y[v][j] = yin;
      if (!e.y[v][j].allFinite() || !e.z[v][j].allFinite()) diverged("backward", v, j);

      // defect-bound bookkeeping at the stored iterate
      const double wv = e.atlas.weights[v];
      for (int p = 0; p < N; ++p) {
        const StatePoint pt = point_at(e, v, j, p, t);
        const Vec f = m.driver(pt, agg);
        const Vec efit = (e.y[v][j + 1].row(p) - e.y[v][j].row(p)).transpose() + dt * f;
        const Vec db = noise.increments[v].row(p).segment(j * d, d).transpose();
        const Vec mart = unflatten_z(e.dims, e.z[v][j].row(p)) * db;
        sq_fit += wv / N * dt * efit.squaredNorm();
        sq_mart += wv / N * dt * mart.squaredNorm();
      }
    }
    e.z[v][steps] = e.z[v][steps - 1];
  }
  diag.residual_bound = std::sqrt(sq_fit) + std::sqrt(sq_mart);
  return diag;
}

namespace {

// max over nodes of the m-weighted rms distance between two array stacks
double stack_distance(const TrajectoryEnsemble& a,
                      const std::vector<std::vector<Mat>>& xa,
                      const std::vector<std::vector<Mat>>& xb) {
  return detail::stack_distance(a.atlas, a.grid.steps, xa, xb);
}

struct InnerResult {
  int passes = 0;
  BackwardDiagnostics backward;
  int ridge_total = 0;
};

InnerResult inner_alternation(const CoefficientModel& m, const Control& ctrl,
                              const NoiseEnsemble& noise, const KernelFlow& flow,
                              const PicardOptions& opts, TrajectoryEnsemble& e) {
  // when neither b nor sigma reads (Y, Z) the forward pass is already
  // consistent after one sweep
  const ConstantSheet& s = m.sheet();
  const bool decoupled = s.rho1 == 0 && s.rho2 == 0 && s.w2 == 0 && s.w3 == 0;
  const int limit = decoupled ? 1 : opts.max_inner;

  InnerResult r;
  std::vector<std::vector<Mat>> px, py;
  for (int pass = 1; pass <= limit; ++pass) {
    solve_forward(m, ctrl, noise, flow, e);
    r.backward = solve_backward(m, noise, flow, opts.basis, e);
    r.ridge_total += r.backward.ridge_fallbacks;
    r.passes = pass;
    if (pass > 1) {
      const double change = stack_distance(e, e.x, px) + stack_distance(e, e.y, py);
      if (change < opts.tol / 10) break;
    }
    px = e.x;
    py = e.y;
  }
  return r;
}

void check_picard_options(const PicardOptions& opts) {
  if (opts.max_outer < 1 || opts.max_inner < 1)
    fail(ErrorCode::InvalidInput, kStage, "iteration limits must be >= 1");
  if (!(opts.tol > 0) || !std::isfinite(opts.tol))
    fail(ErrorCode::InvalidInput, kStage, "tolerance must be positive and finite");
  if (!(opts.damping > 0) || opts.damping > 1)
    fail(ErrorCode::InvalidInput, kStage, "damping must lie in (0, 1]");
  check_regression_spec(opts.basis);
}

}  // namespace

PicardResult picard_solve(const CoefficientModel& m, const Control& ctrl,
                          const InitialLaw& law, const TypeAtlas& atlas,
                          int particles, const TimeGrid& grid, uint64_t seed,
                          const PicardOptions& opts) {
  check_picard_options(opts);
  PicardResult out;
  const NoiseEnsemble noise = simulate_noise(m, law, atlas, particles, grid, seed);
  out.ensemble = initial_ensemble(m, atlas, noise);
  TrajectoryEnsemble& e = out.ensemble;
  for (int v = 0; v < atlas.size(); ++v)
    for (int j = 0; j <= grid.steps; ++j)
      e.a[v][j] = ctrl.values(v, atlas.labels[v], j, grid.node(j), e.x[v][j]);
  out.flow = empirical_flow(e);

  if (m.measure_free()) {
    // coefficients never read the flow, so the measure map is constant and
    // one outer pass lands on its fixed point
    const InnerResult r = inner_alternation(m, ctrl, noise, out.flow, opts, e);
    out.flow = empirical_flow(e);
    out.diag.outer_distances = {0.0};
    out.diag.inner_passes = {r.passes};
    out.diag.converged = true;
    out.diag.ridge_fallbacks = r.ridge_total;
    out.diag.residual_bound = r.backward.residual_bound;
    return out;
  }

  std::vector<std::vector<Mat>> y_prev, z_prev;
  bool damp_next = false;
  for (int k = 0; k < opts.max_outer; ++k) {
    y_prev = e.y;
    z_prev = e.z;
    const InnerResult r = inner_alternation(m, ctrl, noise, out.flow, opts, e);
    out.diag.ridge_fallbacks += r.ridge_total;
    out.diag.residual_bound = r.backward.residual_bound;
    out.diag.inner_passes.push_back(r.passes);

    if (damp_next) {
      for (int v = 0; v < atlas.size(); ++v) {
        for (int j = 0; j <= grid.steps; ++j) {
          e.y[v][j] = opts.damping * e.y[v][j] + (1 - opts.damping) * y_prev[v][j];
          e.z[v][j] = opts.damping * e.z[v][j] + (1 - opts.damping) * z_prev[v][j];
        }
      }
      ++out.diag.damped_iterations;
      damp_next = false;
    }

    KernelFlow next = empirical_flow(e);
    double dist = 0.0;
    for (std::size_t j = 0; j < next.nodes.size(); ++j) {
      const W2Result w = wasserstein2_m(out.flow.nodes[j], next.nodes[j], opts.w2);
      dist = std::max(dist, w.value);
      out.diag.distance_subsampled = out.diag.distance_subsampled || w.subsampled;
    }
    out.diag.outer_distances.push_back(dist);
    out.flow = std::move(next);
    if (dist < opts.tol) {
      out.diag.converged = true;
      break;
    }
    const std::size_t nd = out.diag.outer_distances.size();
    if (opts.damping < 1 && nd >= 2 &&
        out.diag.outer_distances[nd - 1] > out.diag.outer_distances[nd - 2])
      damp_next = true;
  }
  return out;
}

Defects residual(const CoefficientModel& m, const NoiseEnsemble& noise,
                 const KernelFlow& flow, const TrajectoryEnsemble& e) {
  check_ensemble(m, e);
  check_noise(e, noise);
  check_flow(e, flow);
  const auto aggs = flow_aggregates(m, flow, e.grid);
  const int d = e.dims.d;
  const double dt = e.grid.dt();
  Defects out;
  for (int v = 0; v < e.atlas.size(); ++v) {
    const double wv = e.atlas.weights[v];
    const int N = e.particles(v);
    for (int j = 0; j < e.grid.steps; ++j) {
      const double t = e.grid.node(j);
      const AggregateValues& agg = aggs[j][v];
      for (int p = 0; p < N; ++p) {
        const StatePoint pt = point_at(e, v, j, p, t);
        const Vec db = noise.increments[v].row(p).segment(j * d, d).transpose();
        const Vec fr = (e.x[v][j + 1].row(p) - e.x[v][j].row(p)).transpose() -
                       dt * m.drift(pt, agg) - m.diffusion(pt, agg) * db;
        const Vec br = (e.y[v][j + 1].row(p) - e.y[v][j].row(p)).transpose() +
                       dt * m.driver(pt, agg) -
                       unflatten_z(e.dims, e.z[v][j].row(p)) * db;
        out.forward += wv / N * dt * fr.squaredNorm();
        out.backward += wv / N * dt * br.squaredNorm();
      }
    }
  }
  out.forward = std::sqrt(out.forward);
  out.backward = std::sqrt(out.backward);
  return out;
}

void save_trajectory_csv(const TrajectoryEnsemble& e, int type, std::ostream& out) {
  if (type < 0 || type >= e.atlas.size())
    fail(ErrorCode::InvalidInput, kStage, "type index out of range");
  out << "particle,step,t";
  for (int i = 0; i < e.dims.n; ++i) out << ",x" << i;
  for (int i = 0; i < e.dims.l; ++i) out << ",y" << i;
  for (int i = 0; i < e.dims.zdim(); ++i) out << ",z" << i;
  for (int i = 0; i < e.dims.k; ++i) out << ",alpha" << i;
  out << "\n";
  for (int p = 0; p < e.particles(type); ++p) {
    for (int j = 0; j <= e.grid.steps; ++j) {
      out << p << "," << j << "," << fmt_double(e.grid.node(j));
      for (int i = 0; i < e.dims.n; ++i) out << "," << fmt_double(e.x[type][j](p, i));
      for (int i = 0; i < e.dims.l; ++i) out << "," << fmt_double(e.y[type][j](p, i));
      for (int i = 0; i < e.dims.zdim(); ++i)
        out << "," << fmt_double(e.z[type][j](p, i));
      for (int i = 0; i < e.dims.k; ++i) out << "," << fmt_double(e.a[type][j](p, i));
      out << "\n";
    }
  }
}

}  // namespace hmf
