#pragma once

#include "hmf/model.hpp"
#include "hmf/transport.hpp"

namespace hmf {

struct TimeGrid {
  double horizon = 1.0;
  int steps = 1;

  double dt() const { return horizon / steps; }
  double node(int j) const { return horizon * j / steps; }
  void validate() const;
};

// Brownian increments and initial draws, one counter-based stream per
// (type, particle): the ensemble is reproducible under the seed and stable
// under changes of particle count.
struct NoiseEnsemble {
  TimeGrid grid;
  uint64_t seed = 0;
  int d = 0;
  // increments[v] is N x (steps*d); columns j*d..(j+1)*d-1 hold dB_j
  std::vector<Mat> increments;
  // initial[v] is N x n
  std::vector<Mat> initial;

  int particles(int v) const { return static_cast<int>(initial[v].rows()); }
};

NoiseEnsemble simulate_noise(const CoefficientModel& m, const InitialLaw& law,
                             const TypeAtlas& atlas, int particles,
                             const TimeGrid& grid, uint64_t seed);

// State arrays indexed [type][node], node 0..steps; rows are particles. Z rows
// flatten row-major like everywhere else. The terminal node carries a copy of
// the last Z step so the joint-law kernel is defined at every node.
struct TrajectoryEnsemble {
  TypeAtlas atlas;
  ComponentDims dims;
  TimeGrid grid;
  std::vector<std::vector<Mat>> x, y, z, a;

  int particles(int v) const { return static_cast<int>(x[v][0].rows()); }
};

// Flat warm start: X frozen at the initial draws, everything else zero.
TrajectoryEnsemble initial_ensemble(const CoefficientModel& m, const TypeAtlas& atlas,
                                    const NoiseEnsemble& noise);

// Joint-law kernel per node (always all four marginal blocks) plus the
// terminal X marginal.
struct KernelFlow {
  std::vector<MeasureKernel> nodes;
  MeasureKernel terminal_x;
};

MeasureKernel empirical_kernel(const TrajectoryEnsemble& e, int node);
KernelFlow empirical_flow(const TrajectoryEnsemble& e);

// Admissible control evaluated blockwise: the N x k values for one
// (type, node) given that node's forward block. Feedback forms read x,
// open-loop tables ignore it. Called for every node including the terminal
// one (where the value only enters the joint-law kernel, not the dynamics).
class Control {
 public:
  virtual ~Control() = default;
  virtual int dim() const = 0;
  virtual Mat values(int type, double u, int node, double t, const Mat& x) const = 0;
};

class ZeroControl final : public Control {
 public:
  explicit ZeroControl(int k) : k_(k) {}
  int dim() const override { return k_; }
  Mat values(int, double, int, double, const Mat& x) const override {
    return Mat::Zero(x.rows(), k_);
  }

 private:
  int k_;
};

// Least-squares Monte Carlo basis: polynomials in X up to `degree` plus the
// initial draws, per type.
struct RegressionSpec {
  int degree = 2;
  bool include_initial = true;
  double ridge = 1e-10;  // fallback strength, scaled by the Gram trace
};

struct BackwardDiagnostics {
  int ridge_fallbacks = 0;
  // triangle-inequality bound on the backward defect: ||e|| + ||Z dB|| in the
  // same weighted norm residual() uses
  double residual_bound = 0.0;
};

// Euler-Maruyama forward pass under the frozen flow: fills e.x and e.a from
// e.y, e.z and the noise. Nonfinite states raise a divergence error naming
// the step.
void solve_forward(const CoefficientModel& m, const Control& ctrl,
                   const NoiseEnsemble& noise, const KernelFlow& flow,
                   TrajectoryEnsemble& e);

// Backward regression pass under the frozen flow: fills e.y and e.z from e.x
// and the stored control trace e.a. The Y update is implicit in Y, iterated
// twice; the Z regression subtracts the predictable part of Y_{j+1} before
// multiplying increments.
BackwardDiagnostics solve_backward(const CoefficientModel& m, const NoiseEnsemble& noise,
                                   const KernelFlow& flow, const RegressionSpec& basis,
                                   TrajectoryEnsemble& e);

struct PicardOptions {
  int max_outer = 20;
  int max_inner = 5;
  double tol = 1e-3;
  // under-relaxation weight on (Y, Z) between outer iterations, applied only
  // once the flow distances oscillate; 1 disables
  double damping = 0.5;
  RegressionSpec basis;
  // support cap for the W2 iteration diagnostics; empirical clouds larger
  // than this are strided down and the report flagged
  W2Options w2{64};
};

struct PicardDiagnostics {
  std::vector<double> outer_distances;  // sup over nodes, successive flows
  std::vector<int> inner_passes;
  bool converged = false;
  int ridge_fallbacks = 0;
  double residual_bound = 0.0;
  bool distance_subsampled = false;
  int damped_iterations = 0;
};

struct PicardResult {
  TrajectoryEnsemble ensemble;
  KernelFlow flow;
  PicardDiagnostics diag;
};

// Outer Picard iteration on the measure flow with common random numbers.
// Measure-free models take the single outer pass the fixed point needs and
// report a zero distance.
PicardResult picard_solve(const CoefficientModel& m, const Control& ctrl,
                          const InitialLaw& law, const TypeAtlas& atlas,
                          int particles, const TimeGrid& grid, uint64_t seed,
                          const PicardOptions& opts = {});

// A posteriori Euler defects of the ensemble against its own noise, weighted
// by dt and the type weights.
struct Defects {
  double forward = 0.0;
  double backward = 0.0;
};

Defects residual(const CoefficientModel& m, const NoiseEnsemble& noise,
                 const KernelFlow& flow, const TrajectoryEnsemble& e);

// One row per (particle, node): particle, step, t, X.., Y.., Z.., alpha..
void save_trajectory_csv(const TrajectoryEnsemble& e, int type, std::ostream& out);

}  // namespace hmf
