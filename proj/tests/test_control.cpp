#include <cmath>
#include <doctest.h>
#include <memory>
#include <sstream>

#include "hmf/control.hpp"
#include "hmf/models.hpp"

using namespace hmf;

namespace {

template <typename Fn>
ErrorCode thrown_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

TypeAtlas grid_atlas(int types) {
  return build_type_atlas({AtlasMode::Grid, types, 0.0, 1.0, 0});
}

InitialLaw gaussian(double c, double s) {
  InitialLaw law;
  law.kind = InitialLaw::Kind::Gaussian;
  law.center = Vec::Constant(1, c);
  law.spread = Vec::Constant(1, s);
  return law;
}

ModelParams scalar_params(std::map<std::string, double> values) {
  ModelParams p;
  p.values = std::move(values);
  return p;
}

std::unique_ptr<CoefficientModel> lq_model(double mean_weight = 0.0,
                                           double kappa_bar = 1.0) {
  return make_model("lq", scalar_params({{"mean_weight", mean_weight},
                                         {"kappa_bar", kappa_bar}}));
}

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

ControlField constant_field(const ComponentDims& dims, const TimeGrid& grid,
                            const TypeAtlas& atlas, double value) {
  ControlField c = ControlField::open_loop(dims, grid, atlas);
  for (int v = 0; v < atlas.size(); ++v) c.table(v).setConstant(value);
  return c;
}

// scalar scaffold with zero coefficients everywhere
class FlatModel : public CoefficientModel {
 public:
  FlatModel() {
    dims_ = ComponentDims{1, 1, 1, 1};
    horizon_ = 1.0;
  }
  std::string family() const override { return "test"; }
  Vec drift(const StatePoint&, const AggregateValues&) const override {
    return Vec::Zero(1);
  }
  Mat diffusion(const StatePoint&, const AggregateValues&) const override {
    return Mat::Zero(1, 1);
  }
  Vec driver(const StatePoint&, const AggregateValues&) const override {
    return Vec::Zero(1);
  }
  double running_cost(const StatePoint&, const AggregateValues&) const override {
    return 0.0;
  }
  Vec terminal_condition(double, const Vec&, const AggregateValues&) const override {
    return Vec::Zero(1);
  }
  double terminal_cost(double, const Vec&, const AggregateValues&) const override {
    return 0.0;
  }
  double initial_cost(double, const Vec&) const override { return 0.0; }
  Vec initial_cost_gradient(double, const Vec&) const override { return Vec::Zero(1); }
  Mat partial(Coefficient c, int block, const StatePoint&,
              const AggregateValues&) const override {
    return Mat::Zero(coefficient_rows(dims_, c), dims_.block_dim(block));
  }
  Mat terminal_partial_x(TerminalMap, double, const Vec&,
                         const AggregateValues&) const override {
    return Mat::Zero(1, 1);
  }
};

class ConstCostModel : public FlatModel {
 public:
  Mat diffusion(const StatePoint&, const AggregateValues&) const override {
    return Mat::Constant(1, 1, 1.0);
  }
  double running_cost(const StatePoint&, const AggregateValues&) const override {
    return 1.5;
  }
  double terminal_cost(double, const Vec&, const AggregateValues&) const override {
    return 2.25;
  }
  double initial_cost(double, const Vec&) const override { return 0.5; }
};

class InfCostModel : public FlatModel {
 public:
  double running_cost(const StatePoint&, const AggregateValues&) const override {
    return std::numeric_limits<double>::infinity();
  }
};

MeasureChannel control_mean_channel() {
  MeasureChannel ch;
  ch.name = "mean-a";
  ch.dim = 1;
  ch.arg_mask = kMaskA;
  ch.kappa = [](double, double) { return 1.0; };
  ch.phi = [](const StatePoint& p) { return state_block(p, 3); };
  ch.dphi = [](const StatePoint& p, int b) {
    Mat d = Mat::Zero(1, state_block(p, b).size());
    if (b == 3) d.setIdentity();
    return d;
  };
  return ch;
}

// running cost 0.5 a^2 + c * (mean alpha)^2: the measure enters through the
// control law, so the gradient needs the swapped cross term 2 c mean(alpha)
class MeanControlPenaltyModel : public FlatModel {
 public:
  explicit MeanControlPenaltyModel(double c) : c_(c) {
    channels_.push_back(control_mean_channel());
  }
  bool control_law_free() const override { return false; }
  double running_cost(const StatePoint& p, const AggregateValues& agg) const override {
    return 0.5 * p.a(0) * p.a(0) + c_ * agg[0](0) * agg[0](0);
  }
  Mat partial(Coefficient c, int block, const StatePoint& p,
              const AggregateValues& agg) const override {
    if (c == Coefficient::RunningCost && block == 3)
      return Mat::Constant(1, 1, p.a(0));
    return FlatModel::partial(c, block, p, agg);
  }
  Mat aggregate_sensitivity(Coefficient c, int, const StatePoint&,
                            const AggregateValues& agg) const override {
    if (c == Coefficient::RunningCost) return Mat::Constant(1, 1, 2.0 * c_ * agg[0](0));
    return Mat::Zero(coefficient_rows(dims_, c), 1);
  }

 private:
  double c_;
};

// b = a - 0.4 x^3 with h = 0.5 x^2: genuinely nonlinear forward dynamics
class CubicModel : public FlatModel {
 public:
  Vec drift(const StatePoint& p, const AggregateValues&) const override {
    return p.a - 0.4 * p.x.array().cube().matrix();
  }
  Mat diffusion(const StatePoint&, const AggregateValues&) const override {
    return Mat::Constant(1, 1, 0.4);
  }
  double terminal_cost(double, const Vec& x, const AggregateValues&) const override {
    return 0.5 * x(0) * x(0);
  }
  Mat partial(Coefficient c, int block, const StatePoint& p,
              const AggregateValues& agg) const override {
    if (c == Coefficient::Drift && block == 0)
      return Mat::Constant(1, 1, -1.2 * p.x(0) * p.x(0));
    if (c == Coefficient::Drift && block == 3) return Mat::Constant(1, 1, 1.0);
    return FlatModel::partial(c, block, p, agg);
  }
  Mat terminal_partial_x(TerminalMap which, double, const Vec& x,
                         const AggregateValues&) const override {
    if (which == TerminalMap::Cost) return Mat::Constant(1, 1, x(0));
    return Mat::Zero(1, 1);
  }
};

}  // namespace

TEST_SUITE("control") {

TEST_CASE("control field shapes, evaluation and projection") {
  const ComponentDims dims{1, 1, 1, 2};
  const TimeGrid grid{1.0, 4};
  const TypeAtlas atlas = grid_atlas(1);

  ControlField open = ControlField::open_loop(dims, grid, atlas);
  CHECK(open.dim() == 2);
  CHECK(open.table(0).rows() == 5);
  CHECK(open.table(0).cols() == 2);
  const Mat x = Mat::Constant(3, 1, 0.7);
  CHECK(max_abs(open.values(0, 0.0, 2, 0.5, x)) == 0.0);

  open.table(0)(2, 0) = 1.25;
  open.table(0)(2, 1) = -0.5;
  const Mat vals = open.values(0, 0.0, 2, 0.5, x);
  CHECK(vals.rows() == 3);
  CHECK(vals(0, 0) == 1.25);
  CHECK(vals(2, 1) == -0.5);

  ControlBox box;
  box.lo = Vec::Constant(2, -0.5);
  box.hi = Vec::Constant(2, 0.5);
  ControlField clamped = ControlField::open_loop(dims, grid, atlas, box);
  clamped.table(0).setConstant(2.0);
  CHECK(clamped.values(0, 0.0, 1, 0.25, x)(0, 0) == 0.5);
  clamped.project();
  CHECK(clamped.table(0)(0, 0) == 0.5);

  ControlField fb = ControlField::feedback(dims, grid, atlas, box);
  fb.coeffs(0, 3)(0, 0) = 0.25;
  fb.coeffs(0, 3)(1, 0) = -0.5;
  const Mat fvals = fb.values(0, 0.0, 3, 0.75, x);
  CHECK(fvals(1, 0) == doctest::Approx(0.25 - 0.5 * 0.7).epsilon(1e-14));
  fb.coeffs(0, 3)(0, 1) = 9.0;  // clamped on evaluation
  CHECK(fb.values(0, 0.0, 3, 0.75, x)(0, 1) == 0.5);

  CHECK(thrown_code([&] { fb.table(0); }) == ErrorCode::InvalidInput);
  CHECK(thrown_code([&] { open.coeffs(0, 0); }) == ErrorCode::InvalidInput);
  CHECK(thrown_code([&] { open.values(0, 0.0, 5, 0.5, x); }) == ErrorCode::InvalidInput);
  CHECK(thrown_code([&] { open.values(1, 0.0, 0, 0.5, x); }) == ErrorCode::InvalidInput);
  ControlBox bad;
  bad.lo = Vec::Constant(2, 1.0);
  bad.hi = Vec::Constant(2, -1.0);
  CHECK(thrown_code([&] { ControlField::open_loop(dims, grid, atlas, bad); }) ==
        ErrorCode::InvalidInput);
}

TEST_CASE("control csv round trip and strict parsing") {
  const ComponentDims dims{2, 1, 1, 2};
  const TimeGrid grid{1.0, 3};
  const TypeAtlas atlas = grid_atlas(2);

  const ControlField open = random_open_loop(dims, grid, atlas, {}, 3, 0, 0.7);
  std::stringstream s1;
  save_control_csv(open, s1);
  const ControlField back = load_control_csv(dims, grid, atlas, s1);
  for (int v = 0; v < 2; ++v) CHECK(max_abs(back.table(v) - open.table(v)) == 0.0);

  ControlField fb = ControlField::feedback(dims, grid, atlas);
  for (int v = 0; v < 2; ++v)
    for (int j = 0; j <= 3; ++j)
      fb.coeffs(v, j).setConstant(0.1 * v - 0.2 * j + 0.037);
  std::stringstream s2;
  save_control_csv(fb, s2);
  const ControlField fback = load_control_csv(dims, grid, atlas, s2);
  CHECK(fback.kind() == ControlKind::Feedback);
  for (int v = 0; v < 2; ++v)
    for (int j = 0; j <= 3; ++j)
      CHECK(max_abs(fback.coeffs(v, j) - fb.coeffs(v, j)) == 0.0);

  std::stringstream bad1("not,a,header\n");
  CHECK(thrown_code([&] { load_control_csv(dims, grid, atlas, bad1); }) ==
        ErrorCode::InvalidInput);

  std::stringstream whole;
  save_control_csv(open, whole);
  std::string text = whole.str();
  text.resize(text.size() / 2);  // truncate mid-file
  std::stringstream bad2(text);
  CHECK(thrown_code([&] { load_control_csv(dims, grid, atlas, bad2); }) ==
        ErrorCode::InvalidInput);

  std::stringstream bad3(
      "kind,type,node,t,row,c0,c1\nopen-loop,0,0,0,0,oops,1\n");
  CHECK(thrown_code([&] { load_control_csv(dims, grid, atlas, bad3); }) ==
        ErrorCode::InvalidInput);

  // deterministic random fields
  const ControlField again = random_open_loop(dims, grid, atlas, {}, 3, 0, 0.7);
  CHECK(max_abs(again.table(0) - open.table(0)) == 0.0);
  const ControlField other = random_open_loop(dims, grid, atlas, {}, 3, 1, 0.7);
  CHECK(max_abs(other.table(0) - open.table(0)) > 0.0);
}

TEST_CASE("pathwise costs against constant oracles") {
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 4};
  ConstCostModel m;
  const ControlField zero = ControlField::open_loop(m.dims(), grid, atlas);
  const PicardResult res = picard_solve(m, zero, gaussian(0.0, 1.0), atlas, 32, grid, 5);

  const auto costs = per_particle_costs(m, res.ensemble, res.flow);
  REQUIRE(costs.size() == 1);
  for (int p = 0; p < costs[0].size(); ++p)
    CHECK(costs[0](p) == doctest::Approx(1.5 + 2.25 + 0.5).epsilon(1e-14));
  CHECK(evaluate_cost(m, res.ensemble, res.flow) ==
        doctest::Approx(4.25).epsilon(1e-14));

  InfCostModel inf;
  const PicardResult ires =
      picard_solve(inf, zero, gaussian(0.0, 1.0), atlas, 8, grid, 5);
  CHECK(thrown_code([&] { per_particle_costs(inf, ires.ensemble, ires.flow); }) ==
        ErrorCode::NonConvergence);
}

TEST_CASE("hamiltonian values and kernel overload") {
  auto m = lq_model();
  StatePoint pt;
  pt.t = 0.25;
  pt.u = 0.0;
  pt.x = Vec::Constant(1, 0.8);
  pt.y = Vec::Zero(1);
  pt.z = Mat::Zero(1, 1);
  pt.a = Vec::Constant(1, -0.3);
  const Vec p = Vec::Constant(1, 0.4);
  const Vec q = Vec::Constant(1, 1.1);
  const Mat k = Mat::Constant(1, 1, 0.6);
  // q a + k sigma - p f + l = 1.1*(-0.3) + 0.6*1 - 0 + 0.5*(0.64 + 0.09)
  CHECK(hamiltonian(*m, pt, {}, p, q, k) ==
        doctest::Approx(-0.33 + 0.6 + 0.365).epsilon(1e-14));
  CHECK(thrown_code([&] { hamiltonian(*m, pt, {}, Vec::Zero(2), q, k); }) ==
        ErrorCode::InvalidInput);

  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 2};
  const ControlField c = constant_field(m->dims(), grid, atlas, -0.3);
  const PicardResult res = picard_solve(*m, c, gaussian(0.8, 0.0), atlas, 4, grid, 7);
  const MeasureKernel kern = empirical_kernel(res.ensemble, 0);
  const double via_kernel = hamiltonian(*m, kern, 0, 2, 0.0, p, q, k);
  StatePoint same;
  same.t = 0.0;
  same.u = 0.0;
  same.x = res.ensemble.x[0][0].row(2).transpose();
  same.y = res.ensemble.y[0][0].row(2).transpose();
  same.z = Mat::Constant(1, 1, res.ensemble.z[0][0](2, 0));
  same.a = res.ensemble.a[0][0].row(2).transpose();
  CHECK(via_kernel == doctest::Approx(hamiltonian(*m, same, {}, p, q, k)).epsilon(1e-12));
}

TEST_CASE("variational solve is exact on lq and exactly linear") {
  auto m = lq_model();
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 8};
  const int N = 64;
  const ControlField zero = ControlField::open_loop(m->dims(), grid, atlas);
  const InitialLaw law = gaussian(1.0, 0.3);
  const PicardResult base = picard_solve(*m, zero, law, atlas, N, grid, 11);
  const NoiseEnsemble noise = simulate_noise(*m, law, atlas, N, grid, 11);

  // zero direction: identically zero in one pass
  const VariationalResult v0 =
      solve_variational(*m, base.ensemble, base.flow, noise, zero);
  CHECK(v0.converged);
  CHECK(v0.passes == 1);
  for (int j = 0; j <= 8; ++j) {
    CHECK(max_abs(v0.ensemble.x[0][j]) == 0.0);
    CHECK(max_abs(v0.ensemble.y[0][j]) == 0.0);
    CHECK(max_abs(v0.ensemble.z[0][j]) == 0.0);
  }

  // unit direction: x' = t exactly (b = a, sigma constant, G = 0)
  const ControlField one = constant_field(m->dims(), grid, atlas, 1.0);
  const VariationalResult v1 =
      solve_variational(*m, base.ensemble, base.flow, noise, one);
  CHECK(v1.converged);
  for (int j = 0; j <= 8; ++j) {
    CHECK(max_abs(v1.ensemble.x[0][j] - Mat::Constant(N, 1, j / 8.0)) == 0.0);
    CHECK(max_abs(v1.ensemble.y[0][j]) == 0.0);
  }

  // exact linearity under scaling by -2
  const ControlField dir = random_open_loop(m->dims(), grid, atlas, {}, 11, 1, 1.0);
  ControlField scaled = dir;
  scaled.table(0) *= -2.0;
  const VariationalResult va =
      solve_variational(*m, base.ensemble, base.flow, noise, dir);
  const VariationalResult vb =
      solve_variational(*m, base.ensemble, base.flow, noise, scaled);
  for (int j = 0; j <= 8; ++j) {
    CHECK(max_abs(vb.ensemble.x[0][j] + 2.0 * va.ensemble.x[0][j]) == 0.0);
    CHECK(max_abs(vb.ensemble.y[0][j] + 2.0 * va.ensemble.y[0][j]) == 0.0);
    CHECK(max_abs(vb.ensemble.z[0][j] + 2.0 * va.ensemble.z[0][j]) == 0.0);
  }

  ControlField fb = ControlField::feedback(m->dims(), grid, atlas);
  CHECK(thrown_code([&] {
          solve_variational(*m, base.ensemble, base.flow, noise, fb);
        }) == ErrorCode::InvalidInput);
}

TEST_CASE("adjoint solve matches the lq closed form") {
  auto m = lq_model();
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 50};
  const int N = 4000;
  const InitialLaw law = gaussian(1.0, 0.3);
  const ControlField zero = ControlField::open_loop(m->dims(), grid, atlas);
  const PicardResult base = picard_solve(*m, zero, law, atlas, N, grid, 9);
  const NoiseEnsemble noise = simulate_noise(*m, law, atlas, N, grid, 9);

  const AdjointResult adj = solve_adjoint(*m, base.ensemble, base.flow, noise);
  CHECK(adj.converged);
  CHECK(adj.passes == 2);
  CHECK(adj.warning.empty() == adj.theta2.feasible);

  // p vanishes identically (no initial cost, driver-free Hamiltonian)
  for (int j = 0; j <= 50; ++j) CHECK(max_abs(adj.ensemble.p[0][j]) == 0.0);

  // q_j tracks (1 + T - t_j) X_j through the regression telescope
  double num = 0.0, den = 0.0;
  for (int j = 0; j <= 50; ++j) {
    const double t = grid.node(j);
    const Mat ref = (1.0 + 1.0 - t) * base.ensemble.x[0][j];
    num += (adj.ensemble.q[0][j] - ref).squaredNorm() / N;
    den += ref.squaredNorm() / N;
  }
  CHECK(std::sqrt(num / den) < 0.05);

  // particle-mean k_j tracks 1 + T - t_{j+1}
  double knum = 0.0, kden = 0.0;
  for (int j = 0; j < 50; ++j) {
    const double ref = 1.0 + 1.0 - grid.node(j + 1);
    const double kb = adj.ensemble.k[0][j].col(0).mean();
    knum += (kb - ref) * (kb - ref);
    kden += ref * ref;
  }
  CHECK(std::sqrt(knum / kden) < 0.05);

  // deterministic rerun
  const AdjointResult again = solve_adjoint(*m, base.ensemble, base.flow, noise);
  for (int j = 0; j <= 50; ++j)
    CHECK(max_abs(again.ensemble.q[0][j] - adj.ensemble.q[0][j]) == 0.0);
}

TEST_CASE("gradient cross term through a control-law channel") {
  MeanControlPenaltyModel m(0.25);
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 4};
  const int N = 64;
  const double a0 = 0.7;
  const ControlField c = constant_field(m.dims(), grid, atlas, a0);
  const InitialLaw law = gaussian(0.0, 1.0);
  const PicardResult res = picard_solve(m, c, law, atlas, N, grid, 13);
  const NoiseEnsemble noise = simulate_noise(m, law, atlas, N, grid, 13);
  const AdjointResult adj = solve_adjoint(m, res.ensemble, res.flow, noise);

  const GradientField grad = hamiltonian_gradient(m, res.ensemble, res.flow, adj.ensemble);
  CHECK_FALSE(grad.cross_skipped);
  // dH/da = a + 2 c mean(alpha) = (1 + 2 * 0.25) * a0 at a constant control
  for (int j = 0; j < 4; ++j)
    for (int p = 0; p < N; ++p)
      CHECK(grad.g[0][j](p, 0) == doctest::Approx(1.5 * a0).epsilon(1e-12));

  // the law-free lq model skips its cost-channel cross term
  auto mf = lq_model(0.4, 0.5);
  const ControlField zero = ControlField::open_loop(mf->dims(), grid, atlas);
  const PicardResult res2 = picard_solve(*mf, zero, law, atlas, N, grid, 13);
  const NoiseEnsemble noise2 = simulate_noise(*mf, law, atlas, N, grid, 13);
  const AdjointResult adj2 = solve_adjoint(*mf, res2.ensemble, res2.flow, noise2);
  const GradientField grad2 =
      hamiltonian_gradient(*mf, res2.ensemble, res2.flow, adj2.ensemble);
  CHECK(grad2.cross_skipped);
}

TEST_CASE("maximum principle report flags a descent direction") {
  auto m = lq_model();
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 50};
  const int N = 2000;
  const InitialLaw law = gaussian(1.0, 0.3);
  const ControlField cand = ControlField::open_loop(m->dims(), grid, atlas);
  const PicardResult res = picard_solve(*m, cand, law, atlas, N, grid, 19);
  const NoiseEnsemble noise = simulate_noise(*m, law, atlas, N, grid, 19);
  const AdjointResult adj = solve_adjoint(*m, res.ensemble, res.flow, noise);

  // the candidate itself as probe: zero inner product, stationarity fails
  const MPReport rep1 = check_maximum_principle(*m, res.ensemble, res.flow, adj.ensemble,
                                                cand, {cand});
  CHECK_FALSE(rep1.stationary);
  CHECK(rep1.stationarity_norm > 10.0 * rep1.stationarity_tol);
  CHECK(rep1.min_probe == 0);
  CHECK(rep1.min_inner == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(rep1.inner_ok);
  CHECK(rep1.verdict == "stationarity failed");

  // stepping against the gradient is detected as a strict descent probe
  ControlField probe = cand;
  probe.table(0).topRows(50) -= 0.5 * rep1.gradient[0];
  probe.table(0).row(50) = probe.table(0).row(49);
  const MPReport rep2 = check_maximum_principle(*m, res.ensemble, res.flow, adj.ensemble,
                                                cand, {probe});
  CHECK_FALSE(rep2.inner_ok);
  CHECK(rep2.min_inner < 0.0);
  CHECK(rep2.verdict == "stationarity and variational inequality failed");

  CHECK(thrown_code([&] {
          MPOptions bad;
          bad.bootstrap = 1;
          check_maximum_principle(*m, res.ensemble, res.flow, adj.ensemble, cand, {},
                                  bad);
        }) == ErrorCode::InvalidInput);
}

TEST_CASE("lq optimizer reaches the closed-form optimum") {
  auto m = lq_model();
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 50};
  const int N = 1500;
  const InitialLaw law = gaussian(1.0, 0.3);
  const ControlField start = ControlField::open_loop(m->dims(), grid, atlas);

  const OptimizeResult opt = optimize_control(*m, law, atlas, N, grid, 17, start);
  CHECK(opt.converged);
  REQUIRE(opt.j_history.size() >= 2);
  for (std::size_t i = 1; i < opt.j_history.size(); ++i)
    CHECK(opt.j_history[i] <= opt.j_history[i - 1] + 1e-9);

  // closed form: alpha*_t = -E[X_t] = -exp(-t), J* = 0.5 m0^2 + s^2 + 3/4
  const double jstar = 0.5 + 0.09 + 0.75;
  CHECK(std::abs(opt.j_history.back() - jstar) < 0.08 * jstar);

  const PicardResult fin = picard_solve(*m, opt.control, law, atlas, N, grid, 17);
  double sxa = 0.0, sxx = 0.0;
  for (int j = 0; j < 50; ++j) {
    const double mx = fin.ensemble.x[0][j].col(0).mean();
    sxa += opt.control.table(0)(j, 0) * mx;
    sxx += mx * mx;
  }
  const double gain = sxa / sxx;
  CHECK(gain > -1.15);
  CHECK(gain < -0.85);

  CHECK(opt.report.stationary);
  CHECK(opt.report.inner_ok);
  CHECK(opt.report.verdict == "maximum principle holds (empirical)");

  const ControlField fb = ControlField::feedback(m->dims(), grid, atlas);
  CHECK(thrown_code([&] {
          optimize_control(*m, law, atlas, N, grid, 17, fb);
        }) == ErrorCode::InvalidInput);
}

TEST_CASE("certificate verifies the lq optimum against rivals") {
  auto m = lq_model();
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 50};
  const int N = 1000;
  const InitialLaw law = gaussian(1.0, 0.3);
  const ControlField start = ControlField::open_loop(m->dims(), grid, atlas);
  const OptimizeResult opt = optimize_control(*m, law, atlas, N, grid, 21, start);
  REQUIRE(opt.converged);

  std::vector<ControlField> rivals;
  rivals.push_back(opt.control);  // itself: margin exactly zero
  rivals.push_back(start);        // doing nothing
  rivals.push_back(random_open_loop(m->dims(), grid, atlas, {}, 21, 5, 0.8));

  const CertificateReport rep = verify_convexity_certificate(
      *m, law, atlas, N, grid, 21, opt.control, rivals);
  CHECK(rep.convex_declared);
  REQUIRE(rep.rivals.size() == 3);
  CHECK(rep.rivals[0].margin == 0.0);
  CHECK(rep.rivals[0].beaten);
  CHECK(rep.rivals[1].margin > 0.05);  // zero control pays about 0.19 more
  CHECK(rep.rivals[2].margin > 0.0);
  CHECK(rep.convexity_checked == 32 * 4);
  CHECK(rep.convexity_failures == 0);
  CHECK(rep.verified);
  CHECK(rep.verdict == "verified (empirical)");
  CHECK(std::abs(rep.candidate_cost - opt.j_history.back()) < 1e-12);

  // a model that does not declare convexity cannot be verified
  auto g = make_model("graphon-linear", scalar_params({}));
  const ControlField gzero = ControlField::open_loop(g->dims(), TimeGrid{1.0, 10}, atlas);
  const CertificateReport grep = verify_convexity_certificate(
      *g, law, atlas, 200, TimeGrid{1.0, 10}, 23, gzero, {gzero});
  CHECK_FALSE(grep.verified);
  CHECK(grep.convexity_checked == 0);
  CHECK(grep.verdict == "convexity not declared by the model");
}

TEST_CASE("pairing identity balances on the mean-field lq") {
  auto m = lq_model(0.4, 0.5);
  const TypeAtlas atlas = grid_atlas(1);
  const TimeGrid grid{1.0, 100};
  const int N = 2000;
  const InitialLaw law = gaussian(1.0, 0.3);
  const ControlField zero = ControlField::open_loop(m->dims(), grid, atlas);
  const PicardResult base = picard_solve(*m, zero, law, atlas, N, grid, 29);
  const NoiseEnsemble noise = simulate_noise(*m, law, atlas, N, grid, 29);
  const AdjointResult adj = solve_adjoint(*m, base.ensemble, base.flow, noise);
  const ControlField dir = random_open_loop(m->dims(), grid, atlas, {}, 29, 6, 1.0);
  const VariationalResult var =
      solve_variational(*m, base.ensemble, base.flow, noise, dir);
  CHECK(adj.converged);
  CHECK(var.converged);

  const PairingIdentity pair =
      check_pairing_identity(*m, base.ensemble, base.flow, adj.ensemble, var.ensemble, dir);
  CHECK(std::abs(pair.lhs) > 1e-3);  // the identity is not vacuous here
  CHECK(pair.rel_gap < 0.05);
}

TEST_CASE("finite-difference audit of the directional derivatives") {
  const TypeAtlas atlas = grid_atlas(1);
  const InitialLaw law = gaussian(1.0, 0.3);

  // lq: linear dynamics make the state expansion exact and the cost gap
  // shrink by a factor 10 per epsilon decade
  {
    auto m = lq_model();
    const TimeGrid grid{1.0, 64};
    const ControlField zero = ControlField::open_loop(m->dims(), grid, atlas);
    const ControlField dir = random_open_loop(m->dims(), grid, atlas, {}, 31, 4, 1.0);
    const GateauxTable tab = gateaux_check(*m, law, atlas, 1000, grid, 31, zero, dir);
    REQUIRE(tab.rows.size() == 3);
    for (const GateauxRow& row : tab.rows) {
      CHECK(row.x_err < 1e-10);
      CHECK(row.y_err < 1e-10);
      CHECK(row.z_err < 1e-10);
    }
    const double r10 = tab.rows[0].pairing_gap / tab.rows[1].pairing_gap;
    const double r21 = tab.rows[1].pairing_gap / tab.rows[2].pairing_gap;
    CHECK(r10 > 5.0);
    CHECK(r10 < 20.0);
    CHECK(r21 > 5.0);
    CHECK(r21 < 20.0);
    CHECK(tab.pairing.rel_gap < 0.1);
  }

  // cubic drift: the state remainder scales linearly in epsilon
  {
    CubicModel m;
    const TimeGrid grid{1.0, 64};
    const ControlField zero = ControlField::open_loop(m.dims(), grid, atlas);
    const ControlField dir = random_open_loop(m.dims(), grid, atlas, {}, 37, 0, 1.0);
    const GateauxTable tab = gateaux_check(m, law, atlas, 1000, grid, 37, zero, dir);
    REQUIRE(tab.rows.size() == 3);
    CHECK(tab.rows[0].x_err / tab.rows[1].x_err > 3.0);
    CHECK(tab.rows[1].x_err / tab.rows[2].x_err > 3.0);
  }

  {
    auto m = lq_model();
    const TimeGrid grid{1.0, 8};
    const ControlField zero = ControlField::open_loop(m->dims(), grid, atlas);
    const ControlField fb = ControlField::feedback(m->dims(), grid, atlas);
    CHECK(thrown_code([&] {
            gateaux_check(*m, law, atlas, 50, grid, 1, fb, zero);
          }) == ErrorCode::InvalidInput);
    GateauxOptions bad;
    bad.epsilons = {-0.1};
    CHECK(thrown_code([&] {
            gateaux_check(*m, law, atlas, 50, grid, 1, zero, zero, bad);
          }) == ErrorCode::InvalidInput);
  }
}

}  // TEST_SUITE
