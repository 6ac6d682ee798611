#include <algorithm>
#include <cmath>
#include <doctest.h>

#include "hmf/finite_diff.hpp"
#include "hmf/model.hpp"
#include "hmf/models.hpp"
#include "hmf/rng.hpp"

using namespace hmf;

namespace {

const ComponentDims kScalar{1, 1, 1, 1};

MeasureKernel scalar_kernel(int types, const std::vector<std::vector<double>>& xvals) {
  MeasureKernel k;
  k.atlas = build_type_atlas({AtlasMode::Grid, types, 0.0, 1.0, 0});
  k.dims = kScalar;
  k.mask = kMaskAll;
  for (const auto& xs : xvals) {
    Mat pts = Mat::Zero(static_cast<int>(xs.size()), 4);
    for (std::size_t r = 0; r < xs.size(); ++r) pts(static_cast<int>(r), 0) = xs[r];
    k.clouds.push_back(uniform_cloud(pts));
  }
  return k;
}

// joint cloud with every coordinate at magnitude >= 0.5 so slope ratios in
// the audits stay well scaled
MeasureKernel audit_kernel(int types, int particles, uint64_t seed) {
  MeasureKernel k;
  k.atlas = build_type_atlas({AtlasMode::Grid, types, 0.0, 1.0, 0});
  k.dims = kScalar;
  k.mask = kMaskAll;
  for (int v = 0; v < types; ++v) {
    Mat pts(particles, 4);
    RandomStream st(seed, v, 0, 9);
    uint64_t at = 0;
    for (int r = 0; r < particles; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double sign = st.uniform(at++) < 0.5 ? -1.0 : 1.0;
        pts(r, c) = sign * (0.5 + st.uniform(at++));
      }
    }
    k.clouds.push_back(uniform_cloud(pts));
  }
  return k;
}

template <typename Fn>
ErrorCode thrown_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

// zero-valued scalar model base for local test families
class TestModelBase : public CoefficientModel {
 public:
  TestModelBase() {
    dims_ = kScalar;
    horizon_ = 1.0;
  }
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
  Mat terminal_partial_x(TerminalMap which, double, const Vec&,
                         const AggregateValues&) const override {
    return Mat::Zero(1, 1);
  }
};

MeasureChannel second_moment_channel() {
  MeasureChannel ch;
  ch.name = "x-second-moment";
  ch.dim = 1;
  ch.arg_mask = kMaskX;
  ch.kappa = [](double, double) { return 1.0; };
  ch.phi = [](const StatePoint& p) {
    Vec v(1);
    v(0) = p.x(0) * p.x(0);
    return v;
  };
  ch.dphi = [](const StatePoint& p, int block) {
    Mat d = Mat::Zero(1, state_block(p, block).size());
    if (block == 0) d(0, 0) = 2.0 * p.x(0);
    return d;
  };
  return ch;
}

// drift equals the population second moment of X
class QuadModel : public TestModelBase {
 public:
  QuadModel() { channels_.push_back(second_moment_channel()); }
  std::string family() const override { return "test-quad"; }
  Vec drift(const StatePoint&, const AggregateValues& agg) const override {
    return agg[0];
  }
  Mat aggregate_sensitivity(Coefficient c, int, const StatePoint&,
                            const AggregateValues&) const override {
    Mat s = Mat::Zero(coefficient_rows(dims(), c), 1);
    if (c == Coefficient::Drift) s(0, 0) = 1.0;
    return s;
  }
};

// declares a channel but no sensitivity hook
class NoSensModel : public TestModelBase {
 public:
  NoSensModel() { channels_.push_back(second_moment_channel()); }
  std::string family() const override { return "test-nosens"; }
};

}  // namespace

TEST_SUITE("model") {

TEST_CASE("state row round trip and block helpers") {
  ComponentDims dims{2, 1, 2, 1};  // layout x0 x1 y0 z00 z01 a0
  MeasureKernel k;
  k.atlas = build_type_atlas({AtlasMode::Grid, 1, 0.0, 1.0, 0});
  k.dims = dims;
  k.mask = kMaskAll;
  Mat pts(1, 6);
  pts << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  k.clouds = {uniform_cloud(pts)};

  StatePoint p = state_from_row(k, 0, 0, 0.25);
  CHECK(p.t == 0.25);
  CHECK(p.u == 0.5);
  CHECK(p.x(0) == 1.0);
  CHECK(p.x(1) == 2.0);
  CHECK(p.y(0) == 3.0);
  CHECK(p.z(0, 0) == 4.0);
  CHECK(p.z(0, 1) == 5.0);
  CHECK(p.a(0) == 6.0);

  Vec zb = state_block(p, 2);
  CHECK(zb.size() == 2);
  CHECK(zb(1) == 5.0);
  bump_state(p, 2, 1, 0.5);
  CHECK(p.z(0, 1) == 5.5);
  bump_state(p, 2, 1, -0.5);

  Vec row = state_to_row(p, kMaskAll);
  CHECK((row - pts.row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);

  // masked kernels zero-fill the missing blocks
  MeasureKernel xz = project(k, kMaskX | kMaskZ);
  StatePoint q = state_from_row(xz, 0, 0);
  CHECK(q.x(1) == 2.0);
  CHECK(q.z(0, 0) == 4.0);
  CHECK(q.y(0) == 0.0);
  CHECK(q.a(0) == 0.0);

  CHECK(block_mask(0) == kMaskX);
  CHECK(block_mask(3) == kMaskA);
  CHECK(coefficient_rows(dims, Coefficient::Diffusion) == 4);
  CHECK(coefficient_rows(dims, Coefficient::RunningCost) == 1);
}

TEST_CASE("lq values, partials and sensitivities") {
  ModelParams plain;
  auto lq = make_model("lq", plain);
  CHECK(lq->family() == "lq");
  CHECK(lq->measure_free());
  CHECK(lq->declares_convex());
  CHECK(lq->sheet().rho6 == 1.0);
  CHECK(lq->sheet().c_alpha == 1.0);

  StatePoint p = zero_state(kScalar, 0.0, 0.5);
  p.x(0) = 1.2;
  p.a(0) = -0.7;
  AggregateValues none;
  Dynamics dyn = eval_dynamics(*lq, p, none);
  CHECK(dyn.b(0) == -0.7);
  CHECK(dyn.sigma(0, 0) == 1.0);
  CHECK(dyn.f(0) == 0.0);
  CHECK(eval_running_cost(*lq, p, none) == doctest::Approx(0.965).epsilon(1e-12));
  CHECK(eval_terminal_cost(*lq, 0.5, p.x, none) == doctest::Approx(0.72).epsilon(1e-12));
  CHECK(eval_terminal(*lq, 0.5, p.x, none)(0) == 0.0);
  CHECK(eval_initial_cost(*lq, 0.5, p.y) == 0.0);

  ModelParams tracking;
  tracking.values = {{"mean_weight", 2.0}, {"kappa_bar", 0.5}};
  auto lqm = make_model("lq", tracking);
  CHECK_FALSE(lqm->measure_free());
  CHECK_FALSE(lqm->declares_convex());

  MeasureKernel k = scalar_kernel(1, {{0.6, 1.0}});  // mean X = 0.8
  AggregateValues agg = aggregates_for_label(*lqm, k, 0.0, 0.5);
  REQUIRE(agg.size() == 1);
  CHECK(agg[0](0) == doctest::Approx(0.8).epsilon(1e-14));

  // ell = 0.965 + (2/2)(1.2 - 0.5*0.8)^2 = 0.965 + 0.64
  CHECK(eval_running_cost(*lqm, p, agg) == doctest::Approx(1.605).epsilon(1e-12));
  Mat lx = eval_partial(*lqm, Coefficient::RunningCost, 0, p, agg);
  CHECK(lx(0, 0) == doctest::Approx(2.8).epsilon(1e-12));
  Mat la = eval_partial(*lqm, Coefficient::RunningCost, 3, p, agg);
  CHECK(la(0, 0) == doctest::Approx(-0.7).epsilon(1e-12));
  Mat ba = eval_partial(*lqm, Coefficient::Drift, 3, p, agg);
  CHECK(ba(0, 0) == 1.0);

  StatePoint sample = state_from_row(k, 0, 0);
  Mat dP = eval_measure_derivative(*lqm, Coefficient::RunningCost, p, agg, 0, sample);
  CHECK(dP(0, 0) == doctest::Approx(-0.8).epsilon(1e-12));
  // drift never reads the channel
  Mat dPb = eval_measure_derivative(*lqm, Coefficient::Drift, p, agg, 0, sample);
  CHECK(dPb(0, 0) == 0.0);
}

TEST_CASE("graphon aggregate feeds the drift") {
  ModelParams params;
  params.values = {{"ab", -1.0}, {"cb", 1.0}};
  auto m = make_model("graphon-linear", params);
  MeasureKernel k = scalar_kernel(1, {{0.5, 1.5}});  // mean X = 1 under kappa = 1

  StatePoint p = zero_state(kScalar, 0.0, 0.5);
  p.x(0) = 0.5;
  Dynamics dyn = eval_dynamics(*m, p, k);
  CHECK(dyn.b(0) == 0.5);  // -x + mean = -0.5 + 1

  // same aggregate through the generic helper on types_measures
  Vec direct = graphon_aggregate(
      k, [](double, double) { return 1.0; },
      [](const Vec& row) { return Vec::Constant(1, row(0)); }, 0);
  CHECK(direct(0) == 1.0);
}

TEST_CASE("measure derivative of a mean statistic is the graphon weight") {
  ModelParams params;
  params.values = {{"cb", 1.0}};
  params.kappa = "product";
  auto m = make_model("graphon-linear", params);
  MeasureKernel k = scalar_kernel(2, {{0.5, 1.5}, {2.0}});

  const double u = 0.25;
  AggregateValues agg = aggregates_for_label(*m, k, 0.0, u);
  StatePoint p = zero_state(kScalar, 0.0, u);
  StatePoint sample = state_from_row(k, 1, 0);  // type label 0.75
  Mat dP = eval_measure_derivative(*m, Coefficient::Drift, p, agg, 0, sample);
  CHECK(dP(0, 0) == doctest::Approx(0.25 * 0.75).epsilon(1e-14));

  ModelParams flat;
  flat.values = {{"cb", 1.0}};
  auto mc = make_model("graphon-linear", flat);
  AggregateValues cagg = aggregates_for_label(*mc, k, 0.0, u);
  Mat one = eval_measure_derivative(*mc, Coefficient::Drift, p, cagg, 0, sample);
  CHECK(one(0, 0) == 1.0);
}

TEST_CASE("measure derivative of a second moment doubles the sample") {
  QuadModel quad;
  MeasureKernel k = scalar_kernel(1, {{1.0, 2.0}});
  AggregateValues agg = aggregates_for_label(quad, k, 0.0, 0.5);
  CHECK(agg[0](0) == doctest::Approx(2.5).epsilon(1e-14));  // (1 + 4)/2

  StatePoint p = zero_state(kScalar, 0.0, 0.5);
  StatePoint sample = zero_state(kScalar, 0.0, 0.5);
  sample.x(0) = 3.0;
  Mat dP = eval_measure_derivative(quad, Coefficient::Drift, p, agg, 0, sample);
  CHECK(dP(0, 0) == 6.0);

  // a channel without a sensitivity hook is an unsupported derivative
  NoSensModel nosens;
  AggregateValues nagg = aggregates_for_label(nosens, k, 0.0, 0.5);
  CHECK(thrown_code([&] {
          eval_measure_derivative(nosens, Coefficient::Drift, p, nagg, 0, sample);
        }) == ErrorCode::UnsupportedDerivative);
}

TEST_CASE("aggregates across graphon families") {
  // two grid types at labels 0.25 / 0.75, cloud means 2 and 4
  ModelParams params;
  params.values = {{"cb", 1.0}, {"cf", 0.0}, {"cg", 0.0}};
  params.kappa = "product";
  auto m = make_model("graphon-linear", params);
  MeasureKernel k = scalar_kernel(2, {{1.5, 2.5}, {3.5, 4.5}});

  AggregateValues at_quarter = aggregates_for_label(*m, k, 0.0, 0.25);
  CHECK(at_quarter[0](0) == doctest::Approx(1.75 * 0.25).epsilon(1e-12));
  auto per_type = compute_aggregates(*m, k, 0.0);
  REQUIRE(per_type.size() == 2);
  CHECK(per_type[1][0](0) == doctest::Approx(1.75 * 0.75).epsilon(1e-12));

  params.kappa = "min";
  auto mn = make_model("graphon-linear", params);
  AggregateValues minagg = aggregates_for_label(*mn, k, 0.0, 0.25);
  // 0.5*min(.25,.25)*2 + 0.5*min(.25,.75)*4
  CHECK(minagg[0](0) == doctest::Approx(0.75).epsilon(1e-12));

  // measure-free shortcut: no channels, empty aggregate rows
  ModelParams free_params;
  free_params.values = {{"cb", 0.0}, {"cf", 0.0}, {"cg", 0.0}};
  auto fr = make_model("graphon-linear", free_params);
  CHECK(fr->measure_free());
  CHECK(compute_aggregates(*fr, k, 0.0)[0].empty());
}

TEST_CASE("finite difference audit clears the built-ins") {
  MeasureKernel k = audit_kernel(2, 6, 77);
  std::vector<std::pair<std::string, ModelParams>> cases;
  cases.push_back({"lq", {}});
  ModelParams tracking;
  tracking.values = {{"mean_weight", 0.4}, {"kappa_bar", 0.8}};
  cases.push_back({"lq", tracking});
  cases.push_back({"graphon-linear", {}});
  ModelParams prod;
  prod.kappa = "product";
  cases.push_back({"graphon-linear", prod});

  for (const auto& [family, params] : cases) {
    CAPTURE(family);
    auto m = make_model(family, params);
    DerivativeAudit audit = finite_diff_check(*m, k, 0.3, 11, 40);
    CHECK(audit.max_classical_rel <= 1e-5);
    CHECK(audit.worst_slope_gap <= 0.02);
    CHECK(audit.skipped_unsupported == 0);
    if (!m->measure_free()) CHECK(!audit.slopes.empty());

    DerivativeAudit again = finite_diff_check(*m, k, 0.3, 11, 40);
    CHECK(again.max_classical_rel == audit.max_classical_rel);
    CHECK(again.worst_slope_gap == audit.worst_slope_gap);
    CHECK(again.slopes.size() == audit.slopes.size());

    // samples for one probe are consecutive triples across the delta ladder;
    // whenever the coarse rung sits above the noise floor the gap must shrink
    // along the ladder (first-order ratio converging to 1)
    REQUIRE(audit.slopes.size() % 3 == 0);
    for (std::size_t i = 0; i + 2 < audit.slopes.size(); i += 3) {
      const double coarse = std::abs(audit.slopes[i].ratio - 1.0);
      const double fine = std::abs(audit.slopes[i + 2].ratio - 1.0);
      if (coarse > 1e-6) CHECK(fine < coarse);
    }
  }

  // the quadratic channel keeps its slope ratio inside the band because the
  // audit kernel stays away from zero
  QuadModel quad;
  DerivativeAudit qa = finite_diff_check(quad, k, 0.3, 11, 40);
  CHECK(qa.worst_slope_gap <= 0.02);
  CHECK(qa.worst_slope_gap > 0.0);
}

TEST_CASE("declared sheets survive the empirical audit") {
  MeasureKernel k = audit_kernel(2, 5, 31);
  for (const char* family : {"lq", "graphon-linear"}) {
    CAPTURE(family);
    auto m = make_model(family, {});
    SheetAudit audit = audit_sheet(*m, k, 0.2, 13, 1000);
    CHECK(audit.pairs == 1000);
    CHECK(audit.max_violation <= 1e-9);
    CHECK(audit.margins.count("lambda1"));
    CHECK(audit.margins.count("rho6"));
  }

  // the graphon-linear slopes are sharp: the monotonicity margins sit at zero
  auto gl = make_model("graphon-linear", {});
  SheetAudit audit = audit_sheet(*gl, k, 0.2, 13, 200);
  CHECK(std::abs(audit.margins.at("lambda1")) <= 1e-12);
  CHECK(std::abs(audit.margins.at("lambda2")) <= 1e-12);
}

TEST_CASE("default graphon-linear sheet certifies") {
  auto m = make_model("graphon-linear", {});
  SmallnessReport base = certify(m->sheet(), ConditionVariant::Base);
  CHECK(base.feasible);
  CHECK(base.reason == "ok");
  CHECK(base.theta > 0.0);

  SmallnessReport combined = certify(m->sheet(), ConditionVariant::Combined);
  CHECK(combined.feasible);
  REQUIRE(combined.parts.size() == 2);
  CHECK(combined.parts[0].feasible);
  CHECK(combined.parts[1].feasible);

  // the plain LQ sheet sits outside the gate: zero one-sided slopes
  auto lq = make_model("lq", {});
  SmallnessReport rep = certify(lq->sheet(), ConditionVariant::Base);
  CHECK_FALSE(rep.feasible);
  CHECK(rep.reason == "infeasible-gate");
}

TEST_CASE("initial law sampling") {
  InitialLaw dirac;
  dirac.center = Vec::Constant(1, 1.5);
  dirac.type_shift = Vec::Constant(1, 2.0);
  dirac.validate(kScalar);
  CHECK(dirac.sample(0.25, 7, 0, 3)(0) == 2.0);

  InitialLaw gauss;
  gauss.kind = InitialLaw::Kind::Gaussian;
  gauss.center = Vec::Zero(1);
  gauss.spread = Vec::Constant(1, 1.0);
  gauss.validate(kScalar);
  const int N = 20000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < N; ++i) {
    const double v = gauss.sample(0.0, 42, 0, i)(0);
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / N;
  const double var = sumsq / N - mean * mean;
  CHECK(std::abs(mean) < 3.0 / std::sqrt(double(N)));
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
  CHECK(gauss.sample(0.0, 42, 0, 11)(0) == gauss.sample(0.0, 42, 0, 11)(0));
  CHECK(gauss.sample(0.0, 42, 0, 11)(0) != gauss.sample(0.0, 42, 0, 12)(0));
  CHECK(gauss.sample(0.0, 42, 0, 11)(0) != gauss.sample(0.0, 43, 0, 11)(0));

  InitialLaw box;
  box.kind = InitialLaw::Kind::Uniform;
  box.center = Vec::Constant(1, 1.0);
  box.spread = Vec::Constant(1, 0.5);
  box.validate(kScalar);
  double lo = 10.0, hi = -10.0, acc = 0.0;
  for (int i = 0; i < N; ++i) {
    const double v = box.sample(0.0, 9, 0, i)(0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    acc += v;
  }
  CHECK(lo >= 0.5);
  CHECK(hi <= 1.5);
  CHECK(acc / N == doctest::Approx(1.0).epsilon(0.01));

  InitialLaw bad;
  bad.kind = InitialLaw::Kind::Gaussian;
  bad.center = Vec::Zero(1);
  bad.spread = Vec::Constant(1, -0.1);
  CHECK(thrown_code([&] { bad.validate(kScalar); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("model registry and plugin signature") {
  auto names = model_family_names();
  CHECK(std::count(names.begin(), names.end(), "lq") == 1);
  CHECK(std::count(names.begin(), names.end(), "graphon-linear") == 1);

  register_model_family("test-quad", [](const ModelParams&) {
    return std::make_unique<QuadModel>();
  });
  auto via_registry = make_model("test-quad", {});
  CHECK(via_registry->family() == "test-quad");
  CHECK(thrown_code([] {
          register_model_family("test-quad", [](const ModelParams&) {
            return std::make_unique<QuadModel>();
          });
        }) == ErrorCode::InvalidSpec);
  CHECK(thrown_code([] { make_model("no-such-family", {}); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("validation errors carry the right codes") {
  auto gl = make_model("graphon-linear", {});
  MeasureKernel k = scalar_kernel(1, {{0.5, 1.5}});
  StatePoint p = zero_state(kScalar, 0.0, 0.5);

  StatePoint wrong = p;
  wrong.x = Vec::Zero(2);
  AggregateValues agg = aggregates_for_label(*gl, k, 0.0, 0.5);
  CHECK(thrown_code([&] { eval_dynamics(*gl, wrong, agg); }) == ErrorCode::InvalidInput);
  CHECK(thrown_code([&] { eval_dynamics(*gl, p, AggregateValues{}); }) ==
        ErrorCode::InvalidInput);

  MeasureKernel mis = k;
  mis.dims.n = 2;
  CHECK(thrown_code([&] { aggregates_for_label(*gl, mis, 0.0, 0.5); }) ==
        ErrorCode::InvalidInput);

  // the driver channel reads Y, so an X-only kernel cannot feed it
  MeasureKernel xonly = project(k, kMaskX);
  CHECK(thrown_code([&] { compute_aggregates(*gl, xonly, 0.0); }) ==
        ErrorCode::InvalidInput);

  CHECK(thrown_code([] { make_kappa("bogus"); }) == ErrorCode::InvalidSpec);
  ModelParams typo;
  typo.values = {{"mean_weigth", 1.0}};
  CHECK(thrown_code([&] { make_model("lq", typo); }) == ErrorCode::InvalidSpec);
  ModelParams negative;
  negative.values = {{"mean_weight", -1.0}};
  CHECK(thrown_code([&] { make_model("lq", negative); }) == ErrorCode::InvalidSpec);
  ModelParams bad_horizon;
  bad_horizon.horizon = 0.0;
  CHECK(thrown_code([&] { make_model("lq", bad_horizon); }) == ErrorCode::InvalidSpec);
}

}  // TEST_SUITE
