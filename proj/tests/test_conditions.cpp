#include <cmath>
#include <doctest.h>
#include <limits>

#include "hmf/conditions.hpp"
#include "hmf/rng.hpp"

using namespace hmf;

namespace {

// lambda1 = lambda2 = -1, rho4 = 1, every coupling zero
ConstantSheet decoupled_sheet() {
  ConstantSheet s;
  s.lambda1 = -1.0;
  s.lambda2 = -1.0;
  s.rho4 = 1.0;
  return s;
}

Witness unit_witness(double lambda) {
  Witness w;
  w.lambda = lambda;
  return w;
}

// mean-reverting sheet whose couplings scale with s; mu1, w1 stay fixed
ConstantSheet scaled_coupling_sheet(double s) {
  ConstantSheet sh;
  sh.lambda1 = -1.0;
  sh.lambda2 = -1.0;
  sh.mu1 = 0.3;
  sh.w1 = 0.3;
  sh.rho4 = 1.0;
  sh.rho5 = 0.1;
  sh.rho1 = sh.rho2 = sh.rho3 = 0.3 * s;
  sh.mu2 = sh.mu3 = 0.3 * s;
  sh.w2 = sh.w3 = sh.w4 = 0.3 * s;
  return sh;
}

ConstantSheet random_sheet(uint64_t seed) {
  RandomStream st(seed, 0, 0, 0);
  int k = 0;
  auto pick = [&](double lo, double hi) { return lo + (hi - lo) * st.uniform(k++); };
  ConstantSheet s;
  s.lambda1 = pick(-3.0, -0.5);
  s.lambda2 = pick(-3.0, -0.5);
  s.rho1 = pick(0.0, 0.5);
  s.rho2 = pick(0.0, 0.5);
  s.rho3 = pick(0.0, 0.5);
  s.rho4 = pick(0.2, 1.5);
  s.rho5 = pick(0.0, 0.8);
  s.mu1 = pick(0.0, 0.5);
  s.mu2 = pick(0.0, 0.5);
  s.mu3 = pick(0.0, 0.5);
  s.w1 = pick(0.0, 0.4);
  s.w2 = pick(0.0, 0.4);
  s.w3 = pick(0.0, 0.4);
  s.w4 = pick(0.0, 0.4);
  return s;
}

}  // namespace

TEST_SUITE("conditions") {

TEST_CASE("lambda_bars: base formula hand values") {
  ConstantSheet s;
  s.lambda1 = -1.0;
  s.lambda2 = -1.0;

  LambdaBars lb = lambda_bars(s, unit_witness(0.0), ConditionVariant::Base);
  CHECK(lb.l1 == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(lb.l2 == doctest::Approx(2.0).epsilon(1e-15));

  lb = lambda_bars(s, unit_witness(1.0), ConditionVariant::Base);
  CHECK(lb.l1 == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(lb.l2 == doctest::Approx(1.0).epsilon(1e-15));

  s.rho1 = 1.0;
  lb = lambda_bars(s, unit_witness(0.0), ConditionVariant::Base);
  CHECK(lb.l1 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(lb.l2 == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("theta: base value, vacuous sentinel, invalid witness") {
  ConstantSheet s = decoupled_sheet();
  auto th = theta_value(s, unit_witness(0.0), ConditionVariant::Base);
  REQUIRE(th.has_value());
  // theta = 1 / ((1/2 + 1/1) * 1)
  CHECK(*th == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  s.rho4 = 0.0;
  th = theta_value(s, unit_witness(0.0), ConditionVariant::Base);
  REQUIRE(th.has_value());
  CHECK(std::isinf(*th));

  s.rho4 = 1.0;
  th = theta_value(s, unit_witness(5.0), ConditionVariant::Base);  // lambda_bar_2 = -3
  CHECK(!th.has_value());
}

TEST_CASE("certify: decoupled sheet is feasible with theta 2/3 at lambda 0") {
  SmallnessReport rep = certify(decoupled_sheet(), ConditionVariant::Base);
  CHECK(rep.feasible);
  CHECK(rep.reason == "ok");
  CHECK(std::abs(rep.theta - 2.0 / 3.0) < 1e-12);
  CHECK(rep.witness.lambda == 0.0);
  CHECK(rep.lhs1 == 0.0);
  CHECK(rep.lhs2 == 0.0);
  CHECK(rep.lambda_bar_1 == doctest::Approx(2.0));
  CHECK(rep.lambda_bar_2 == doctest::Approx(2.0));
}

TEST_CASE("certify: gate failure is reported as infeasible-gate") {
  ConstantSheet s;
  s.rho3 = 1.0;  // gate needs 0 < -2
  SmallnessReport rep = certify(s, ConditionVariant::Base);
  CHECK(!rep.feasible);
  CHECK(rep.reason == "infeasible-gate");
}

TEST_CASE("marginal variant: hand-evaluated lambda bars, theta, lhs, gate") {
  ConstantSheet s;
  s.lambda1 = -1.0;
  s.lambda2 = -1.0;
  s.rho1 = 0.1;
  s.rho2 = 0.1;
  s.mu1 = 0.2;
  s.mu2 = 0.1;
  s.w1 = 0.1;
  s.w2 = 0.1;
  s.w3 = 0.1;
  s.rho4 = 0.5;
  s.rho5 = 0.1;
  s.rho31 = 0.1;
  s.rho32 = 0.2;
  s.rho33 = 0.3;
  s.mu31 = 0.15;
  s.mu32 = 0.05;
  s.mu33 = 0.25;
  s.w41 = 0.1;
  s.w42 = 0.2;
  s.w43 = 0.3;

  Witness w = unit_witness(0.0);  // all C = K = K2 = 1
  LambdaBars lb = lambda_bars(s, w, ConditionVariant::Marginal);
  // 2 - 0.1 - 0.1 - 0.2 - 0.3 - 2*0.1 - 0.01 - 0.01
  CHECK(lb.l1 == doctest::Approx(1.08).epsilon(1e-12));
  // 2 - 0.2 - (0.1 + 0.25) - 0.15 - 2*0.05
  CHECK(lb.l2 == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(witness_denominator(s, w, ConditionVariant::Marginal) ==
        doctest::Approx(0.65).epsilon(1e-12));

  auto th = theta_value(s, w, ConditionVariant::Marginal);
  REQUIRE(th.has_value());
  double expect = 1.0 / ((1.0 / 1.2 + 1.0 / 0.65) * (0.25 + 0.01 + 0.35 / 1.08));
  CHECK(*th == doctest::Approx(expect).epsilon(1e-12));

  auto [a, b] = lhs_pair(s, w, ConditionVariant::Marginal);
  CHECK(a == doctest::Approx(0.1 + 0.01 + 0.2 + 0.04).epsilon(1e-12));
  CHECK(b == doctest::Approx(0.1 + 0.01 + 0.3 + 0.09).epsilon(1e-12));

  CHECK(gate_holds(s, ConditionVariant::Marginal));
  SmallnessReport rep = certify(s, ConditionVariant::Marginal);
  CHECK(rep.feasible);
}

TEST_CASE("variational theta1: hatted substitution against longhand") {
  ConstantSheet s;
  s.lambda1 = -1.0;
  s.lambda2 = -1.0;
  s.rho1 = 0.1;
  s.rho2 = 0.1;
  s.rho3 = 0.1;
  s.mu1 = 0.2;
  s.mu2 = 0.1;
  s.mu3 = 0.1;
  s.w1 = 0.1;
  s.w2 = 0.1;
  s.w3 = 0.1;
  s.w4 = 0.1;
  s.rho4 = 0.5;
  s.rho5 = 0.2;

  Witness w = unit_witness(0.0);
  LambdaBars lb = lambda_bars(s, w, ConditionVariant::VariationalTheta1);
  // 2 - 0.1 - 0.1 - 4*0.1 - 6*0.01 - 6*0.01
  CHECK(lb.l1 == doctest::Approx(1.28).epsilon(1e-12));
  // 2 - 0.2 - 0.2 - 3*0.1  (same as the base second bar)
  CHECK(lb.l2 == doctest::Approx(1.3).epsilon(1e-12));
  LambdaBars base = lambda_bars(s, w, ConditionVariant::Base);
  CHECK(base.l1 == doctest::Approx(1.38).epsilon(1e-12));
  CHECK(base.l2 == doctest::Approx(lb.l2).epsilon(1e-15));

  auto th = theta_value(s, w, ConditionVariant::VariationalTheta1);
  REQUIRE(th.has_value());
  double expect = 1.0 / ((1.0 / 1.3 + 1.0 / 0.8) * (2.0 * 0.25 + 2.0 * 0.04 + 0.3 / 1.28));
  CHECK(*th == doctest::Approx(expect).epsilon(1e-12));

  auto [a, b] = lhs_pair(s, w, ConditionVariant::VariationalTheta1);
  CHECK(a == doctest::Approx(0.1 + 0.06 + 0.1 + 0.06).epsilon(1e-12));
  CHECK(b == doctest::Approx(0.1 + 0.06 + 0.1 + 0.06).epsilon(1e-12));
  auto [ab, bb] = lhs_pair(s, w, ConditionVariant::Base);
  CHECK(ab == doctest::Approx(0.22).epsilon(1e-12));
  CHECK(bb == doctest::Approx(0.22).epsilon(1e-12));

  CHECK(gate_holds(s, ConditionVariant::VariationalTheta1));
}

TEST_CASE("adjoint theta2: hand-evaluated bars, theta, lhs, gate") {
  ConstantSheet s;
  s.lambda1 = -1.0;
  s.lambda2 = -1.0;
  s.rho1 = 0.1;
  s.rho2 = 0.2;
  s.w1 = 0.1;
  s.w2 = 0.15;
  s.w3 = 0.1;
  s.mu1 = 0.2;
  s.mu2 = 0.1;
  s.rho4 = 0.5;
  s.rhobar5 = 0.1;
  s.mubar_b1 = 0.05;
  s.mubar_b2 = 0.1;
  s.mubar_b3 = 0.15;
  s.mubar_f1 = 0.1;
  s.mubar_f2 = 0.05;
  s.mubar_f3 = 0.1;
  s.mubar_s1 = 0.2;
  s.mubar_s2 = 0.1;
  s.mubar_s3 = 0.05;

  Witness w;  // barred side all ones, lambda_bar = 0
  LambdaBars lb = lambda_bars(s, w, ConditionVariant::AdjointTheta2);
  // 2 - 0.1 - 0.15 - 2*0.05 - 0.1 - 0.1 - 6*0.01 - 6*0.01
  CHECK(lb.l1 == doctest::Approx(1.33).epsilon(1e-12));
  // 2 - 0.2 - 0.1 - 2*0.05 - 0.1 - 0.2
  CHECK(lb.l2 == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(witness_denominator(s, w, ConditionVariant::AdjointTheta2) ==
        doctest::Approx(0.7).epsilon(1e-12));

  auto th = theta_value(s, w, ConditionVariant::AdjointTheta2);
  REQUIRE(th.has_value());
  double expect = 1.0 / ((1.0 / 1.3 + 1.0 / 0.7) * (0.5 + 0.02 + 0.3 / 1.33));
  CHECK(*th == doctest::Approx(expect).epsilon(1e-12));

  auto [a, b] = lhs_pair(s, w, ConditionVariant::AdjointTheta2);
  CHECK(a == doctest::Approx(0.1 + 0.24 + 0.1 + 0.135).epsilon(1e-12));
  CHECK(b == doctest::Approx(0.15 + 0.06 + 0.1 + 0.015).epsilon(1e-12));

  CHECK(gate_holds(s, ConditionVariant::AdjointTheta2));
  SmallnessReport rep = certify(s, ConditionVariant::AdjointTheta2);
  CHECK(rep.feasible);
}

TEST_CASE("combined: decoupled sheet gives theta' = 1/3 and both parts") {
  SmallnessReport rep = certify(decoupled_sheet(), ConditionVariant::Combined);
  CHECK(rep.feasible);
  CHECK(rep.reason == "ok");
  REQUIRE(rep.parts.size() == 2);
  CHECK(rep.parts[0].variant == ConditionVariant::VariationalTheta1);
  CHECK(rep.parts[1].variant == ConditionVariant::AdjointTheta2);
  // both
  // thetas are 1/((1/2 + 1) * 2 rho4^2) = 1/3, so the minimum is too
  CHECK(std::abs(rep.parts[0].theta - 1.0 / 3.0) < 1e-12);
  CHECK(std::abs(rep.parts[1].theta - 1.0 / 3.0) < 1e-12);
  CHECK(std::abs(rep.theta - 1.0 / 3.0) < 1e-12);
  CHECK(rep.lhs1 == 0.0);
  CHECK(rep.lhs2 == 0.0);
}

TEST_CASE("theta is monotone nonincreasing in rho4, rho5, mu1, mu3") {
  int checked = 0;
  for (uint64_t seed = 1; seed <= 60; ++seed) {
    ConstantSheet s = random_sheet(seed);
    Witness w = unit_witness(0.0);
    // balance the two bars so more sheets give a valid witness
    {
      LambdaBars lb0 = lambda_bars(s, w, ConditionVariant::Base);
      w.lambda = (lb0.l2 - lb0.l1) / 2.0;
    }
    auto th = theta_value(s, w, ConditionVariant::Base);
    if (!th || std::isinf(*th)) continue;
    CHECK(*th > 0.0);
    auto bumped = [&](auto&& set) {
      ConstantSheet t = s;
      set(t);
      return theta_value(t, w, ConditionVariant::Base);
    };
    for (auto& next : {bumped([](ConstantSheet& t) { t.rho4 += 0.3; }),
                       bumped([](ConstantSheet& t) { t.rho5 += 0.3; }),
                       bumped([](ConstantSheet& t) { t.mu1 += 0.2; }),
                       bumped([](ConstantSheet& t) { t.mu3 += 0.2; })}) {
      if (!next) continue;  // bump can invalidate the witness
      CHECK(*next <= *th + 1e-12);
      ++checked;
    }
  }
  CHECK(checked > 60);
}

TEST_CASE("certify never reports feasible with a broken certificate") {
  for (uint64_t seed = 100; seed < 140; ++seed) {
    ConstantSheet s = random_sheet(seed);
    // widen: some of these sheets fail the gate, some need searching
    if (seed % 3 == 0) s.rho3 += 1.0;
    if (seed % 4 == 0) s.lambda1 = 0.2;
    SmallnessReport rep = certify(s, ConditionVariant::Base);
    CHECK((rep.reason == "ok" || rep.reason == "infeasible-gate" ||
           rep.reason == "infeasible-search"));
    CHECK(rep.feasible == (rep.reason == "ok"));
    if (rep.feasible) {
      CHECK(rep.lambda_bar_1 > 0.0);
      CHECK(rep.lambda_bar_2 > 0.0);
      CHECK(witness_denominator(s, rep.witness, ConditionVariant::Base) > 0.0);
      CHECK(rep.lhs1 < rep.theta);
      CHECK(rep.lhs2 < rep.theta);
    }
  }
}

TEST_CASE("shrinking the couplings eventually certifies the mean-reverting sheet") {
  for (double sc : {1.0, 0.5, 0.1, 0.01}) CHECK(gate_holds(scaled_coupling_sheet(sc), ConditionVariant::Base));
  CHECK(certify(scaled_coupling_sheet(0.1), ConditionVariant::Base).feasible);
  CHECK(certify(scaled_coupling_sheet(0.01), ConditionVariant::Base).feasible);
}

TEST_CASE("certify is deterministic for a fixed budget") {
  for (double sc : {0.0, 0.5}) {
    ConstantSheet s = sc == 0.0 ? decoupled_sheet() : scaled_coupling_sheet(sc);
    SmallnessReport a = certify(s, ConditionVariant::Base);
    SmallnessReport b = certify(s, ConditionVariant::Base);
    CHECK(a.feasible == b.feasible);
    CHECK(a.reason == b.reason);
    CHECK(a.witness.lambda == b.witness.lambda);
    CHECK(a.witness.C1 == b.witness.C1);
    CHECK(a.witness.K2 == b.witness.K2);
    CHECK(a.theta == b.theta);  // bitwise, including NaN never appearing here
    CHECK(a.lhs1 == b.lhs1);
  }
}

TEST_CASE("sheet and witness validation errors") {
  ConstantSheet s = decoupled_sheet();
  Witness w;
  w.C1 = 0.0;
  CHECK_THROWS_AS(lambda_bars(s, w, ConditionVariant::Base), Error);
  try {
    lambda_bars(s, w, ConditionVariant::Base);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidInput);
  }

  ConstantSheet bad = s;
  bad.rho1 = -0.1;
  CHECK_THROWS_AS(certify(bad, ConditionVariant::Base), Error);
  try {
    certify(bad, ConditionVariant::Base);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidSpec);
  }

  bad = s;
  bad.mu2 = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(certify(bad, ConditionVariant::Base), Error);
}

TEST_CASE("combined and single-variant ops disagree on purpose") {
  ConstantSheet s = decoupled_sheet();
  Witness w;
  CHECK_THROWS_AS(lambda_bars(s, w, ConditionVariant::Combined), Error);
  CHECK_THROWS_AS(lhs_pair(s, w, ConditionVariant::Combined), Error);
  CHECK_THROWS_AS(theta_value(s, w, ConditionVariant::Combined), Error);
}

}  // TEST_SUITE
