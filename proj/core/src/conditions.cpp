#include "hmf/conditions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

namespace hmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_nonneg(double v, const char* name) {
  if (!std::isfinite(v)) fail(ErrorCode::InvalidSpec, "conditions", std::string(name) + " must be finite");
  if (v < 0.0) fail(ErrorCode::InvalidSpec, "conditions", std::string(name) + " must be nonnegative");
}

void require_positive(double v, const char* name) {
  if (!std::isfinite(v) || !(v > 0.0))
    fail(ErrorCode::InvalidInput, "conditions", std::string("invalid witness: ") + name + " must be positive");
}

// the witness block a variant actually reads
void check_witness(const Witness& w, ConditionVariant variant) {
  if (variant == ConditionVariant::AdjointTheta2) {
    if (!std::isfinite(w.lambda_bar))
      fail(ErrorCode::InvalidInput, "conditions", "invalid witness: lambda_bar must be finite");
    require_positive(w.Cb1, "Cb1");
    require_positive(w.Cb2, "Cb2");
    require_positive(w.Cb3, "Cb3");
    require_positive(w.Cb4, "Cb4");
    require_positive(w.Kb1, "Kb1");
    require_positive(w.Kb2, "Kb2");
    require_positive(w.Kb3, "Kb3");
    return;
  }
  if (!std::isfinite(w.lambda))
    fail(ErrorCode::InvalidInput, "conditions", "invalid witness: lambda must be finite");
  require_positive(w.C1, "C1");
  require_positive(w.C2, "C2");
  require_positive(w.C3, "C3");
  require_positive(w.C4, "C4");
  require_positive(w.K1, "K1");
  require_positive(w.K2, "K2");
  require_positive(w.K3, "K3");
}

void no_combined(ConditionVariant variant, const char* op) {
  if (variant == ConditionVariant::Combined)
    fail(ErrorCode::InvalidInput, "conditions",
         std::string(op) + ": combined variant is evaluated through its parts");
}

// coupling total constrained by K2 (or the barred K2)
double k2_sum(const ConstantSheet& s, ConditionVariant variant) {
  switch (variant) {
    case ConditionVariant::Base:
    case ConditionVariant::VariationalTheta1:
      return s.mu2 + s.mu3;
    case ConditionVariant::Marginal:
      return s.mu2 + s.mu33;
    case ConditionVariant::AdjointTheta2:
      return s.w1 + s.mubar_s1;
    default:
      fail(ErrorCode::Internal, "conditions", "k2_sum: bad variant");
  }
}

}  // namespace

const char* variant_name(ConditionVariant v) {
  switch (v) {
    case ConditionVariant::Base: return "base";
    case ConditionVariant::Marginal: return "marginal";
    case ConditionVariant::VariationalTheta1: return "variational-theta1";
    case ConditionVariant::AdjointTheta2: return "adjoint-theta2";
    case ConditionVariant::Combined: return "combined";
  }
  return "?";
}

void ConstantSheet::validate() const {
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2))
    fail(ErrorCode::InvalidSpec, "conditions", "lambda1/lambda2 must be finite");
  require_nonneg(rho1, "rho1");
  require_nonneg(rho2, "rho2");
  require_nonneg(rho3, "rho3");
  require_nonneg(rho4, "rho4");
  require_nonneg(rho5, "rho5");
  require_nonneg(rho6, "rho6");
  require_nonneg(mu1, "mu1");
  require_nonneg(mu2, "mu2");
  require_nonneg(mu3, "mu3");
  require_nonneg(mu4, "mu4");
  require_nonneg(w1, "w1");
  require_nonneg(w2, "w2");
  require_nonneg(w3, "w3");
  require_nonneg(w4, "w4");
  require_nonneg(w5, "w5");
  require_nonneg(rho31, "rho31");
  require_nonneg(rho32, "rho32");
  require_nonneg(rho33, "rho33");
  require_nonneg(mu31, "mu31");
  require_nonneg(mu32, "mu32");
  require_nonneg(mu33, "mu33");
  require_nonneg(w41, "w41");
  require_nonneg(w42, "w42");
  require_nonneg(w43, "w43");
  require_nonneg(rhobar5, "rhobar5");
  require_nonneg(mubar_b1, "mubar_b1");
  require_nonneg(mubar_b2, "mubar_b2");
  require_nonneg(mubar_b3, "mubar_b3");
  require_nonneg(mubar_f1, "mubar_f1");
  require_nonneg(mubar_f2, "mubar_f2");
  require_nonneg(mubar_f3, "mubar_f3");
  require_nonneg(mubar_s1, "mubar_s1");
  require_nonneg(mubar_s2, "mubar_s2");
  require_nonneg(mubar_s3, "mubar_s3");
  require_nonneg(c_alpha, "c_alpha");
}

LambdaBars lambda_bars(const ConstantSheet& s, const Witness& w, ConditionVariant variant) {
  no_combined(variant, "lambda_bars");
  check_witness(w, variant);
  LambdaBars out;
  switch (variant) {
    case ConditionVariant::Base:
      out.l1 = w.lambda - 2.0 * s.lambda1 - s.rho1 / w.C1 - s.rho2 / w.C2 -
               (2.0 + 1.0 / w.C3 + 1.0 / w.C4) * s.rho3 - s.w1 * s.w1 - s.w4 * s.w4;
      out.l2 = -w.lambda - 2.0 * s.lambda2 - s.mu1 / w.K1 - (s.mu2 + s.mu3) / w.K2 -
               (2.0 + 1.0 / w.K3) * s.mu3;
      break;
    case ConditionVariant::Marginal:
      out.l1 = w.lambda - 2.0 * s.lambda1 - s.rho1 / w.C1 - s.rho2 / w.C2 - s.rho32 / w.C3 -
               s.rho33 / w.C4 - 2.0 * s.rho31 - s.w1 * s.w1 - s.w41 * s.w41;
      out.l2 = -w.lambda - 2.0 * s.lambda2 - s.mu1 / w.K1 - (s.mu2 + s.mu33) / w.K2 -
               s.mu31 / w.K3 - 2.0 * s.mu32;
      break;
    case ConditionVariant::VariationalTheta1:
      // hatted diffusion constants: w-hat^2 = 6 w^2
      out.l1 = w.lambda - 2.0 * s.lambda1 - s.rho1 / w.C1 - s.rho2 / w.C2 -
               (2.0 + 1.0 / w.C3 + 1.0 / w.C4) * s.rho3 - 6.0 * s.w1 * s.w1 - 6.0 * s.w4 * s.w4;
      out.l2 = -w.lambda - 2.0 * s.lambda2 - s.mu1 / w.K1 - (s.mu2 + s.mu3) / w.K2 -
               (2.0 + 1.0 / w.K3) * s.mu3;
      break;
    case ConditionVariant::AdjointTheta2:
      out.l1 = w.lambda_bar - 2.0 * s.lambda2 - s.rho1 / w.Cb1 - s.w2 / w.Cb2 -
               2.0 * s.mubar_f2 - s.mubar_b2 / w.Cb3 - s.mubar_s2 / w.Cb4 -
               6.0 * s.mu2 * s.mu2 - 6.0 * s.mubar_f3 * s.mubar_f3;
      out.l2 = -w.lambda_bar - 2.0 * s.lambda1 - s.mu1 / w.Kb1 - s.w1 / w.Kb2 -
               2.0 * s.mubar_b1 - s.mubar_f1 / w.Kb3 - s.mubar_s1 / w.Kb2;
      break;
    default:
      fail(ErrorCode::Internal, "conditions", "lambda_bars: bad variant");
  }
  return out;
}

double witness_denominator(const ConstantSheet& s, const Witness& w, ConditionVariant variant) {
  no_combined(variant, "witness_denominator");
  double k2 = variant == ConditionVariant::AdjointTheta2 ? w.Kb2 : w.K2;
  return 1.0 - k2 * k2_sum(s, variant);
}

std::optional<double> theta_value(const ConstantSheet& s, const Witness& w,
                                  ConditionVariant variant) {
  no_combined(variant, "theta_value");
  LambdaBars lb = lambda_bars(s, w, variant);
  double den = witness_denominator(s, w, variant);
  if (!(lb.l1 > 0.0) || !(lb.l2 > 0.0) || !(den > 0.0)) return std::nullopt;
  double bracket = 0.0;
  switch (variant) {
    case ConditionVariant::Base:
      bracket = s.rho4 * s.rho4 + s.rho5 * s.rho5 + (w.K1 * s.mu1 + w.K3 * s.mu3) / lb.l1;
      break;
    case ConditionVariant::Marginal:
      bracket = s.rho4 * s.rho4 + s.rho5 * s.rho5 + (w.K1 * s.mu1 + w.K3 * s.mu31) / lb.l1;
      break;
    case ConditionVariant::VariationalTheta1:
      // hatted terminal constants: rho-hat^2 = 2 rho^2
      bracket = 2.0 * s.rho4 * s.rho4 + 2.0 * s.rho5 * s.rho5 +
                (w.K1 * s.mu1 + w.K3 * s.mu3) / lb.l1;
      break;
    case ConditionVariant::AdjointTheta2:
      bracket = 2.0 * s.rho4 * s.rho4 + 2.0 * s.rhobar5 * s.rhobar5 +
                (w.Kb1 * s.mu1 + w.Kb3 * s.mubar_f1) / lb.l1;
      break;
    default:
      fail(ErrorCode::Internal, "conditions", "theta_value: bad variant");
  }
  if (bracket == 0.0) return kInf;  // vacuous condition
  return 1.0 / ((1.0 / lb.l2 + 1.0 / den) * bracket);
}

std::pair<double, double> lhs_pair(const ConstantSheet& s, const Witness& w,
                                   ConditionVariant variant) {
  no_combined(variant, "lhs_pair");
  check_witness(w, variant);
  switch (variant) {
    case ConditionVariant::Base:
      return {w.C1 * s.rho1 + s.w2 * s.w2 + w.C3 * s.rho3 + s.w4 * s.w4,
              w.C2 * s.rho2 + s.w3 * s.w3 + w.C4 * s.rho3 + s.w4 * s.w4};
    case ConditionVariant::Marginal:
      return {w.C1 * s.rho1 + s.w2 * s.w2 + w.C3 * s.rho32 + s.w42 * s.w42,
              w.C2 * s.rho2 + s.w3 * s.w3 + w.C4 * s.rho33 + s.w43 * s.w43};
    case ConditionVariant::VariationalTheta1:
      return {w.C1 * s.rho1 + 6.0 * s.w2 * s.w2 + w.C3 * s.rho3 + 6.0 * s.w4 * s.w4,
              w.C2 * s.rho2 + 6.0 * s.w3 * s.w3 + w.C4 * s.rho3 + 6.0 * s.w4 * s.w4};
    case ConditionVariant::AdjointTheta2:
      return {w.Cb1 * s.rho1 + 6.0 * s.rho2 * s.rho2 + w.Cb3 * s.mubar_b2 +
                  6.0 * s.mubar_b3 * s.mubar_b3,
              w.Cb2 * s.w2 + 6.0 * s.w3 * s.w3 + w.Cb4 * s.mubar_s2 +
                  6.0 * s.mubar_s3 * s.mubar_s3};
    default:
      fail(ErrorCode::Internal, "conditions", "lhs_pair: bad variant");
  }
}

bool gate_holds(const ConstantSheet& s, ConditionVariant variant) {
  double lhs = 2.0 * (s.lambda1 + s.lambda2);
  switch (variant) {
    case ConditionVariant::Base:
      return lhs < -2.0 * s.rho3 - s.w1 * s.w1 - s.w4 * s.w4 -
                       (s.mu2 + s.mu3) * (s.mu2 + s.mu3) - 2.0 * s.mu3;
    case ConditionVariant::Marginal:
      return lhs < -2.0 * s.rho31 - s.w1 * s.w1 - s.w41 * s.w41 -
                       (s.mu2 + s.mu33) * (s.mu2 + s.mu33) - 2.0 * s.mu32;
    case ConditionVariant::VariationalTheta1:
      return lhs < -2.0 * s.rho3 - 6.0 * s.w1 * s.w1 - 6.0 * s.w4 * s.w4 - 2.0 * s.mu3 -
                       (s.mu2 + s.mu3) * (s.mu2 + s.mu3);
    case ConditionVariant::AdjointTheta2:
      return lhs < -2.0 * s.mubar_f2 - 6.0 * s.mu2 * s.mu2 - 6.0 * s.mubar_f3 * s.mubar_f3 -
                       2.0 * s.mubar_b1 - (s.mubar_s1 + s.w1) * (s.mubar_s1 + s.w1);
    case ConditionVariant::Combined:
      return gate_holds(s, ConditionVariant::VariationalTheta1) &&
             gate_holds(s, ConditionVariant::AdjointTheta2);
  }
  return false;
}

namespace {

bool is_adjoint(ConditionVariant v) { return v == ConditionVariant::AdjointTheta2; }

// lambda balancing the two bars at the given C/K entries; exact 0 for a
// symmetric sheet, which the reporting path relies on
double balanced_lambda(const ConstantSheet& s, Witness w, ConditionVariant variant) {
  if (is_adjoint(variant)) {
    w.lambda_bar = 0.0;
    LambdaBars lb = lambda_bars(s, w, variant);
    return (lb.l2 - lb.l1) / 2.0;
  }
  w.lambda = 0.0;
  LambdaBars lb = lambda_bars(s, w, variant);
  return (lb.l2 - lb.l1) / 2.0;
}

Witness scaled_witness(const ConstantSheet& s, ConditionVariant variant, double c_scale,
                       double k_scale, double k2_frac) {
  Witness w;
  double sum = k2_sum(s, variant);
  double k2 = sum > 0.0 ? k2_frac / sum : 1.0;
  if (is_adjoint(variant)) {
    w.Cb1 = w.Cb2 = w.Cb3 = w.Cb4 = c_scale;
    w.Kb1 = w.Kb3 = k_scale;
    w.Kb2 = k2;
    w.lambda_bar = balanced_lambda(s, w, variant);
  } else {
    w.C1 = w.C2 = w.C3 = w.C4 = c_scale;
    w.K1 = w.K3 = k_scale;
    w.K2 = k2;
    w.lambda = balanced_lambda(s, w, variant);
  }
  return w;
}

Witness canonical_witness(const ConstantSheet& s, ConditionVariant variant) {
  return scaled_witness(s, variant, 1.0, 1.0, 0.5);
}

bool feasible_at(const ConstantSheet& s, const Witness& w, ConditionVariant variant) {
  auto th = theta_value(s, w, variant);
  if (!th) return false;
  auto [a, b] = lhs_pair(s, w, variant);
  return a < *th && b < *th;
}

// negative when the witness is invalid (distance to validity), otherwise the
// feasibility margin theta - max(lhs)
double witness_score(const ConstantSheet& s, const Witness& w, ConditionVariant variant) {
  LambdaBars lb = lambda_bars(s, w, variant);
  double den = witness_denominator(s, w, variant);
  double worst = std::min({lb.l1, lb.l2, den});
  if (!(worst > 0.0)) return worst - 1.0;
  double th = *theta_value(s, w, variant);
  auto [a, b] = lhs_pair(s, w, variant);
  if (std::isinf(th)) return kInf;
  return th - std::max(a, b);
}

void fill_values(SmallnessReport& rep, const ConstantSheet& s, const Witness& w,
                 ConditionVariant variant) {
  rep.witness = w;
  LambdaBars lb = lambda_bars(s, w, variant);
  rep.lambda_bar_1 = lb.l1;
  rep.lambda_bar_2 = lb.l2;
  auto th = theta_value(s, w, variant);
  rep.theta = th ? *th : kNaN;
  auto [a, b] = lhs_pair(s, w, variant);
  rep.lhs1 = a;
  rep.lhs2 = b;
  rep.feasible = th.has_value() && a < *th && b < *th;
}

void enforce_report_invariant(const SmallnessReport& rep, const ConstantSheet& s) {
  if (!rep.feasible) return;
  bool ok;
  if (rep.variant == ConditionVariant::Combined) {
    ok = rep.parts.size() == 2;
    for (const auto& p : rep.parts)
      ok = ok && p.lambda_bar_1 > 0.0 && p.lambda_bar_2 > 0.0 &&
           witness_denominator(s, p.witness, p.variant) > 0.0 && p.lhs1 < rep.theta &&
           p.lhs2 < rep.theta;
  } else {
    ok = rep.lambda_bar_1 > 0.0 && rep.lambda_bar_2 > 0.0 &&
         witness_denominator(s, rep.witness, rep.variant) > 0.0 && rep.lhs1 < rep.theta &&
         rep.lhs2 < rep.theta;
  }
  if (!ok)
    fail(ErrorCode::Internal, "certify", "feasible report violates the smallness invariant");
}

// deterministic multi-start coordinate ascent on the witness score
Witness search_witness(const ConstantSheet& s, ConditionVariant variant,
                       const SearchBudget& budget, bool& found) {
  static constexpr std::array<std::array<double, 3>, 10> kStarts = {{
      {1.0, 1.0, 0.5},
      {4.0, 4.0, 0.5},
      {0.25, 0.25, 0.5},
      {16.0, 16.0, 0.5},
      {4.0, 0.25, 0.5},
      {0.25, 4.0, 0.5},
      {64.0, 64.0, 0.5},
      {1.0, 16.0, 0.5},
      {1.0, 1.0, 0.1},
      {1.0, 1.0, 0.9},
  }};
  const double sum = k2_sum(s, variant);
  const bool adj = is_adjoint(variant);
  double Witness::*lam = adj ? &Witness::lambda_bar : &Witness::lambda;
  std::array<double Witness::*, 6> mult =
      adj ? std::array<double Witness::*, 6>{&Witness::Cb1, &Witness::Cb2, &Witness::Cb3,
                                             &Witness::Cb4, &Witness::Kb1, &Witness::Kb3}
          : std::array<double Witness::*, 6>{&Witness::C1, &Witness::C2, &Witness::C3,
                                             &Witness::C4, &Witness::K1, &Witness::K3};
  double Witness::*k2 = adj ? &Witness::Kb2 : &Witness::K2;

  auto clamp_k2 = [&](Witness& w) {
    double lo = 1e-9;
    double hi = sum > 0.0 ? (1.0 - 1e-9) / sum : 1e9;
    w.*k2 = std::clamp(w.*k2, lo, hi);
  };

  Witness best = canonical_witness(s, variant);
  double best_score = witness_score(s, best, variant);
  found = best_score > 0.0;
  if (found) return best;

  int starts = std::clamp(budget.starts, 1, static_cast<int>(kStarts.size()));
  for (int si = 0; si < starts && !found; ++si) {
    Witness w = scaled_witness(s, variant, kStarts[si][0], kStarts[si][1], kStarts[si][2]);
    clamp_k2(w);
    double sc = witness_score(s, w, variant);
    for (int sweep = 0; sweep < budget.sweeps && !(sc > 0.0); ++sweep) {
      double fac = 1.0 + 6.0 / (sweep + 2);
      bool improved = false;
      for (int move = 0; move < 16; ++move) {
        Witness cand = w;
        if (move < 2) {
          double step = (1.0 + std::abs(w.*lam)) * (fac - 1.0);
          cand.*lam += move == 0 ? step : -step;
        } else if (move < 14) {
          double Witness::*f = mult[(move - 2) / 2];
          cand.*f = (move % 2 == 0) ? cand.*f * fac : cand.*f / fac;
        } else {
          cand.*k2 = (move == 14) ? cand.*k2 * fac : cand.*k2 / fac;
          clamp_k2(cand);
        }
        double cs = witness_score(s, cand, variant);
        if (cs > sc) {
          sc = cs;
          w = cand;
          improved = true;
        }
      }
      if (!improved && fac < 1.3) break;
    }
    if (sc > best_score) {
      best_score = sc;
      best = w;
    }
    found = best_score > 0.0;
  }
  return best;
}

SmallnessReport certify_single(const ConstantSheet& s, ConditionVariant variant,
                               const SearchBudget& budget) {
  SmallnessReport rep;
  rep.variant = variant;
  if (!gate_holds(s, variant)) {
    fill_values(rep, s, canonical_witness(s, variant), variant);
    rep.feasible = false;
    rep.reason = "infeasible-gate";
    return rep;
  }
  Witness canon = canonical_witness(s, variant);
  if (feasible_at(s, canon, variant)) {
    fill_values(rep, s, canon, variant);
    rep.reason = "ok";
    return rep;
  }
  bool found = false;
  Witness w = search_witness(s, variant, budget, found);
  fill_values(rep, s, w, variant);
  rep.reason = rep.feasible ? "ok" : "infeasible-search";
  return rep;
}

SmallnessReport certify_combined(const ConstantSheet& s, const SearchBudget& budget) {
  SmallnessReport rep;
  rep.variant = ConditionVariant::Combined;
  SmallnessReport vario = certify_single(s, ConditionVariant::VariationalTheta1, budget);
  SmallnessReport adj = certify_single(s, ConditionVariant::AdjointTheta2, budget);

  rep.witness = vario.witness;
  rep.witness.lambda_bar = adj.witness.lambda_bar;
  rep.witness.Cb1 = adj.witness.Cb1;
  rep.witness.Cb2 = adj.witness.Cb2;
  rep.witness.Cb3 = adj.witness.Cb3;
  rep.witness.Cb4 = adj.witness.Cb4;
  rep.witness.Kb1 = adj.witness.Kb1;
  rep.witness.Kb2 = adj.witness.Kb2;
  rep.witness.Kb3 = adj.witness.Kb3;
  rep.lambda_bar_1 = vario.lambda_bar_1;
  rep.lambda_bar_2 = vario.lambda_bar_2;
  rep.lhs1 = vario.lhs1;
  rep.lhs2 = vario.lhs2;
  rep.theta = std::min(vario.theta, adj.theta);  // NaN propagates as NaN via comparison below

  bool gates = gate_holds(s, ConditionVariant::Combined);
  bool parts_valid = !std::isnan(vario.theta) && !std::isnan(adj.theta);
  if (!parts_valid) rep.theta = kNaN;
  rep.feasible = gates && parts_valid && vario.lhs1 < rep.theta && vario.lhs2 < rep.theta &&
                 adj.lhs1 < rep.theta && adj.lhs2 < rep.theta;
  rep.reason = !gates ? "infeasible-gate" : (rep.feasible ? "ok" : "infeasible-search");
  rep.parts.push_back(std::move(vario));
  rep.parts.push_back(std::move(adj));
  return rep;
}

}  // namespace

SmallnessReport certify(const ConstantSheet& sheet, ConditionVariant variant,
                        const SearchBudget& budget) {
  sheet.validate();
  SmallnessReport rep = variant == ConditionVariant::Combined
                            ? certify_combined(sheet, budget)
                            : certify_single(sheet, variant, budget);
  enforce_report_invariant(rep, sheet);
  return rep;
}

namespace {

nlohmann::json theta_json(double t) {
  if (std::isnan(t)) return "undefined";
  if (std::isinf(t)) return "inf";
  return t;
}

nlohmann::json witness_to_json(const Witness& w) {
  return {{"lambda", w.lambda}, {"C1", w.C1},   {"C2", w.C2},   {"C3", w.C3},
          {"C4", w.C4},         {"K1", w.K1},   {"K2", w.K2},   {"K3", w.K3},
          {"lambda_bar", w.lambda_bar},         {"Cb1", w.Cb1}, {"Cb2", w.Cb2},
          {"Cb3", w.Cb3},       {"Cb4", w.Cb4}, {"Kb1", w.Kb1}, {"Kb2", w.Kb2},
          {"Kb3", w.Kb3}};
}

}  // namespace

nlohmann::json report_to_json(const SmallnessReport& rep) {
  nlohmann::json j = {{"variant", variant_name(rep.variant)},
                      {"feasible", rep.feasible},
                      {"reason", rep.reason},
                      {"witness", witness_to_json(rep.witness)},
                      {"lambda_bar_1", rep.lambda_bar_1},
                      {"lambda_bar_2", rep.lambda_bar_2},
                      {"theta", theta_json(rep.theta)},
                      {"lhs1", rep.lhs1},
                      {"lhs2", rep.lhs2}};
  if (!rep.parts.empty()) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : rep.parts) parts.push_back(report_to_json(p));
    j["parts"] = parts;
  }
  return j;
}

nlohmann::json sheet_to_json(const ConstantSheet& s) {
  return {{"lambda1", s.lambda1},   {"lambda2", s.lambda2},   {"rho1", s.rho1},
          {"rho2", s.rho2},         {"rho3", s.rho3},         {"rho4", s.rho4},
          {"rho5", s.rho5},         {"rho6", s.rho6},         {"mu1", s.mu1},
          {"mu2", s.mu2},           {"mu3", s.mu3},           {"mu4", s.mu4},
          {"w1", s.w1},             {"w2", s.w2},             {"w3", s.w3},
          {"w4", s.w4},             {"w5", s.w5},             {"rho31", s.rho31},
          {"rho32", s.rho32},       {"rho33", s.rho33},       {"mu31", s.mu31},
          {"mu32", s.mu32},         {"mu33", s.mu33},         {"w41", s.w41},
          {"w42", s.w42},           {"w43", s.w43},           {"rhobar5", s.rhobar5},
          {"mubar_b1", s.mubar_b1}, {"mubar_b2", s.mubar_b2}, {"mubar_b3", s.mubar_b3},
          {"mubar_f1", s.mubar_f1}, {"mubar_f2", s.mubar_f2}, {"mubar_f3", s.mubar_f3},
          {"mubar_s1", s.mubar_s1}, {"mubar_s2", s.mubar_s2}, {"mubar_s3", s.mubar_s3},
          {"c_alpha", s.c_alpha}};
}

}  // namespace hmf
