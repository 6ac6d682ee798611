#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hmf/common.hpp"

namespace hmf {

enum class ConditionVariant { Base, Marginal, VariationalTheta1, AdjointTheta2, Combined };

const char* variant_name(ConditionVariant v);

// Lipschitz / monotonicity constants of one coefficient family. lambda1,
// lambda2 are one-sided slopes and may be negative; everything else is a
// nonnegative Lipschitz-type constant.
struct ConstantSheet {
  double lambda1 = 0.0, lambda2 = 0.0;

  double rho1 = 0.0, rho2 = 0.0, rho3 = 0.0;  // drift in y, z, measure
  double rho4 = 0.0, rho5 = 0.0;              // terminal map in x, measure
  double rho6 = 0.0;                          // drift in control
  double mu1 = 0.0, mu2 = 0.0, mu3 = 0.0;     // driver in x, z, measure
  double mu4 = 0.0;                           // driver in control
  double w1 = 0.0, w2 = 0.0, w3 = 0.0, w4 = 0.0;  // diffusion in x, y, z, measure
  double w5 = 0.0;                                // diffusion in control

  // per-marginal splits of rho3 / mu3 / w4 (X-, Y-, Z-marginal channels)
  double rho31 = 0.0, rho32 = 0.0, rho33 = 0.0;
  double mu31 = 0.0, mu32 = 0.0, mu33 = 0.0;
  double w41 = 0.0, w42 = 0.0, w43 = 0.0;

  // adjoint-side constants: measure-derivative bounds of the three
  // coefficient families plus the barred terminal constant
  double rhobar5 = 0.0;
  double mubar_b1 = 0.0, mubar_b2 = 0.0, mubar_b3 = 0.0;
  double mubar_f1 = 0.0, mubar_f2 = 0.0, mubar_f3 = 0.0;
  double mubar_s1 = 0.0, mubar_s2 = 0.0, mubar_s3 = 0.0;
  double c_alpha = 0.0;

  // finiteness everywhere, nonnegativity away from lambda1/lambda2
  void validate() const;
};

// Free constants of the comparison argument. The unbarred block drives the
// base / marginal / variational calculus, the barred block the adjoint one.
struct Witness {
  double lambda = 0.0;
  double C1 = 1.0, C2 = 1.0, C3 = 1.0, C4 = 1.0;
  double K1 = 1.0, K2 = 1.0, K3 = 1.0;

  double lambda_bar = 0.0;
  double Cb1 = 1.0, Cb2 = 1.0, Cb3 = 1.0, Cb4 = 1.0;
  double Kb1 = 1.0, Kb2 = 1.0, Kb3 = 1.0;
};

struct LambdaBars {
  double l1 = 0.0;
  double l2 = 0.0;
};

// Exact evaluation of the variant's displayed formulas. Throws invalid-input
// on a nonpositive C/K entry; Combined has no single pair and throws.
LambdaBars lambda_bars(const ConstantSheet& sheet, const Witness& w, ConditionVariant variant);

// 1 - K2*(coupling sum) for the variant's K2 constraint.
double witness_denominator(const ConstantSheet& sheet, const Witness& w, ConditionVariant variant);

// theta for the variant. nullopt when the witness preconditions fail
// (lambda-bars or denominator nonpositive); +inf sentinel when the bracket
// vanishes (condition vacuous).
std::optional<double> theta_value(const ConstantSheet& sheet, const Witness& w,
                                  ConditionVariant variant);

// The two C-expressions compared against theta.
std::pair<double, double> lhs_pair(const ConstantSheet& sheet, const Witness& w,
                                   ConditionVariant variant);

// The variant's gate inequality on the sheet alone (no witness).
bool gate_holds(const ConstantSheet& sheet, ConditionVariant variant);

struct SearchBudget {
  int starts = 8;
  int sweeps = 36;
};

struct SmallnessReport {
  ConditionVariant variant = ConditionVariant::Base;
  bool feasible = false;
  std::string reason;  // "ok" | "infeasible-gate" | "infeasible-search"
  Witness witness;
  double lambda_bar_1 = 0.0;
  double lambda_bar_2 = 0.0;
  double theta = 0.0;  // +inf sentinel = vacuous; NaN = undefined at witness
  double lhs1 = 0.0;
  double lhs2 = 0.0;
  // Combined only: the variational and adjoint sub-reports, in that order.
  std::vector<SmallnessReport> parts;
};

// Gate check, canonical witness, then deterministic multi-start coordinate
// search; first feasible witness wins. The returned report always satisfies:
// feasible implies lambda-bars > 0, denominator > 0 and both lhs < theta.
SmallnessReport certify(const ConstantSheet& sheet, ConditionVariant variant,
                        const SearchBudget& budget = {});

nlohmann::json report_to_json(const SmallnessReport& rep);
nlohmann::json sheet_to_json(const ConstantSheet& sheet);

}  // namespace hmf
