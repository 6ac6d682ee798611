#pragma once

#include <map>
#include <string>
#include <vector>

#include "hmf/model.hpp"

namespace hmf {

struct SlopeSample {
  std::string target;  // e.g. "b.P1"
  double delta = 0.0;
  double ratio = 0.0;  // measured shift / predicted shift
};

struct DerivativeAudit {
  // per-derivative max relative error, one entry per eps rung (ladder order)
  std::map<std::string, std::vector<double>> classical;
  double max_classical_rel = 0.0;  // max over derivatives at the finest rung
  std::vector<SlopeSample> slopes;
  double worst_slope_gap = 0.0;  // max |ratio - 1| at the finest delta
  int points = 0;
  int skipped_unsupported = 0;
};

// Central-difference audit of the declared classical partials and
// particle-perturbation audit of the measure derivatives: shifting one
// particle coordinate by delta must move the coefficient by
// (atlas weight * cloud weight) * measure-derivative * delta.
// Deterministic in (seed, points); unsupported derivatives are skipped.
DerivativeAudit finite_diff_check(
    const CoefficientModel& m, const MeasureKernel& kernel, double t, uint64_t seed,
    int points, const std::vector<double>& eps_ladder = {1e-3, 1e-4, 1e-5},
    const std::vector<double>& delta_ladder = {1e-2, 1e-3, 1e-4});

struct SheetAudit {
  // constraint -> worst (empirical quotient - declared bound); <= 0 passes
  std::map<std::string, double> margins;
  double max_violation = 0.0;
  int pairs = 0;
};

// Empirical Lipschitz quotients (single-block variations) and one-sided
// monotonicity slopes of b in x / f in y, checked against the declared sheet.
SheetAudit audit_sheet(const CoefficientModel& m, const MeasureKernel& kernel, double t,
                       uint64_t seed, int pairs);

}  // namespace hmf
