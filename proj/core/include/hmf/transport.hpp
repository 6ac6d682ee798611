#pragma once

#include "hmf/types.hpp"

namespace hmf {

struct W2Options {
  // exact LP is solved up to this support size per cloud; larger clouds are
  // deterministically subsampled (strided) and the result flagged approximate
  int lp_cap = 512;
};

struct W2Result {
  double value = 0.0;
  bool subsampled = false;
};

// 2-Wasserstein distance between weighted clouds. Dimension 1 uses the exact
// quantile coupling; dimension >= 2 solves the transport LP exactly via
// successive shortest paths (subject to lp_cap).
double wasserstein2(const WeightedCloud& a, const WeightedCloud& b);
W2Result wasserstein2(const WeightedCloud& a, const WeightedCloud& b,
                      const W2Options& opts);

// The two internal routes, exposed for cross-checking: the quantile coupling
// (1-D only) and the LP (any dimension, no cap applied).
double wasserstein2_quantile(const WeightedCloud& a, const WeightedCloud& b);
double wasserstein2_lp(const WeightedCloud& a, const WeightedCloud& b);

// W_{2,m}: sqrt of the m-weighted integral of per-type squared distances.
// Atlases must match exactly; per-type solves may run in parallel but the
// reduction always follows atlas order.
double wasserstein2_m(const MeasureKernel& a, const MeasureKernel& b);
W2Result wasserstein2_m(const MeasureKernel& a, const MeasureKernel& b,
                        const W2Options& opts);

}  // namespace hmf
