#pragma once

#include "hmf/model.hpp"

namespace hmf {

// Scalar linear-quadratic family: b = a, sigma = 1, f = 0, G = 0,
// ell = (|x|^2 + |a|^2)/2, h = |x|^2/2, g = 0. With mean_weight > 0 the
// running cost adds a tracking term (mean_weight/2)(x - kappa_bar A)^2
// against the population mean of X; the plain family stays measure-free.
// Params: mean_weight (>= 0, default 0), kappa_bar (default 1).
class LqModel : public CoefficientModel {
 public:
  explicit LqModel(const ModelParams& params);

  std::string family() const override { return "lq"; }
  bool declares_convex() const override { return mean_weight_ == 0.0; }

  Vec drift(const StatePoint& p, const AggregateValues& agg) const override;
  Mat diffusion(const StatePoint& p, const AggregateValues& agg) const override;
  Vec driver(const StatePoint& p, const AggregateValues& agg) const override;
  double running_cost(const StatePoint& p, const AggregateValues& agg) const override;
  Vec terminal_condition(double u, const Vec& x, const AggregateValues& tagg) const override;
  double terminal_cost(double u, const Vec& x, const AggregateValues& tagg) const override;
  double initial_cost(double u, const Vec& y) const override;
  Vec initial_cost_gradient(double u, const Vec& y) const override;
  Mat partial(Coefficient c, int block, const StatePoint& p,
              const AggregateValues& agg) const override;
  Mat terminal_partial_x(TerminalMap which, double u, const Vec& x,
                         const AggregateValues& tagg) const override;
  Mat aggregate_sensitivity(Coefficient c, int channel, const StatePoint& p,
                            const AggregateValues& agg) const override;

 private:
  double mean_weight_ = 0.0;
  double kappa_bar_ = 1.0;
};

// Scalar graphon-coupled linear family:
//   b = ab x + ba a + cb A_X(u),   sigma = s0,
//   f = af y + cf A_Y(u),          G = gx x + cg A_X(u) at T,
// costs identically zero. A zero coupling drops its channel, so the family
// degrades to measure-free linear dynamics. The declared sheet takes
// sup kappa = 1, which holds for all shipped graphon families on [0,1].
// Params: ab (-1), ba (0), cb (0.2), af (-1), cf (0.1), s0 (0.3),
// gx (0.5), cg (0.1); ModelParams::kappa picks the graphon family.
class GraphonLinearModel : public CoefficientModel {
 public:
  explicit GraphonLinearModel(const ModelParams& params);

  std::string family() const override { return "graphon-linear"; }

  Vec drift(const StatePoint& p, const AggregateValues& agg) const override;
  Mat diffusion(const StatePoint& p, const AggregateValues& agg) const override;
  Vec driver(const StatePoint& p, const AggregateValues& agg) const override;
  double running_cost(const StatePoint& p, const AggregateValues& agg) const override;
  Vec terminal_condition(double u, const Vec& x, const AggregateValues& tagg) const override;
  double terminal_cost(double u, const Vec& x, const AggregateValues& tagg) const override;
  double initial_cost(double u, const Vec& y) const override;
  Vec initial_cost_gradient(double u, const Vec& y) const override;
  Mat partial(Coefficient c, int block, const StatePoint& p,
              const AggregateValues& agg) const override;
  Mat terminal_partial_x(TerminalMap which, double u, const Vec& x,
                         const AggregateValues& tagg) const override;
  Mat aggregate_sensitivity(Coefficient c, int channel, const StatePoint& p,
                            const AggregateValues& agg) const override;
  Mat terminal_aggregate_sensitivity(TerminalMap which, int channel, double u,
                                     const Vec& x, const AggregateValues& tagg) const override;

 private:
  double ab_, ba_, cb_, af_, cf_, s0_, gx_, cg_;
  int bx_channel_ = -1;  // drift's mean-X channel index, -1 when cb = 0
  int fy_channel_ = -1;  // driver's mean-Y channel index, -1 when cf = 0
};

}  // namespace hmf
