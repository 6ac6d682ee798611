#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hmf/conditions.hpp"
#include "hmf/types.hpp"

namespace hmf {

// One evaluation point of the joint space E, tagged with time and type label.
struct StatePoint {
  double t = 0.0;
  double u = 0.0;
  Vec x;  // n
  Vec y;  // l
  Mat z;  // l x d
  Vec a;  // k
};

StatePoint zero_state(const ComponentDims& dims, double t = 0.0, double u = 0.0);

// Point row <-> StatePoint. Rows carry the kernel's masked columns only;
// blocks outside the mask come back zero-filled at their declared size.
StatePoint state_from_row(const MeasureKernel& kernel, int type_index, int row,
                          double t = 0.0);
Vec state_to_row(const StatePoint& p, unsigned mask);

Vec state_block(const StatePoint& p, int block);  // 0:X 1:Y 2:Z(row-major) 3:A
void bump_state(StatePoint& p, int block, int coord, double delta);
unsigned block_mask(int block);

enum class Coefficient { Drift, Diffusion, Driver, RunningCost };
enum class TerminalMap { Condition, Cost };

const char* coefficient_name(Coefficient c);

// Output rows of a coefficient: n, n*d (row-major), l, 1.
int coefficient_rows(const ComponentDims& dims, Coefficient c);

// Measure dependence is separable: each channel is a graphon-weighted mean
//   A_q(u) = sum_v m_v kappa_q(u, u_v) E_{cloud v}[phi_q(theta)]
// and coefficients read the population only through the aggregate vector.
// dphi(theta, block) is the phi jacobian w.r.t. one block (dim x block_dim);
// blocks outside arg_mask are treated as identically zero and never queried.
struct MeasureChannel {
  std::string name;
  int dim = 1;
  unsigned arg_mask = kMaskX;
  std::function<double(double, double)> kappa;
  std::function<Vec(const StatePoint&)> phi;
  std::function<Mat(const StatePoint&, int)> dphi;
};

// Channel aggregates for one observer type, channel order.
using AggregateValues = std::vector<Vec>;

class CoefficientModel {
 public:
  virtual ~CoefficientModel() = default;

  virtual std::string family() const = 0;
  const ComponentDims& dims() const { return dims_; }
  double horizon() const { return horizon_; }
  const ConstantSheet& sheet() const { return sheet_; }
  const std::vector<MeasureChannel>& channels() const { return channels_; }
  const std::vector<MeasureChannel>& terminal_channels() const {
    return terminal_channels_;
  }
  bool measure_free() const {
    return channels_.empty() && terminal_channels_.empty();
  }
  // No coefficient reads the control marginal: P^(4) terms can be skipped.
  virtual bool control_law_free() const { return true; }
  virtual bool declares_convex() const { return false; }

  // Values. agg holds this type's channel aggregates in channel order;
  // terminal maps read the X-marginal aggregates of terminal_channels().
  virtual Vec drift(const StatePoint& p, const AggregateValues& agg) const = 0;
  virtual Mat diffusion(const StatePoint& p, const AggregateValues& agg) const = 0;
  virtual Vec driver(const StatePoint& p, const AggregateValues& agg) const = 0;
  virtual double running_cost(const StatePoint& p, const AggregateValues& agg) const = 0;
  virtual Vec terminal_condition(double u, const Vec& x, const AggregateValues& tagg) const = 0;
  virtual double terminal_cost(double u, const Vec& x, const AggregateValues& tagg) const = 0;
  virtual double initial_cost(double u, const Vec& y) const = 0;
  virtual Vec initial_cost_gradient(double u, const Vec& y) const = 0;

  // Jacobian w.r.t. one classical block, aggregates held fixed; rows follow
  // coefficient_rows (diffusion rows flatten row-major like Z).
  virtual Mat partial(Coefficient c, int block, const StatePoint& p,
                      const AggregateValues& agg) const = 0;
  virtual Mat terminal_partial_x(TerminalMap which, double u, const Vec& x,
                                 const AggregateValues& tagg) const = 0;

  // d(coefficient)/d(A_channel), rows x channel dim. Defaults throw
  // unsupported-derivative: a model with channels must override.
  virtual Mat aggregate_sensitivity(Coefficient c, int channel, const StatePoint& p,
                                    const AggregateValues& agg) const;
  virtual Mat terminal_aggregate_sensitivity(TerminalMap which, int channel, double u,
                                             const Vec& x, const AggregateValues& tagg) const;

  // d/dP^(block) against one population sample, rows x block_dim. The default
  // implements the separable sum
  //   sum_q (dgamma/dA_q) kappa_q(u, sample.u) dphi_q(sample, block);
  // non-separable models override these instead of the channel hooks.
  virtual Mat measure_derivative(Coefficient c, int block, const StatePoint& p,
                                 const AggregateValues& agg, const StatePoint& sample) const;
  virtual Mat terminal_measure_derivative(TerminalMap which, double u, const Vec& x,
                                          const AggregateValues& tagg,
                                          const StatePoint& sample) const;

 protected:
  ComponentDims dims_;
  double horizon_ = 1.0;
  ConstantSheet sheet_;
  std::vector<MeasureChannel> channels_;
  std::vector<MeasureChannel> terminal_channels_;
};

// Aggregates per atlas type (or at an off-atlas label). Running channels need
// a kernel whose mask covers every channel's arg_mask; terminal channels
// evaluate on the X marginal at T.
std::vector<AggregateValues> compute_aggregates(const CoefficientModel& m,
                                                const MeasureKernel& kernel, double t);
AggregateValues aggregates_for_label(const CoefficientModel& m,
                                     const MeasureKernel& kernel, double t, double u);
std::vector<AggregateValues> compute_terminal_aggregates(const CoefficientModel& m,
                                                         const MeasureKernel& xkernel);
AggregateValues terminal_aggregates_for_label(const CoefficientModel& m,
                                              const MeasureKernel& xkernel, double u);

struct Dynamics {
  Vec b;
  Mat sigma;
  Vec f;
};

// Validating wrappers around the model virtuals. The kernel overloads
// recompute this label's aggregates on the fly.
Dynamics eval_dynamics(const CoefficientModel& m, const StatePoint& p,
                       const AggregateValues& agg);
Dynamics eval_dynamics(const CoefficientModel& m, const StatePoint& p,
                       const MeasureKernel& kernel);
Vec eval_terminal(const CoefficientModel& m, double u, const Vec& x,
                  const AggregateValues& tagg);
Vec eval_terminal(const CoefficientModel& m, double u, const Vec& x,
                  const MeasureKernel& xkernel);
double eval_running_cost(const CoefficientModel& m, const StatePoint& p,
                         const AggregateValues& agg);
double eval_terminal_cost(const CoefficientModel& m, double u, const Vec& x,
                          const AggregateValues& tagg);
double eval_initial_cost(const CoefficientModel& m, double u, const Vec& y);

Mat eval_partial(const CoefficientModel& m, Coefficient c, int block,
                 const StatePoint& p, const AggregateValues& agg);
Mat eval_terminal_partial_x(const CoefficientModel& m, TerminalMap which, double u,
                            const Vec& x, const AggregateValues& tagg);

Mat eval_measure_derivative(const CoefficientModel& m, Coefficient c,
                            const StatePoint& p, const AggregateValues& agg,
                            int block, const StatePoint& sample);
Mat eval_terminal_measure_derivative(const CoefficientModel& m, TerminalMap which,
                                     double u, const Vec& x, const AggregateValues& tagg,
                                     const StatePoint& sample);

// Per-type starting law for the forward component. Draws go through the
// initial stream, so the same (seed, type, particle) always yields the same
// point regardless of particle count.
struct InitialLaw {
  enum class Kind { Dirac, Gaussian, Uniform };
  Kind kind = Kind::Dirac;
  Vec center;      // n
  Vec spread;      // n; stddev (gaussian) / half-width (uniform); unused for dirac
  Vec type_shift;  // empty or n; shifts center by u * type_shift
  void validate(const ComponentDims& dims) const;
  Vec sample(double u, uint64_t seed, int type_index, int particle) const;
};

struct ModelParams {
  double horizon = 1.0;
  std::string kappa = "constant";
  std::map<std::string, double> values;
  double get(const std::string& key, double fallback) const;
};

// Plugin signature: a family name plus a factory over ModelParams. Built-in
// families register lazily; registering a taken name is an error.
using ModelFactory = std::function<std::unique_ptr<CoefficientModel>(const ModelParams&)>;
void register_model_family(const std::string& name, ModelFactory factory);
std::unique_ptr<CoefficientModel> make_model(const std::string& family,
                                             const ModelParams& params);
std::vector<std::string> model_family_names();

// Graphon families on [0,1] labels: "constant", "product", "min".
std::function<double(double, double)> make_kappa(const std::string& family);

}  // namespace hmf
