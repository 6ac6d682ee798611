#include "hmf/model.hpp"

#include <algorithm>
#include <cmath>

#include "hmf/rng.hpp"

namespace hmf {

namespace {

constexpr const char* kStage = "model";

void check_state(const CoefficientModel& m, const StatePoint& p) {
  const ComponentDims& dm = m.dims();
  if (p.x.size() != dm.n || p.y.size() != dm.l || p.z.rows() != dm.l ||
      p.z.cols() != dm.d || p.a.size() != dm.k) {
    fail(ErrorCode::InvalidInput, kStage, "state point shape does not match model dims");
  }
}

void check_x(const CoefficientModel& m, const Vec& x) {
  if (x.size() != m.dims().n) {
    fail(ErrorCode::InvalidInput, kStage, "terminal point has wrong x dimension");
  }
}

void check_agg(const CoefficientModel& m, const AggregateValues& agg, bool terminal) {
  const auto& chans = terminal ? m.terminal_channels() : m.channels();
  if (agg.size() != chans.size()) {
    fail(ErrorCode::InvalidInput, kStage, "aggregate count does not match channel count");
  }
  for (std::size_t q = 0; q < chans.size(); ++q) {
    if (agg[q].size() != chans[q].dim) {
      fail(ErrorCode::InvalidInput, kStage,
           "aggregate '" + chans[q].name + "' has wrong dimension");
    }
  }
}

void check_block_index(int block) {
  if (block < 0 || block > 3) {
    fail(ErrorCode::InvalidInput, kStage, "block index must be 0..3");
  }
}

// Running channels need every block they read present in the kernel mask;
// terminal channels are X-marginal statistics by construction.
void check_kernel(const CoefficientModel& m, const MeasureKernel& kernel, bool terminal) {
  if (!(kernel.dims == m.dims())) {
    fail(ErrorCode::InvalidInput, kStage, "kernel dims do not match model dims");
  }
  if (kernel.atlas.size() == 0 || kernel.clouds.size() != static_cast<std::size_t>(kernel.atlas.size())) {
    fail(ErrorCode::InvalidInput, kStage, "kernel atlas/cloud mismatch");
  }
  const auto& chans = terminal ? m.terminal_channels() : m.channels();
  for (const auto& ch : chans) {
    if (ch.dim < 1 || !ch.kappa || !ch.phi || !ch.dphi) {
      fail(ErrorCode::InvalidSpec, kStage, "channel '" + ch.name + "' is incomplete");
    }
    if (terminal && (ch.arg_mask & ~kMaskX)) {
      fail(ErrorCode::InvalidSpec, kStage,
           "terminal channel '" + ch.name + "' reads a non-X block");
    }
    if ((kernel.mask & ch.arg_mask) != ch.arg_mask) {
      fail(ErrorCode::InvalidInput, kStage,
           "kernel mask is missing a block channel '" + ch.name + "' reads");
    }
  }
}

// means[q][v] = E_{cloud v}[phi_q]
std::vector<std::vector<Vec>> channel_means(const std::vector<MeasureChannel>& chans,
                                            const MeasureKernel& kernel, double t) {
  const int M = kernel.atlas.size();
  const int Q = static_cast<int>(chans.size());
  std::vector<std::vector<Vec>> means(Q, std::vector<Vec>(M));
  parallel_for(M, [&](int v) {
    const WeightedCloud& cloud = kernel.clouds[v];
    for (int q = 0; q < Q; ++q) means[q][v] = Vec::Zero(chans[q].dim);
    for (int r = 0; r < cloud.size(); ++r) {
      StatePoint p = state_from_row(kernel, v, r, t);
      for (int q = 0; q < Q; ++q) {
        Vec val = chans[q].phi(p);
        if (val.size() != chans[q].dim) {
          fail(ErrorCode::InvalidSpec, kStage,
               "channel '" + chans[q].name + "' phi has wrong dimension");
        }
        means[q][v] += cloud.weights(r) * val;
      }
    }
  });
  return means;
}

AggregateValues combine_means(const std::vector<MeasureChannel>& chans,
                              const std::vector<std::vector<Vec>>& means,
                              const TypeAtlas& atlas, double u) {
  const int Q = static_cast<int>(chans.size());
  AggregateValues out(Q);
  for (int q = 0; q < Q; ++q) {
    Vec acc = Vec::Zero(chans[q].dim);
    for (int v = 0; v < atlas.size(); ++v) {
      double kap = chans[q].kappa(u, atlas.labels[v]);
      if (!std::isfinite(kap)) {
        fail(ErrorCode::InvalidSpec, kStage,
             "channel '" + chans[q].name + "' kappa is not finite");
      }
      acc += atlas.weights[v] * kap * means[q][v];
    }
    if (!acc.allFinite()) {
      fail(ErrorCode::InvalidInput, kStage,
           "aggregate '" + chans[q].name + "' is not finite");
    }
    out[q] = std::move(acc);
  }
  return out;
}

void check_finite_vec(const Vec& v, const char* what) {
  if (!v.allFinite()) {
    fail(ErrorCode::InvalidInput, kStage, std::string(what) + " is not finite");
  }
}

void check_finite_mat(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    fail(ErrorCode::InvalidInput, kStage, std::string(what) + " is not finite");
  }
}

void check_finite_scalar(double v, const char* what) {
  if (!std::isfinite(v)) {
    fail(ErrorCode::InvalidInput, kStage, std::string(what) + " is not finite");
  }
}

}  // namespace

StatePoint zero_state(const ComponentDims& dims, double t, double u) {
  StatePoint p;
  p.t = t;
  p.u = u;
  p.x = Vec::Zero(dims.n);
  p.y = Vec::Zero(dims.l);
  p.z = Mat::Zero(dims.l, dims.d);
  p.a = Vec::Zero(dims.k);
  return p;
}

StatePoint state_from_row(const MeasureKernel& kernel, int type_index, int row, double t) {
  const ComponentDims& dm = kernel.dims;
  if (type_index < 0 || type_index >= kernel.atlas.size()) {
    fail(ErrorCode::InvalidInput, kStage, "type index out of range");
  }
  const WeightedCloud& cloud = kernel.clouds[type_index];
  if (row < 0 || row >= cloud.size()) {
    fail(ErrorCode::InvalidInput, kStage, "cloud row out of range");
  }
  StatePoint p = zero_state(dm, t, kernel.atlas.labels[type_index]);
  const std::vector<int> cols = mask_columns(dm, kernel.mask);
  for (std::size_t idx = 0; idx < cols.size(); ++idx) {
    const int c = cols[idx];
    const double val = cloud.points(row, static_cast<int>(idx));
    if (c < dm.n) {
      p.x(c) = val;
    } else if (c < dm.n + dm.l) {
      p.y(c - dm.n) = val;
    } else if (c < dm.n + dm.l + dm.zdim()) {
      const int flat = c - dm.n - dm.l;
      p.z(flat / dm.d, flat % dm.d) = val;
    } else {
      p.a(c - dm.n - dm.l - dm.zdim()) = val;
    }
  }
  return p;
}

Vec state_to_row(const StatePoint& p, unsigned mask) {
  ComponentDims dm;
  dm.n = static_cast<int>(p.x.size());
  dm.l = static_cast<int>(p.y.size());
  dm.d = static_cast<int>(p.z.cols());
  dm.k = static_cast<int>(p.a.size());
  const std::vector<int> cols = mask_columns(dm, mask);
  Vec row(static_cast<int>(cols.size()));
  for (std::size_t idx = 0; idx < cols.size(); ++idx) {
    const int c = cols[idx];
    double val = 0.0;
    if (c < dm.n) {
      val = p.x(c);
    } else if (c < dm.n + dm.l) {
      val = p.y(c - dm.n);
    } else if (c < dm.n + dm.l + dm.zdim()) {
      const int flat = c - dm.n - dm.l;
      val = p.z(flat / dm.d, flat % dm.d);
    } else {
      val = p.a(c - dm.n - dm.l - dm.zdim());
    }
    row(static_cast<int>(idx)) = val;
  }
  return row;
}

Vec state_block(const StatePoint& p, int block) {
  check_block_index(block);
  switch (block) {
    case 0: return p.x;
    case 1: return p.y;
    case 2: {
      Vec flat(p.z.size());
      const int d = static_cast<int>(p.z.cols());
      for (int i = 0; i < p.z.rows(); ++i)
        for (int j = 0; j < d; ++j) flat(i * d + j) = p.z(i, j);
      return flat;
    }
    default: return p.a;
  }
}

void bump_state(StatePoint& p, int block, int coord, double delta) {
  check_block_index(block);
  switch (block) {
    case 0: p.x(coord) += delta; break;
    case 1: p.y(coord) += delta; break;
    case 2: {
      const int d = static_cast<int>(p.z.cols());
      p.z(coord / d, coord % d) += delta;
      break;
    }
    default: p.a(coord) += delta; break;
  }
}

unsigned block_mask(int block) {
  check_block_index(block);
  return 1u << block;
}

const char* coefficient_name(Coefficient c) {
  switch (c) {
    case Coefficient::Drift: return "b";
    case Coefficient::Diffusion: return "sigma";
    case Coefficient::Driver: return "f";
    case Coefficient::RunningCost: return "ell";
  }
  return "?";
}

int coefficient_rows(const ComponentDims& dims, Coefficient c) {
  switch (c) {
    case Coefficient::Drift: return dims.n;
    case Coefficient::Diffusion: return dims.n * dims.d;
    case Coefficient::Driver: return dims.l;
    case Coefficient::RunningCost: return 1;
  }
  return 0;
}

Mat CoefficientModel::aggregate_sensitivity(Coefficient c, int, const StatePoint&,
                                            const AggregateValues&) const {
  fail(ErrorCode::UnsupportedDerivative, kStage,
       family() + " declares no aggregate sensitivity for " + coefficient_name(c));
}

Mat CoefficientModel::terminal_aggregate_sensitivity(TerminalMap which, int, double,
                                                     const Vec&, const AggregateValues&) const {
  fail(ErrorCode::UnsupportedDerivative, kStage,
       family() + std::string(" declares no terminal aggregate sensitivity for ") +
           (which == TerminalMap::Condition ? "G" : "h"));
}

Mat CoefficientModel::measure_derivative(Coefficient c, int block, const StatePoint& p,
                                         const AggregateValues& agg,
                                         const StatePoint& sample) const {
  const int rows = coefficient_rows(dims_, c);
  const int bd = dims_.block_dim(block);
  Mat out = Mat::Zero(rows, bd);
  for (std::size_t q = 0; q < channels_.size(); ++q) {
    const MeasureChannel& ch = channels_[q];
    if (!(ch.arg_mask & block_mask(block))) continue;
    Mat sens = aggregate_sensitivity(c, static_cast<int>(q), p, agg);
    if (sens.rows() != rows || sens.cols() != ch.dim) {
      fail(ErrorCode::Internal, kStage,
           "aggregate sensitivity for channel '" + ch.name + "' has wrong shape");
    }
    Mat dphi = ch.dphi(sample, block);
    if (dphi.rows() != ch.dim || dphi.cols() != bd) {
      fail(ErrorCode::Internal, kStage,
           "channel '" + ch.name + "' dphi has wrong shape");
    }
    out.noalias() += sens * (ch.kappa(p.u, sample.u) * dphi);
  }
  return out;
}

Mat CoefficientModel::terminal_measure_derivative(TerminalMap which, double u, const Vec& x,
                                                  const AggregateValues& tagg,
                                                  const StatePoint& sample) const {
  const int rows = which == TerminalMap::Condition ? dims_.l : 1;
  Mat out = Mat::Zero(rows, dims_.n);
  for (std::size_t q = 0; q < terminal_channels_.size(); ++q) {
    const MeasureChannel& ch = terminal_channels_[q];
    Mat sens = terminal_aggregate_sensitivity(which, static_cast<int>(q), u, x, tagg);
    if (sens.rows() != rows || sens.cols() != ch.dim) {
      fail(ErrorCode::Internal, kStage,
           "terminal sensitivity for channel '" + ch.name + "' has wrong shape");
    }
    Mat dphi = ch.dphi(sample, 0);
    if (dphi.rows() != ch.dim || dphi.cols() != dims_.n) {
      fail(ErrorCode::Internal, kStage,
           "terminal channel '" + ch.name + "' dphi has wrong shape");
    }
    out.noalias() += sens * (ch.kappa(u, sample.u) * dphi);
  }
  return out;
}

std::vector<AggregateValues> compute_aggregates(const CoefficientModel& m,
                                                const MeasureKernel& kernel, double t) {
  check_kernel(m, kernel, false);
  const auto means = channel_means(m.channels(), kernel, t);
  std::vector<AggregateValues> out(kernel.atlas.size());
  for (int i = 0; i < kernel.atlas.size(); ++i) {
    out[i] = combine_means(m.channels(), means, kernel.atlas, kernel.atlas.labels[i]);
  }
  return out;
}

AggregateValues aggregates_for_label(const CoefficientModel& m, const MeasureKernel& kernel,
                                     double t, double u) {
  check_kernel(m, kernel, false);
  const auto means = channel_means(m.channels(), kernel, t);
  return combine_means(m.channels(), means, kernel.atlas, u);
}

std::vector<AggregateValues> compute_terminal_aggregates(const CoefficientModel& m,
                                                         const MeasureKernel& xkernel) {
  check_kernel(m, xkernel, true);
  const auto means = channel_means(m.terminal_channels(), xkernel, m.horizon());
  std::vector<AggregateValues> out(xkernel.atlas.size());
  for (int i = 0; i < xkernel.atlas.size(); ++i) {
    out[i] = combine_means(m.terminal_channels(), means, xkernel.atlas,
                           xkernel.atlas.labels[i]);
  }
  return out;
}

AggregateValues terminal_aggregates_for_label(const CoefficientModel& m,
                                              const MeasureKernel& xkernel, double u) {
  check_kernel(m, xkernel, true);
  const auto means = channel_means(m.terminal_channels(), xkernel, m.horizon());
  return combine_means(m.terminal_channels(), means, xkernel.atlas, u);
}

Dynamics eval_dynamics(const CoefficientModel& m, const StatePoint& p,
                       const AggregateValues& agg) {
  check_state(m, p);
  check_agg(m, agg, false);
  Dynamics dyn;
  dyn.b = m.drift(p, agg);
  dyn.sigma = m.diffusion(p, agg);
  dyn.f = m.driver(p, agg);
  const ComponentDims& dm = m.dims();
  if (dyn.b.size() != dm.n || dyn.sigma.rows() != dm.n || dyn.sigma.cols() != dm.d ||
      dyn.f.size() != dm.l) {
    fail(ErrorCode::Internal, kStage, "model returned mis-shaped dynamics");
  }
  check_finite_vec(dyn.b, "drift");
  check_finite_mat(dyn.sigma, "diffusion");
  check_finite_vec(dyn.f, "driver");
  return dyn;
}

Dynamics eval_dynamics(const CoefficientModel& m, const StatePoint& p,
                       const MeasureKernel& kernel) {
  return eval_dynamics(m, p, aggregates_for_label(m, kernel, p.t, p.u));
}

Vec eval_terminal(const CoefficientModel& m, double u, const Vec& x,
                  const AggregateValues& tagg) {
  check_x(m, x);
  check_agg(m, tagg, true);
  Vec g = m.terminal_condition(u, x, tagg);
  if (g.size() != m.dims().l) {
    fail(ErrorCode::Internal, kStage, "terminal condition has wrong dimension");
  }
  check_finite_vec(g, "terminal condition");
  return g;
}

Vec eval_terminal(const CoefficientModel& m, double u, const Vec& x,
                  const MeasureKernel& xkernel) {
  return eval_terminal(m, u, x, terminal_aggregates_for_label(m, xkernel, u));
}

double eval_running_cost(const CoefficientModel& m, const StatePoint& p,
                         const AggregateValues& agg) {
  check_state(m, p);
  check_agg(m, agg, false);
  double v = m.running_cost(p, agg);
  check_finite_scalar(v, "running cost");
  return v;
}

double eval_terminal_cost(const CoefficientModel& m, double u, const Vec& x,
                          const AggregateValues& tagg) {
  check_x(m, x);
  check_agg(m, tagg, true);
  double v = m.terminal_cost(u, x, tagg);
  check_finite_scalar(v, "terminal cost");
  return v;
}

double eval_initial_cost(const CoefficientModel& m, double u, const Vec& y) {
  if (y.size() != m.dims().l) {
    fail(ErrorCode::InvalidInput, kStage, "initial cost point has wrong y dimension");
  }
  double v = m.initial_cost(u, y);
  check_finite_scalar(v, "initial cost");
  return v;
}

Mat eval_partial(const CoefficientModel& m, Coefficient c, int block, const StatePoint& p,
                 const AggregateValues& agg) {
  check_block_index(block);
  check_state(m, p);
  check_agg(m, agg, false);
  Mat d = m.partial(c, block, p, agg);
  if (d.rows() != coefficient_rows(m.dims(), c) || d.cols() != m.dims().block_dim(block)) {
    fail(ErrorCode::Internal, kStage, "partial has wrong shape");
  }
  check_finite_mat(d, "partial");
  return d;
}

Mat eval_terminal_partial_x(const CoefficientModel& m, TerminalMap which, double u,
                            const Vec& x, const AggregateValues& tagg) {
  check_x(m, x);
  check_agg(m, tagg, true);
  Mat d = m.terminal_partial_x(which, u, x, tagg);
  const int rows = which == TerminalMap::Condition ? m.dims().l : 1;
  if (d.rows() != rows || d.cols() != m.dims().n) {
    fail(ErrorCode::Internal, kStage, "terminal partial has wrong shape");
  }
  check_finite_mat(d, "terminal partial");
  return d;
}

Mat eval_measure_derivative(const CoefficientModel& m, Coefficient c, const StatePoint& p,
                            const AggregateValues& agg, int block, const StatePoint& sample) {
  check_block_index(block);
  check_state(m, p);
  check_state(m, sample);
  check_agg(m, agg, false);
  Mat d = m.measure_derivative(c, block, p, agg, sample);
  if (d.rows() != coefficient_rows(m.dims(), c) || d.cols() != m.dims().block_dim(block)) {
    fail(ErrorCode::Internal, kStage, "measure derivative has wrong shape");
  }
  check_finite_mat(d, "measure derivative");
  return d;
}

Mat eval_terminal_measure_derivative(const CoefficientModel& m, TerminalMap which, double u,
                                     const Vec& x, const AggregateValues& tagg,
                                     const StatePoint& sample) {
  check_x(m, x);
  if (sample.x.size() != m.dims().n) {
    fail(ErrorCode::InvalidInput, kStage, "sample point has wrong x dimension");
  }
  check_agg(m, tagg, true);
  Mat d = m.terminal_measure_derivative(which, u, x, tagg, sample);
  const int rows = which == TerminalMap::Condition ? m.dims().l : 1;
  if (d.rows() != rows || d.cols() != m.dims().n) {
    fail(ErrorCode::Internal, kStage, "terminal measure derivative has wrong shape");
  }
  check_finite_mat(d, "terminal measure derivative");
  return d;
}

void InitialLaw::validate(const ComponentDims& dims) const {
  if (center.size() != dims.n || !center.allFinite()) {
    fail(ErrorCode::InvalidSpec, kStage, "initial law center must be finite with dim n");
  }
  if (kind != Kind::Dirac) {
    if (spread.size() != dims.n || !spread.allFinite() || (spread.array() < 0.0).any()) {
      fail(ErrorCode::InvalidSpec, kStage,
           "initial law spread must be nonnegative with dim n");
    }
  }
  if (type_shift.size() != 0 &&
      (type_shift.size() != dims.n || !type_shift.allFinite())) {
    fail(ErrorCode::InvalidSpec, kStage, "initial law type shift must be finite with dim n");
  }
}

Vec InitialLaw::sample(double u, uint64_t seed, int type_index, int particle) const {
  Vec out = center;
  if (type_shift.size() == out.size() && out.size() > 0) out += u * type_shift;
  if (kind == Kind::Dirac) return out;
  RandomStream st(seed, static_cast<uint32_t>(type_index),
                  static_cast<uint32_t>(particle), kStreamInitial);
  for (int i = 0; i < out.size(); ++i) {
    const double draw =
        kind == Kind::Gaussian ? st.normal(i) : 2.0 * st.uniform(i) - 1.0;
    out(i) += spread(i) * draw;
  }
  return out;
}

double ModelParams::get(const std::string& key, double fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

}  // namespace hmf
