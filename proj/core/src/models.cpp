#include "hmf/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hmf {

namespace {

constexpr const char* kStage = "model";

void check_param_keys(const ModelParams& params, const std::set<std::string>& known) {
  for (const auto& [key, value] : params.values) {
    if (!known.count(key)) {
      fail(ErrorCode::InvalidSpec, kStage, "unknown model parameter '" + key + "'");
    }
    if (!std::isfinite(value)) {
      fail(ErrorCode::InvalidSpec, kStage, "model parameter '" + key + "' is not finite");
    }
  }
}

void check_horizon(double T) {
  if (!(T > 0.0) || !std::isfinite(T)) {
    fail(ErrorCode::InvalidSpec, kStage, "horizon must be positive and finite");
  }
}

// Block-mean statistic: phi = the whole block, dphi = identity on it.
MeasureChannel mean_channel(const std::string& name, int block, int dim,
                            std::function<double(double, double)> kappa) {
  MeasureChannel ch;
  ch.name = name;
  ch.dim = dim;
  ch.arg_mask = 1u << block;
  ch.kappa = std::move(kappa);
  ch.phi = [block](const StatePoint& p) { return state_block(p, block); };
  ch.dphi = [block, dim](const StatePoint& p, int b) {
    Mat d = Mat::Zero(dim, state_block(p, b).size());
    if (b == block) d.setIdentity();
    return d;
  };
  return ch;
}

Mat scalar1(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

LqModel::LqModel(const ModelParams& params) {
  check_param_keys(params, {"mean_weight", "kappa_bar"});
  check_horizon(params.horizon);
  dims_ = ComponentDims{1, 1, 1, 1};
  horizon_ = params.horizon;
  mean_weight_ = params.get("mean_weight", 0.0);
  kappa_bar_ = params.get("kappa_bar", 1.0);
  if (mean_weight_ < 0.0) {
    fail(ErrorCode::InvalidSpec, kStage, "mean_weight must be nonnegative");
  }
  sheet_ = ConstantSheet{};
  sheet_.rho6 = 1.0;
  sheet_.c_alpha = 1.0;
  if (mean_weight_ > 0.0) {
    channels_.push_back(mean_channel("mean-x", 0, 1, [](double, double) { return 1.0; }));
  }
}

Vec LqModel::drift(const StatePoint& p, const AggregateValues&) const { return p.a; }

Mat LqModel::diffusion(const StatePoint&, const AggregateValues&) const {
  return Mat::Ones(1, 1);
}

Vec LqModel::driver(const StatePoint&, const AggregateValues&) const {
  return Vec::Zero(1);
}

double LqModel::running_cost(const StatePoint& p, const AggregateValues& agg) const {
  double cost = 0.5 * (p.x.squaredNorm() + p.a.squaredNorm());
  if (mean_weight_ > 0.0) {
    const double dev = p.x(0) - kappa_bar_ * agg[0](0);
    cost += 0.5 * mean_weight_ * dev * dev;
  }
  return cost;
}

Vec LqModel::terminal_condition(double, const Vec&, const AggregateValues&) const {
  return Vec::Zero(1);
}

double LqModel::terminal_cost(double, const Vec& x, const AggregateValues&) const {
  return 0.5 * x.squaredNorm();
}

double LqModel::initial_cost(double, const Vec&) const { return 0.0; }

Vec LqModel::initial_cost_gradient(double, const Vec&) const { return Vec::Zero(1); }

Mat LqModel::partial(Coefficient c, int block, const StatePoint& p,
                     const AggregateValues& agg) const {
  Mat d = Mat::Zero(coefficient_rows(dims_, c), dims_.block_dim(block));
  if (c == Coefficient::Drift && block == 3) d(0, 0) = 1.0;
  if (c == Coefficient::RunningCost) {
    if (block == 0) {
      d(0, 0) = p.x(0);
      if (mean_weight_ > 0.0) {
        d(0, 0) += mean_weight_ * (p.x(0) - kappa_bar_ * agg[0](0));
      }
    }
    if (block == 3) d(0, 0) = p.a(0);
  }
  return d;
}

Mat LqModel::terminal_partial_x(TerminalMap which, double, const Vec& x,
                                const AggregateValues&) const {
  return which == TerminalMap::Cost ? scalar1(x(0)) : Mat::Zero(1, 1);
}

Mat LqModel::aggregate_sensitivity(Coefficient c, int, const StatePoint& p,
                                   const AggregateValues& agg) const {
  if (c == Coefficient::RunningCost && mean_weight_ > 0.0) {
    return scalar1(-mean_weight_ * kappa_bar_ * (p.x(0) - kappa_bar_ * agg[0](0)));
  }
  return Mat::Zero(coefficient_rows(dims_, c), 1);
}

GraphonLinearModel::GraphonLinearModel(const ModelParams& params) {
  check_param_keys(params, {"ab", "ba", "cb", "af", "cf", "s0", "gx", "cg"});
  check_horizon(params.horizon);
  dims_ = ComponentDims{1, 1, 1, 1};
  horizon_ = params.horizon;
  ab_ = params.get("ab", -1.0);
  ba_ = params.get("ba", 0.0);
  cb_ = params.get("cb", 0.2);
  af_ = params.get("af", -1.0);
  cf_ = params.get("cf", 0.1);
  s0_ = params.get("s0", 0.3);
  gx_ = params.get("gx", 0.5);
  cg_ = params.get("cg", 0.1);
  auto kappa = make_kappa(params.kappa);
  if (cb_ != 0.0) {
    bx_channel_ = static_cast<int>(channels_.size());
    channels_.push_back(mean_channel("mean-x", 0, 1, kappa));
  }
  if (cf_ != 0.0) {
    fy_channel_ = static_cast<int>(channels_.size());
    channels_.push_back(mean_channel("mean-y", 1, 1, kappa));
  }
  if (cg_ != 0.0) {
    terminal_channels_.push_back(mean_channel("mean-x", 0, 1, kappa));
  }

  sheet_ = ConstantSheet{};
  sheet_.lambda1 = ab_;
  sheet_.lambda2 = af_;
  sheet_.rho3 = std::abs(cb_);
  sheet_.rho31 = std::abs(cb_);
  sheet_.rho6 = std::abs(ba_);
  sheet_.mu3 = std::abs(cf_);
  sheet_.mu32 = std::abs(cf_);
  sheet_.rho4 = std::abs(gx_);
  sheet_.rho5 = std::abs(cg_);
  // adjoint side: the swap moves the f coupling into the forward adjoint
  // drift and the b coupling into the backward adjoint driver
  sheet_.mubar_b1 = std::abs(cf_);
  sheet_.mubar_f2 = std::abs(cb_);
  sheet_.rhobar5 = std::abs(cg_);
}

Vec GraphonLinearModel::drift(const StatePoint& p, const AggregateValues& agg) const {
  double v = ab_ * p.x(0) + ba_ * p.a(0);
  if (bx_channel_ >= 0) v += cb_ * agg[bx_channel_](0);
  Vec out(1);
  out(0) = v;
  return out;
}

Mat GraphonLinearModel::diffusion(const StatePoint&, const AggregateValues&) const {
  return scalar1(s0_);
}

Vec GraphonLinearModel::driver(const StatePoint& p, const AggregateValues& agg) const {
  double v = af_ * p.y(0);
  if (fy_channel_ >= 0) v += cf_ * agg[fy_channel_](0);
  Vec out(1);
  out(0) = v;
  return out;
}

double GraphonLinearModel::running_cost(const StatePoint&, const AggregateValues&) const {
  return 0.0;
}

Vec GraphonLinearModel::terminal_condition(double, const Vec& x,
                                           const AggregateValues& tagg) const {
  double v = gx_ * x(0);
  if (!terminal_channels_.empty()) v += cg_ * tagg[0](0);
  Vec out(1);
  out(0) = v;
  return out;
}

double GraphonLinearModel::terminal_cost(double, const Vec&, const AggregateValues&) const {
  return 0.0;
}

double GraphonLinearModel::initial_cost(double, const Vec&) const { return 0.0; }

Vec GraphonLinearModel::initial_cost_gradient(double, const Vec&) const {
  return Vec::Zero(1);
}

Mat GraphonLinearModel::partial(Coefficient c, int block, const StatePoint&,
                                const AggregateValues&) const {
  Mat d = Mat::Zero(coefficient_rows(dims_, c), dims_.block_dim(block));
  if (c == Coefficient::Drift && block == 0) d(0, 0) = ab_;
  if (c == Coefficient::Drift && block == 3) d(0, 0) = ba_;
  if (c == Coefficient::Driver && block == 1) d(0, 0) = af_;
  return d;
}

Mat GraphonLinearModel::terminal_partial_x(TerminalMap which, double, const Vec&,
                                           const AggregateValues&) const {
  return which == TerminalMap::Condition ? scalar1(gx_) : Mat::Zero(1, 1);
}

Mat GraphonLinearModel::aggregate_sensitivity(Coefficient c, int channel, const StatePoint&,
                                              const AggregateValues&) const {
  if (c == Coefficient::Drift && channel == bx_channel_) return scalar1(cb_);
  if (c == Coefficient::Driver && channel == fy_channel_) return scalar1(cf_);
  return Mat::Zero(coefficient_rows(dims_, c), 1);
}

Mat GraphonLinearModel::terminal_aggregate_sensitivity(TerminalMap which, int, double,
                                                       const Vec&,
                                                       const AggregateValues&) const {
  return which == TerminalMap::Condition ? scalar1(cg_) : Mat::Zero(1, 1);
}

std::function<double(double, double)> make_kappa(const std::string& family) {
  if (family == "constant") return [](double, double) { return 1.0; };
  if (family == "product") return [](double u, double v) { return u * v; };
  if (family == "min") return [](double u, double v) { return std::min(u, v); };
  fail(ErrorCode::InvalidSpec, kStage, "unknown graphon family '" + family + "'");
}

namespace {

std::map<std::string, ModelFactory>& factory_table() {
  static std::map<std::string, ModelFactory> table = [] {
    std::map<std::string, ModelFactory> t;
    t["lq"] = [](const ModelParams& p) -> std::unique_ptr<CoefficientModel> {
      return std::make_unique<LqModel>(p);
    };
    t["graphon-linear"] = [](const ModelParams& p) -> std::unique_ptr<CoefficientModel> {
      return std::make_unique<GraphonLinearModel>(p);
    };
    return t;
  }();
  return table;
}

}  // namespace

void register_model_family(const std::string& name, ModelFactory factory) {
  if (name.empty() || !factory) {
    fail(ErrorCode::InvalidSpec, kStage, "model family needs a name and a factory");
  }
  auto& table = factory_table();
  if (table.count(name)) {
    fail(ErrorCode::InvalidSpec, kStage, "model family '" + name + "' already registered");
  }
  table[name] = std::move(factory);
}

std::unique_ptr<CoefficientModel> make_model(const std::string& family,
                                             const ModelParams& params) {
  auto& table = factory_table();
  auto it = table.find(family);
  if (it == table.end()) {
    std::string known;
    for (const auto& [name, factory] : table) {
      if (!known.empty()) known += ", ";
      known += name;
    }
    fail(ErrorCode::InvalidSpec, kStage,
         "unknown model family '" + family + "' (known: " + known + ")");
  }
  auto model = it->second(params);
  if (!model) {
    fail(ErrorCode::Internal, kStage, "factory for '" + family + "' returned null");
  }
  model->sheet().validate();
  return model;
}

std::vector<std::string> model_family_names() {
  std::vector<std::string> names;
  for (const auto& [name, factory] : factory_table()) names.push_back(name);
  return names;
}

}  // namespace hmf
