#include "hmf/control.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "hmf/common.hpp"
#include "hmf/rng.hpp"
#include "solver_detail.hpp"

namespace hmf {
namespace {

constexpr const char* kStage = "control";

using detail::basis_matrix;
using detail::point_at;
using detail::Regressor;

Mat reshape_rows(const Vec& flat, int r, int c) {
  Mat out(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(i, j) = flat(i * c + j);
  return out;
}

Vec flatten_rows(const Mat& a) {
  Vec out(a.rows() * a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(i * a.cols() + j) = a(i, j);
  return out;
}

double stack_norm(const TypeAtlas& atlas, int steps,
                  const std::vector<std::vector<Mat>>& xs) {
  double worst = 0.0;
  for (int j = 0; j <= steps; ++j) {
    double acc = 0.0;
    for (int v = 0; v < atlas.size(); ++v)
      acc += atlas.weights[v] * xs[v][j].squaredNorm() / xs[v][j].rows();
    worst = std::max(worst, std::sqrt(acc));
  }
  return worst;
}

std::vector<std::vector<Mat>> zero_stack(const TrajectoryEnsemble& e, int cols) {
  std::vector<std::vector<Mat>> out(e.atlas.size());
  for (int v = 0; v < e.atlas.size(); ++v)
    out[v].assign(e.grid.steps + 1, Mat::Zero(e.particles(v), cols));
  return out;
}

StatePoint terminal_point(const TrajectoryEnsemble& e, int v, int p) {
  StatePoint pt;
  pt.t = e.grid.horizon;
  pt.u = e.atlas.labels[v];
  pt.x = e.x[v][e.grid.steps].row(p).transpose();
  pt.y = Vec::Zero(e.dims.l);
  pt.z = Mat::Zero(e.dims.l, e.dims.d);
  pt.a = Vec::Zero(e.dims.k);
  return pt;
}

void check_adjoint_shape(const TrajectoryEnsemble& e, const AdjointEnsemble& adj) {
  const bool ok = adj.atlas.same_as(e.atlas) && adj.grid.steps == e.grid.steps &&
                  adj.grid.horizon == e.grid.horizon && adj.dims.n == e.dims.n &&
                  adj.dims.l == e.dims.l && adj.dims.d == e.dims.d;
  if (!ok) fail(ErrorCode::InvalidInput, kStage, "adjoint ensemble does not match trajectories");
  for (int v = 0; v < e.atlas.size(); ++v)
    if (adj.particles(v) != e.particles(v))
      fail(ErrorCode::InvalidInput, kStage, "adjoint particle count does not match");
}

void check_field_shape(const TrajectoryEnsemble& e, const ControlField& c,
                       const char* what) {
  if (!c.atlas().same_as(e.atlas) || c.grid().steps != e.grid.steps ||
      c.grid().horizon != e.grid.horizon || c.dims().k != e.dims.k)
    fail(ErrorCode::InvalidInput, kStage, std::string(what) + " does not match trajectories");
}

// dH/d(block) at one point with the discrete pairing: the drift slot takes
// the post-step costate, the diffusion slot k, the driver slot p.
Vec slot_gradient(const CoefficientModel& m, const StatePoint& pt,
                  const AggregateValues& agg, int block, const Vec& qnext,
                  const Vec& kflat, const Vec& pvec) {
  Vec h = m.partial(Coefficient::Drift, block, pt, agg).transpose() * qnext;
  h += m.partial(Coefficient::Diffusion, block, pt, agg).transpose() * kflat;
  h -= m.partial(Coefficient::Driver, block, pt, agg).transpose() * pvec;
  h += m.partial(Coefficient::RunningCost, block, pt, agg).row(0).transpose();
  return h;
}

// dH/dA_channel, same slot pairing.
Vec slot_aggregate_gradient(const CoefficientModel& m, const StatePoint& pt,
                            const AggregateValues& agg, int channel, const Vec& qnext,
                            const Vec& kflat, const Vec& pvec) {
  Vec h = m.aggregate_sensitivity(Coefficient::Drift, channel, pt, agg).transpose() * qnext;
  h += m.aggregate_sensitivity(Coefficient::Diffusion, channel, pt, agg).transpose() * kflat;
  h -= m.aggregate_sensitivity(Coefficient::Driver, channel, pt, agg).transpose() * pvec;
  h += m.aggregate_sensitivity(Coefficient::RunningCost, channel, pt, agg).row(0).transpose();
  return h;
}

// Swapped population cross term for one block at one point: the other
// agents' slot sums contracted through this point's channel lift.
Vec measure_cross_block(const std::vector<MeasureChannel>& chans,
                        const std::vector<std::vector<Vec>>& s, int v,
                        const StatePoint& pt, int block, int block_dim) {
  Vec out = Vec::Zero(block_dim);
  for (std::size_t c = 0; c < chans.size(); ++c)
    if (chans[c].arg_mask & block_mask(block))
      out += chans[c].dphi(pt, block).transpose() * s[c][v];
  return out;
}

// Slot sums of the swapped Hamiltonian derivative, one aggregate per
// (node, channel, observer type). Passing no adjoint keeps only the running
// cost slot (the transcription of the duality display needs that variant).
std::vector<std::vector<std::vector<Vec>>> swapped_running(
    const CoefficientModel& m, const TrajectoryEnsemble& e,
    const std::vector<std::vector<AggregateValues>>& aggs, const AdjointEnsemble* adj) {
  const auto& chans = m.channels();
  const int M = e.atlas.size(), steps = e.grid.steps;
  const int C = static_cast<int>(chans.size());
  std::vector<std::vector<std::vector<Vec>>> s(steps);
  if (C == 0) return s;
  for (int j = 0; j < steps; ++j) {
    const double t = e.grid.node(j);
    // per-sample-type slot means
    std::vector<std::vector<Vec>> inner(C, std::vector<Vec>(M));
    for (int vt = 0; vt < M; ++vt) {
      const int N = e.particles(vt);
      for (int c = 0; c < C; ++c) inner[c][vt] = Vec::Zero(chans[c].dim);
      for (int p = 0; p < N; ++p) {
        const StatePoint pt = point_at(e, vt, j, p, t);
        for (int c = 0; c < C; ++c) {
          if (adj) {
            inner[c][vt] += slot_aggregate_gradient(
                m, pt, aggs[j][vt], c, adj->q[vt][j + 1].row(p).transpose(),
                adj->k[vt][j].row(p).transpose(), adj->p[vt][j].row(p).transpose());
          } else {
            inner[c][vt] += m.aggregate_sensitivity(Coefficient::RunningCost, c, pt,
                                                    aggs[j][vt])
                                .row(0)
                                .transpose();
          }
        }
      }
      for (int c = 0; c < C; ++c) inner[c][vt] /= N;
    }
    s[j].assign(C, std::vector<Vec>(M));
    for (int c = 0; c < C; ++c)
      for (int u = 0; u < M; ++u) {
        Vec acc = Vec::Zero(chans[c].dim);
        for (int vt = 0; vt < M; ++vt)
          acc += e.atlas.weights[vt] *
                 chans[c].kappa(e.atlas.labels[vt], e.atlas.labels[u]) * inner[c][vt];
        s[j][c][u] = acc;
      }
  }
  return s;
}

struct TerminalSwapped {
  std::vector<std::vector<Vec>> g, h;  // [channel][observer type]
};

TerminalSwapped swapped_terminal(const CoefficientModel& m, const TrajectoryEnsemble& e,
                                 const std::vector<AggregateValues>& tagg,
                                 const std::vector<std::vector<Mat>>& pstack) {
  const auto& chans = m.terminal_channels();
  const int M = e.atlas.size(), steps = e.grid.steps;
  const int C = static_cast<int>(chans.size());
  TerminalSwapped out;
  if (C == 0) return out;
  std::vector<std::vector<Vec>> ig(C, std::vector<Vec>(M)), ih(C, std::vector<Vec>(M));
  for (int vt = 0; vt < M; ++vt) {
    const int N = e.particles(vt);
    const double u = e.atlas.labels[vt];
    for (int c = 0; c < C; ++c) {
      ig[c][vt] = Vec::Zero(chans[c].dim);
      ih[c][vt] = Vec::Zero(chans[c].dim);
    }
    for (int p = 0; p < N; ++p) {
      const Vec x = e.x[vt][steps].row(p).transpose();
      const Vec pv = pstack[vt][steps].row(p).transpose();
      for (int c = 0; c < C; ++c) {
        ig[c][vt] += m.terminal_aggregate_sensitivity(TerminalMap::Condition, c, u, x,
                                                      tagg[vt])
                         .transpose() *
                     pv;
        ih[c][vt] += m.terminal_aggregate_sensitivity(TerminalMap::Cost, c, u, x, tagg[vt])
                         .row(0)
                         .transpose();
      }
    }
    for (int c = 0; c < C; ++c) {
      ig[c][vt] /= N;
      ih[c][vt] /= N;
    }
  }
  out.g.assign(C, std::vector<Vec>(M));
  out.h.assign(C, std::vector<Vec>(M));
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < M; ++u) {
      Vec ag = Vec::Zero(chans[c].dim), ah = Vec::Zero(chans[c].dim);
      for (int vt = 0; vt < M; ++vt) {
        const double w = e.atlas.weights[vt] *
                         chans[c].kappa(e.atlas.labels[vt], e.atlas.labels[u]);
        ag += w * ig[c][vt];
        ah += w * ih[c][vt];
      }
      out.g[c][u] = ag;
      out.h[c][u] = ah;
    }
  return out;
}

// Directional (non-swapped) channel aggregates at one node; `use` restricts
// the contributing blocks. Null stacks stand for identically zero blocks.
std::vector<std::vector<Vec>> dir_node_aggregate(
    const CoefficientModel& m, const TrajectoryEnsemble& e, int node,
    const std::vector<std::vector<Mat>>* xp, const std::vector<std::vector<Mat>>* yp,
    const std::vector<std::vector<Mat>>* zp, const ControlField* dir, unsigned use) {
  const auto& chans = m.channels();
  const int M = e.atlas.size();
  const int C = static_cast<int>(chans.size());
  std::vector<std::vector<Vec>> out;
  if (C == 0) return out;
  const double t = e.grid.node(node);
  std::vector<std::vector<Vec>> inner(C, std::vector<Vec>(M));
  for (int vt = 0; vt < M; ++vt) {
    const int N = e.particles(vt);
    for (int c = 0; c < C; ++c) inner[c][vt] = Vec::Zero(chans[c].dim);
    Vec pi;
    if (dir) pi = dir->table(vt).row(node).transpose();
    for (int p = 0; p < N; ++p) {
      const StatePoint pt = point_at(e, vt, node, p, t);
      for (int c = 0; c < C; ++c) {
        const unsigned mask = chans[c].arg_mask & use;
        if (mask & kMaskX)
          inner[c][vt] += chans[c].dphi(pt, 0) * (*xp)[vt][node].row(p).transpose();
        if (mask & kMaskY)
          inner[c][vt] += chans[c].dphi(pt, 1) * (*yp)[vt][node].row(p).transpose();
        if (mask & kMaskZ)
          inner[c][vt] += chans[c].dphi(pt, 2) * (*zp)[vt][node].row(p).transpose();
        if ((mask & kMaskA) && dir) inner[c][vt] += chans[c].dphi(pt, 3) * pi;
      }
    }
    for (int c = 0; c < C; ++c) inner[c][vt] /= N;
  }
  out.assign(C, std::vector<Vec>(M));
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < M; ++u) {
      Vec acc = Vec::Zero(chans[c].dim);
      for (int vt = 0; vt < M; ++vt)
        acc += e.atlas.weights[vt] *
               chans[c].kappa(e.atlas.labels[u], e.atlas.labels[vt]) * inner[c][vt];
      out[c][u] = acc;
    }
  return out;
}

std::vector<std::vector<Vec>> terminal_dir_aggregate(
    const CoefficientModel& m, const TrajectoryEnsemble& e,
    const std::vector<std::vector<Mat>>& xp) {
  const auto& chans = m.terminal_channels();
  const int M = e.atlas.size(), steps = e.grid.steps;
  const int C = static_cast<int>(chans.size());
  std::vector<std::vector<Vec>> out;
  if (C == 0) return out;
  std::vector<std::vector<Vec>> inner(C, std::vector<Vec>(M));
  for (int vt = 0; vt < M; ++vt) {
    const int N = e.particles(vt);
    for (int c = 0; c < C; ++c) inner[c][vt] = Vec::Zero(chans[c].dim);
    for (int p = 0; p < N; ++p) {
      const StatePoint pt = terminal_point(e, vt, p);
      for (int c = 0; c < C; ++c)
        if (chans[c].arg_mask & kMaskX)
          inner[c][vt] += chans[c].dphi(pt, 0) * xp[vt][steps].row(p).transpose();
    }
    for (int c = 0; c < C; ++c) inner[c][vt] /= N;
  }
  out.assign(C, std::vector<Vec>(M));
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < M; ++u) {
      Vec acc = Vec::Zero(chans[c].dim);
      for (int vt = 0; vt < M; ++vt)
        acc += e.atlas.weights[vt] *
               chans[c].kappa(e.atlas.labels[u], e.atlas.labels[vt]) * inner[c][vt];
      out[c][u] = acc;
    }
  return out;
}

std::vector<Vec> add_aggs(const std::vector<std::vector<Vec>>& a,
                          const std::vector<std::vector<Vec>>& b, int u) {
  std::vector<Vec> out(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) {
    out[c] = a[c][u];
    if (!b.empty()) out[c] += b[c][u];
  }
  return out;
}

std::vector<AggregateValues> terminal_flow_aggregates(const CoefficientModel& m,
                                                      const KernelFlow& flow) {
  if (m.terminal_channels().empty())
    return std::vector<AggregateValues>(flow.terminal_x.atlas.size());
  return compute_terminal_aggregates(m, flow.terminal_x);
}

// Directional coefficient delta at one point: classical blocks plus the
// channel aggregates.
Vec slot_direction(const CoefficientModel& m, Coefficient c, const StatePoint& pt,
                   const AggregateValues& agg, const Vec& xp, const Vec& yp,
                   const Vec& zpflat, const Vec& pi, const std::vector<Vec>& da) {
  Vec out = m.partial(c, 0, pt, agg) * xp;
  out += m.partial(c, 1, pt, agg) * yp;
  out += m.partial(c, 2, pt, agg) * zpflat;
  out += m.partial(c, 3, pt, agg) * pi;
  for (std::size_t ch = 0; ch < da.size(); ++ch)
    out += m.aggregate_sensitivity(c, static_cast<int>(ch), pt, agg) * da[ch];
  return out;
}

double csv_to_double(const std::string& tok, int line) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(tok, &pos);
    if (pos == tok.size()) return x;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::InvalidInput, kStage,
       "control csv: line " + std::to_string(line) + ": bad number '" + tok + "'");
}

int csv_to_int(const std::string& tok, int line) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(tok, &pos);
    if (pos == tok.size()) return x;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::InvalidInput, kStage,
       "control csv: line " + std::to_string(line) + ": bad index '" + tok + "'");
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

void ControlBox::validate(int k) const {
  if (lo.size() == 0 && hi.size() == 0) return;
  if (lo.size() != k || hi.size() != k)
    fail(ErrorCode::InvalidInput, kStage, "control box bounds must match the control dimension");
  for (int i = 0; i < k; ++i) {
    if (std::isnan(lo(i)) || std::isnan(hi(i)) || !(lo(i) <= hi(i)))
      fail(ErrorCode::InvalidInput, kStage, "control box needs lo <= hi in every coordinate");
  }
}

Mat ControlBox::project(Mat values) const {
  if (!active()) return values;
  for (int i = 0; i < values.cols(); ++i)
    values.col(i) = values.col(i).cwiseMax(lo(i)).cwiseMin(hi(i));
  return values;
}

ControlField ControlField::open_loop(const ComponentDims& dims, const TimeGrid& grid,
                                     const TypeAtlas& atlas, ControlBox box) {
  grid.validate();
  if (atlas.size() == 0) fail(ErrorCode::InvalidInput, kStage, "control needs a nonempty atlas");
  box.validate(dims.k);
  ControlField c;
  c.kind_ = ControlKind::OpenLoop;
  c.dims_ = dims;
  c.grid_ = grid;
  c.atlas_ = atlas;
  c.box_ = std::move(box);
  c.table_.assign(atlas.size(), Mat::Zero(grid.steps + 1, dims.k));
  return c;
}

ControlField ControlField::feedback(const ComponentDims& dims, const TimeGrid& grid,
                                    const TypeAtlas& atlas, ControlBox box) {
  grid.validate();
  if (atlas.size() == 0) fail(ErrorCode::InvalidInput, kStage, "control needs a nonempty atlas");
  box.validate(dims.k);
  ControlField c;
  c.kind_ = ControlKind::Feedback;
  c.dims_ = dims;
  c.grid_ = grid;
  c.atlas_ = atlas;
  c.box_ = std::move(box);
  c.coeffs_.assign(atlas.size(),
                   std::vector<Mat>(grid.steps + 1, Mat::Zero(1 + dims.n, dims.k)));
  return c;
}

Mat ControlField::values(int type, double, int node, double, const Mat& x) const {
  if (type < 0 || type >= atlas_.size())
    fail(ErrorCode::InvalidInput, kStage, "control type index out of range");
  if (node < 0 || node > grid_.steps)
    fail(ErrorCode::InvalidInput, kStage, "control node out of range");
  if (kind_ == ControlKind::OpenLoop)
    return box_.project(table_[type].row(node).replicate(x.rows(), 1));
  if (x.cols() != dims_.n)
    fail(ErrorCode::InvalidInput, kStage, "feedback control expects the X block");
  Mat basis(x.rows(), 1 + dims_.n);
  basis.col(0).setOnes();
  basis.rightCols(dims_.n) = x;
  return box_.project(basis * coeffs_[type][node]);
}

Mat& ControlField::table(int type) {
  if (kind_ != ControlKind::OpenLoop)
    fail(ErrorCode::InvalidInput, kStage, "feedback field has no open-loop table");
  return table_.at(type);
}

const Mat& ControlField::table(int type) const {
  if (kind_ != ControlKind::OpenLoop)
    fail(ErrorCode::InvalidInput, kStage, "feedback field has no open-loop table");
  return table_.at(type);
}

Mat& ControlField::coeffs(int type, int node) {
  if (kind_ != ControlKind::Feedback)
    fail(ErrorCode::InvalidInput, kStage, "open-loop field has no feedback coefficients");
  return coeffs_.at(type).at(node);
}

const Mat& ControlField::coeffs(int type, int node) const {
  if (kind_ != ControlKind::Feedback)
    fail(ErrorCode::InvalidInput, kStage, "open-loop field has no feedback coefficients");
  return coeffs_.at(type).at(node);
}

void ControlField::project() {
  if (kind_ != ControlKind::OpenLoop || !box_.active()) return;
  for (Mat& t : table_) t = box_.project(std::move(t));
}

void ControlField::validate() const {
  grid_.validate();
  if (atlas_.size() == 0 ||
      atlas_.labels.size() != atlas_.weights.size())
    fail(ErrorCode::InvalidInput, kStage, "control atlas is malformed");
  box_.validate(dims_.k);
  const int nodes = grid_.steps + 1;
  if (kind_ == ControlKind::OpenLoop) {
    if (static_cast<int>(table_.size()) != atlas_.size())
      fail(ErrorCode::InvalidInput, kStage, "open-loop table count does not match atlas");
    for (const Mat& t : table_)
      if (t.rows() != nodes || t.cols() != dims_.k || !t.allFinite())
        fail(ErrorCode::InvalidInput, kStage, "open-loop table is malformed");
  } else {
    if (static_cast<int>(coeffs_.size()) != atlas_.size())
      fail(ErrorCode::InvalidInput, kStage, "feedback coefficient count does not match atlas");
    for (const auto& per_type : coeffs_) {
      if (static_cast<int>(per_type.size()) != nodes)
        fail(ErrorCode::InvalidInput, kStage, "feedback coefficients are malformed");
      for (const Mat& c : per_type)
        if (c.rows() != 1 + dims_.n || c.cols() != dims_.k || !c.allFinite())
          fail(ErrorCode::InvalidInput, kStage, "feedback coefficients are malformed");
    }
  }
}

void save_control_csv(const ControlField& c, std::ostream& out) {
  c.validate();
  out << "kind,type,node,t,row";
  for (int i = 0; i < c.dims().k; ++i) out << ",c" << i;
  out << "\n";
  const char* kind = c.kind() == ControlKind::OpenLoop ? "open-loop" : "feedback";
  const int rows = c.kind() == ControlKind::OpenLoop ? 1 : 1 + c.dims().n;
  for (int v = 0; v < c.atlas().size(); ++v) {
    for (int j = 0; j <= c.grid().steps; ++j) {
      for (int r = 0; r < rows; ++r) {
        out << kind << "," << v << "," << j << "," << fmt_double(c.grid().node(j)) << ","
            << r;
        const Eigen::RowVectorXd row = c.kind() == ControlKind::OpenLoop
                                           ? c.table(v).row(j)
                                           : c.coeffs(v, j).row(r);
        for (int i = 0; i < c.dims().k; ++i) out << "," << fmt_double(row(i));
        out << "\n";
      }
    }
  }
}

ControlField load_control_csv(const ComponentDims& dims, const TimeGrid& grid,
                              const TypeAtlas& atlas, std::istream& in, ControlBox box) {
  grid.validate();
  std::string expected = "kind,type,node,t,row";
  for (int i = 0; i < dims.k; ++i) expected += ",c" + std::to_string(i);
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line) || line != expected)
    fail(ErrorCode::InvalidInput, kStage, "control csv: line 1: unexpected header");

  if (!std::getline(in, line))
    fail(ErrorCode::InvalidInput, kStage, "control csv: missing data rows");
  ++lineno;
  const auto first = csv_split(line);
  if (first.empty())
    fail(ErrorCode::InvalidInput, kStage, "control csv: line 2: empty row");
  ControlField c;
  int rows = 0;
  if (first[0] == "open-loop") {
    c = ControlField::open_loop(dims, grid, atlas, std::move(box));
    rows = 1;
  } else if (first[0] == "feedback") {
    c = ControlField::feedback(dims, grid, atlas, std::move(box));
    rows = 1 + dims.n;
  } else {
    fail(ErrorCode::InvalidInput, kStage,
         "control csv: line 2: unknown kind '" + first[0] + "'");
  }

  bool pending = true;  // `line` holds an unconsumed row
  for (int v = 0; v < atlas.size(); ++v) {
    for (int j = 0; j <= grid.steps; ++j) {
      for (int r = 0; r < rows; ++r) {
        if (!pending) {
          if (!std::getline(in, line))
            fail(ErrorCode::InvalidInput, kStage, "control csv: truncated file");
          ++lineno;
        }
        pending = false;
        const auto toks = csv_split(line);
        if (static_cast<int>(toks.size()) != 5 + dims.k)
          fail(ErrorCode::InvalidInput, kStage,
               "control csv: line " + std::to_string(lineno) + ": expected " +
                   std::to_string(5 + dims.k) + " fields");
        if (toks[0] != first[0])
          fail(ErrorCode::InvalidInput, kStage,
               "control csv: line " + std::to_string(lineno) + ": mixed kinds");
        if (csv_to_int(toks[1], lineno) != v || csv_to_int(toks[2], lineno) != j ||
            csv_to_int(toks[4], lineno) != r)
          fail(ErrorCode::InvalidInput, kStage,
               "control csv: line " + std::to_string(lineno) + ": rows out of order");
        csv_to_double(toks[3], lineno);  // grid time, informational only
        for (int i = 0; i < dims.k; ++i) {
          const double x = csv_to_double(toks[5 + i], lineno);
          if (rows == 1)
            c.table(v)(j, i) = x;
          else
            c.coeffs(v, j)(r, i) = x;
        }
      }
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty())
      fail(ErrorCode::InvalidInput, kStage,
           "control csv: line " + std::to_string(lineno) + ": trailing data");
  }
  c.validate();
  return c;
}

ControlField random_open_loop(const ComponentDims& dims, const TimeGrid& grid,
                              const TypeAtlas& atlas, const ControlBox& box,
                              uint64_t seed, int index, double amplitude) {
  if (index < 0) fail(ErrorCode::InvalidInput, kStage, "field index must be nonnegative");
  if (!(amplitude >= 0) || !std::isfinite(amplitude))
    fail(ErrorCode::InvalidInput, kStage, "amplitude must be finite and nonnegative");
  ControlField c = ControlField::open_loop(dims, grid, atlas, box);
  for (int v = 0; v < atlas.size(); ++v) {
    const RandomStream rs(seed, static_cast<uint32_t>(v), static_cast<uint32_t>(index),
                          kStreamRival);
    for (int j = 0; j <= grid.steps; ++j)
      for (int i = 0; i < dims.k; ++i)
        c.table(v)(j, i) =
            amplitude * rs.normal(static_cast<uint64_t>(j) * dims.k + i);
  }
  c.project();
  return c;
}

std::vector<Vec> per_particle_costs(const CoefficientModel& m, const TrajectoryEnsemble& e,
                                    const KernelFlow& flow) {
  detail::check_ensemble(m, e, kStage);
  detail::check_flow(e, flow, kStage);
  const int steps = e.grid.steps;
  const double dt = e.grid.dt();
  const auto aggs = detail::flow_aggregates(m, flow, e.grid);
  const auto tagg = terminal_flow_aggregates(m, flow);
  std::vector<Vec> out(e.atlas.size());
  for (int v = 0; v < e.atlas.size(); ++v) {
    const int N = e.particles(v);
    const double u = e.atlas.labels[v];
    Vec c = Vec::Zero(N);
    for (int j = 0; j < steps; ++j) {
      const double t = e.grid.node(j);
      for (int p = 0; p < N; ++p)
        c(p) += dt * m.running_cost(point_at(e, v, j, p, t), aggs[j][v]);
    }
    for (int p = 0; p < N; ++p) {
      c(p) += m.terminal_cost(u, e.x[v][steps].row(p).transpose(), tagg[v]);
      c(p) += m.initial_cost(u, e.y[v][0].row(p).transpose());
    }
    if (!c.allFinite())
      fail(ErrorCode::NonConvergence, kStage, "cost evaluation produced a nonfinite value");
    out[v] = std::move(c);
  }
  return out;
}

double evaluate_cost(const CoefficientModel& m, const TrajectoryEnsemble& e,
                     const KernelFlow& flow) {
  const auto costs = per_particle_costs(m, e, flow);
  double j = 0.0;
  for (int v = 0; v < e.atlas.size(); ++v) j += e.atlas.weights[v] * costs[v].mean();
  return j;
}

double hamiltonian(const CoefficientModel& m, const StatePoint& pt,
                   const AggregateValues& agg, const Vec& p, const Vec& q, const Mat& k) {
  const ComponentDims& dims = m.dims();
  if (p.size() != dims.l || q.size() != dims.n || k.rows() != dims.n || k.cols() != dims.d)
    fail(ErrorCode::InvalidInput, kStage, "costate dimensions do not match the model");
  const double running = m.running_cost(pt, agg);
  return q.dot(m.drift(pt, agg)) + (k.array() * m.diffusion(pt, agg).array()).sum() -
         p.dot(m.driver(pt, agg)) + running;
}

double hamiltonian(const CoefficientModel& m, const MeasureKernel& kernel, int type,
                   int particle, double t, const Vec& p, const Vec& q, const Mat& k) {
  if (kernel.mask != kMaskAll)
    fail(ErrorCode::InvalidInput, kStage, "hamiltonian needs the joint-law kernel");
  if (type < 0 || type >= kernel.atlas.size())
    fail(ErrorCode::InvalidInput, kStage, "type index out of range");
  const Mat& pts = kernel.clouds[type].points;
  if (particle < 0 || particle >= pts.rows())
    fail(ErrorCode::InvalidInput, kStage, "particle index out of range");
  const ComponentDims& dims = kernel.dims;
  StatePoint pt;
  pt.t = t;
  pt.u = kernel.atlas.labels[type];
  const Eigen::RowVectorXd row = pts.row(particle);
  pt.x = row.segment(0, dims.n).transpose();
  pt.y = row.segment(dims.n, dims.l).transpose();
  pt.z = detail::unflatten_z(dims, row.segment(dims.n + dims.l, dims.zdim()));
  pt.a = row.segment(dims.n + dims.l + dims.zdim(), dims.k).transpose();
  const AggregateValues agg = m.channels().empty()
                                  ? AggregateValues{}
                                  : aggregates_for_label(m, kernel, t, pt.u);
  return hamiltonian(m, pt, agg, p, q, k);
}

AdjointResult solve_adjoint(const CoefficientModel& m, const TrajectoryEnsemble& e,
                            const KernelFlow& flow, const NoiseEnsemble& noise,
                            const AdjointOptions& opts) {
  detail::check_ensemble(m, e, kStage);
  detail::check_noise(e, noise, kStage);
  detail::check_flow(e, flow, kStage);
  detail::check_regression_spec(opts.basis, kStage);
  if (opts.max_passes < 1)
    fail(ErrorCode::InvalidInput, kStage, "adjoint needs at least one pass");
  if (!(opts.tol >= 0) || !std::isfinite(opts.tol))
    fail(ErrorCode::InvalidInput, kStage, "tolerance must be finite and nonnegative");

  const int M = e.atlas.size(), steps = e.grid.steps;
  const int n = e.dims.n, l = e.dims.l, d = e.dims.d;
  const double dt = e.grid.dt();
  const auto aggs = detail::flow_aggregates(m, flow, e.grid);
  const auto tagg = terminal_flow_aggregates(m, flow);
  const auto& chans = m.channels();
  const auto& tchans = m.terminal_channels();

  AdjointResult out;
  out.theta2 = certify(m.sheet(), ConditionVariant::AdjointTheta2);
  if (!out.theta2.feasible)
    out.warning = "adjoint smallness condition not certified (" + out.theta2.reason + ")";

  AdjointEnsemble adj;
  adj.atlas = e.atlas;
  adj.dims = e.dims;
  adj.grid = e.grid;
  adj.p = zero_stack(e, l);
  adj.q = zero_stack(e, n);
  adj.k = zero_stack(e, n * d);

  // measure terms lag one pass behind the costates
  std::vector<std::vector<std::vector<Vec>>> srun;
  TerminalSwapped sterm;

  for (int pass = 1; pass <= opts.max_passes; ++pass) {
    AdjointEnsemble next = adj;

    // terminal costate, lagged p_T
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      const double u = e.atlas.labels[v];
      for (int p = 0; p < N; ++p) {
        const Vec x = e.x[v][steps].row(p).transpose();
        const Vec plagT = adj.p[v][steps].row(p).transpose();
        Vec qT = -m.terminal_partial_x(TerminalMap::Condition, u, x, tagg[v]).transpose() *
                 plagT;
        qT += m.terminal_partial_x(TerminalMap::Cost, u, x, tagg[v]).row(0).transpose();
        if (!sterm.g.empty()) {
          const StatePoint pt = terminal_point(e, v, p);
          qT -= measure_cross_block(tchans, sterm.g, v, pt, 0, n);
          qT += measure_cross_block(tchans, sterm.h, v, pt, 0, n);
        }
        next.q[v][steps].row(p) = qT.transpose();
      }
      if (!next.q[v][steps].allFinite()) detail::diverged(kStage, "adjoint backward", v, steps);
    }

    // backward sweep for (q, k)
    for (int j = steps - 1; j >= 0; --j) {
      const double t = e.grid.node(j);
      for (int v = 0; v < M; ++v) {
        const int N = e.particles(v);
        const Regressor reg(basis_matrix(e.x[v][j], noise.initial[v], opts.basis),
                            opts.basis.ridge);
        if (reg.ridge) ++out.ridge_fallbacks;
        const Mat qfit = reg.fit(next.q[v][j + 1]);
        const Mat res = next.q[v][j + 1] - qfit;
        Mat ktargets(N, n * d);
        for (int i = 0; i < n; ++i)
          for (int dc = 0; dc < d; ++dc)
            ktargets.col(i * d + dc) =
                res.col(i).cwiseProduct(noise.increments[v].col(j * d + dc)) / dt;
        next.k[v][j] = reg.fit(ktargets);

        Mat target(N, n);
        for (int p = 0; p < N; ++p) {
          const StatePoint pt = point_at(e, v, j, p, t);
          Vec hx = slot_gradient(m, pt, aggs[j][v], 0, next.q[v][j + 1].row(p).transpose(),
                                 next.k[v][j].row(p).transpose(),
                                 adj.p[v][j].row(p).transpose());
          if (!srun.empty())
            hx += measure_cross_block(chans, srun[j], v, pt, 0, n);
          target.row(p) = (next.q[v][j + 1].row(p).transpose() + dt * hx).transpose();
        }
        next.q[v][j] = reg.fit(target);
        if (!next.q[v][j].allFinite() || !next.k[v][j].allFinite())
          detail::diverged(kStage, "adjoint backward", v, j);
      }
    }

    // forward sweep for p
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      const double u = e.atlas.labels[v];
      for (int p = 0; p < N; ++p)
        next.p[v][0].row(p) =
            -m.initial_cost_gradient(u, e.y[v][0].row(p).transpose()).transpose();
    }
    for (int j = 0; j < steps; ++j) {
      const double t = e.grid.node(j);
      for (int v = 0; v < M; ++v) {
        const int N = e.particles(v);
        for (int p = 0; p < N; ++p) {
          const StatePoint pt = point_at(e, v, j, p, t);
          const Vec qnext = next.q[v][j + 1].row(p).transpose();
          const Vec kflat = next.k[v][j].row(p).transpose();
          const Vec pvec = next.p[v][j].row(p).transpose();
          Vec hy = slot_gradient(m, pt, aggs[j][v], 1, qnext, kflat, pvec);
          Vec hzflat = slot_gradient(m, pt, aggs[j][v], 2, qnext, kflat, pvec);
          if (!srun.empty()) {
            hy += measure_cross_block(chans, srun[j], v, pt, 1, l);
            hzflat += measure_cross_block(chans, srun[j], v, pt, 2, l * d);
          }
          const Vec db = noise.increments[v].row(p).segment(j * d, d).transpose();
          next.p[v][j + 1].row(p) =
              (pvec - dt * hy - reshape_rows(hzflat, l, d) * db).transpose();
        }
        if (!next.p[v][j + 1].allFinite()) detail::diverged(kStage, "adjoint forward", v, j + 1);
      }
    }

    const double change = detail::stack_distance(e.atlas, steps, next.q, adj.q) +
                          detail::stack_distance(e.atlas, steps, next.p, adj.p);
    const double scale =
        stack_norm(e.atlas, steps, next.q) + stack_norm(e.atlas, steps, next.p);
    adj = std::move(next);
    out.passes = pass;

    if (!chans.empty()) srun = swapped_running(m, e, aggs, &adj);
    if (!tchans.empty()) sterm = swapped_terminal(m, e, tagg, adj.p);

    if (change <= opts.tol * (1 + scale)) {
      out.converged = true;
      break;
    }
  }
  out.ensemble = std::move(adj);
  return out;
}

VariationalResult solve_variational(const CoefficientModel& m, const TrajectoryEnsemble& e,
                                    const KernelFlow& flow, const NoiseEnsemble& noise,
                                    const ControlField& direction,
                                    const VariationalOptions& opts) {
  detail::check_ensemble(m, e, kStage);
  detail::check_noise(e, noise, kStage);
  detail::check_flow(e, flow, kStage);
  detail::check_regression_spec(opts.basis, kStage);
  direction.validate();
  if (direction.kind() != ControlKind::OpenLoop)
    fail(ErrorCode::InvalidInput, kStage, "variational direction must be an open-loop field");
  check_field_shape(e, direction, "direction");
  if (opts.max_passes < 1)
    fail(ErrorCode::InvalidInput, kStage, "variational solve needs at least one pass");
  if (!(opts.tol >= 0) || !std::isfinite(opts.tol))
    fail(ErrorCode::InvalidInput, kStage, "tolerance must be finite and nonnegative");

  const int M = e.atlas.size(), steps = e.grid.steps;
  const int n = e.dims.n, l = e.dims.l, d = e.dims.d;
  const double dt = e.grid.dt();
  const auto aggs = detail::flow_aggregates(m, flow, e.grid);
  const auto tagg = terminal_flow_aggregates(m, flow);
  const bool has_chans = !m.channels().empty();

  VariationalResult out;
  VariationalEnsemble var;
  var.atlas = e.atlas;
  var.dims = e.dims;
  var.grid = e.grid;
  var.x = zero_stack(e, n);
  var.y = zero_stack(e, l);
  var.z = zero_stack(e, l * d);

  // Y/Z channel contributions lag one pass; X/control contributions are
  // rebuilt inside each sweep from the freshly advanced states.
  std::vector<std::vector<std::vector<Vec>>> ayz(steps);

  for (int pass = 1; pass <= opts.max_passes; ++pass) {
    VariationalEnsemble next = var;
    std::vector<std::vector<std::vector<Vec>>> axa(steps);

    // forward sweep
    for (int j = 0; j < steps; ++j) {
      const double t = e.grid.node(j);
      if (has_chans)
        axa[j] = dir_node_aggregate(m, e, j, &next.x, nullptr, nullptr, &direction,
                                    kMaskX | kMaskA);
      for (int v = 0; v < M; ++v) {
        const int N = e.particles(v);
        const Vec pi = direction.table(v).row(j).transpose();
        const std::vector<Vec> da =
            has_chans ? add_aggs(axa[j], ayz[j], v) : std::vector<Vec>{};
        for (int p = 0; p < N; ++p) {
          const StatePoint pt = point_at(e, v, j, p, t);
          const Vec xp = next.x[v][j].row(p).transpose();
          const Vec yp = var.y[v][j].row(p).transpose();
          const Vec zp = var.z[v][j].row(p).transpose();
          const Vec db = noise.increments[v].row(p).segment(j * d, d).transpose();
          const Vec bdir = slot_direction(m, Coefficient::Drift, pt, aggs[j][v], xp, yp,
                                          zp, pi, da);
          const Vec sdir = slot_direction(m, Coefficient::Diffusion, pt, aggs[j][v], xp,
                                          yp, zp, pi, da);
          next.x[v][j + 1].row(p) =
              (xp + dt * bdir + reshape_rows(sdir, n, d) * db).transpose();
        }
        if (!next.x[v][j + 1].allFinite())
          detail::diverged(kStage, "variational forward", v, j + 1);
      }
    }

    // terminal condition with the fresh directional X marginal
    const auto atd = terminal_dir_aggregate(m, e, next.x);
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      const double u = e.atlas.labels[v];
      for (int p = 0; p < N; ++p) {
        const Vec x = e.x[v][steps].row(p).transpose();
        Vec yT = m.terminal_partial_x(TerminalMap::Condition, u, x, tagg[v]) *
                 next.x[v][steps].row(p).transpose();
        for (std::size_t c = 0; c < atd.size(); ++c)
          yT += m.terminal_aggregate_sensitivity(TerminalMap::Condition,
                                                 static_cast<int>(c), u, x, tagg[v]) *
                atd[c][v];
        next.y[v][steps].row(p) = yT.transpose();
      }
    }

    // backward sweep
    for (int j = steps - 1; j >= 0; --j) {
      const double t = e.grid.node(j);
      for (int v = 0; v < M; ++v) {
        const int N = e.particles(v);
        const Regressor reg(basis_matrix(e.x[v][j], noise.initial[v], opts.basis),
                            opts.basis.ridge);
        if (reg.ridge) ++out.ridge_fallbacks;
        const Mat yfit = reg.fit(next.y[v][j + 1]);
        const Mat res = next.y[v][j + 1] - yfit;
        Mat ztargets(N, l * d);
        for (int i = 0; i < l; ++i)
          for (int dc = 0; dc < d; ++dc)
            ztargets.col(i * d + dc) =
                res.col(i).cwiseProduct(noise.increments[v].col(j * d + dc)) / dt;
        next.z[v][j] = reg.fit(ztargets);

        const Vec pi = direction.table(v).row(j).transpose();
        const std::vector<Vec> da =
            has_chans ? add_aggs(axa[j], ayz[j], v) : std::vector<Vec>{};
        Mat target(N, l);
        for (int p = 0; p < N; ++p) {
          const StatePoint pt = point_at(e, v, j, p, t);
          const Vec fdir = slot_direction(m, Coefficient::Driver, pt, aggs[j][v],
                                          next.x[v][j].row(p).transpose(),
                                          next.y[v][j + 1].row(p).transpose(),
                                          next.z[v][j].row(p).transpose(), pi, da);
          target.row(p) = (next.y[v][j + 1].row(p).transpose() + dt * fdir).transpose();
        }
        next.y[v][j] = reg.fit(target);
        if (!next.y[v][j].allFinite() || !next.z[v][j].allFinite())
          detail::diverged(kStage, "variational backward", v, j);
      }
    }
    // terminal Z mirrors the last step like the base ensemble
    for (int v = 0; v < M; ++v) next.z[v][steps] = next.z[v][steps - 1];

    const double change = detail::stack_distance(e.atlas, steps, next.x, var.x) +
                          detail::stack_distance(e.atlas, steps, next.y, var.y);
    const double scale =
        stack_norm(e.atlas, steps, next.x) + stack_norm(e.atlas, steps, next.y);
    var = std::move(next);
    out.passes = pass;

    if (has_chans) {
      for (int j = 0; j < steps; ++j)
        ayz[j] = dir_node_aggregate(m, e, j, nullptr, &var.y, &var.z, nullptr,
                                    kMaskY | kMaskZ);
    }

    if (change <= opts.tol * scale) {
      out.converged = true;
      break;
    }
  }
  out.ensemble = std::move(var);
  return out;
}

GradientField hamiltonian_gradient(const CoefficientModel& m, const TrajectoryEnsemble& e,
                                   const KernelFlow& flow, const AdjointEnsemble& adj) {
  detail::check_ensemble(m, e, kStage);
  detail::check_flow(e, flow, kStage);
  check_adjoint_shape(e, adj);
  const int M = e.atlas.size(), steps = e.grid.steps;
  const int k = e.dims.k;
  const auto aggs = detail::flow_aggregates(m, flow, e.grid);
  const auto& chans = m.channels();

  GradientField out;
  out.atlas = e.atlas;
  out.dims = e.dims;
  out.grid = e.grid;
  out.cross_skipped = m.control_law_free() && !chans.empty();

  std::vector<std::vector<std::vector<Vec>>> srun;
  if (!out.cross_skipped && !chans.empty()) srun = swapped_running(m, e, aggs, &adj);

  out.g.resize(M);
  for (int v = 0; v < M; ++v) out.g[v].assign(steps, Mat());
  for (int j = 0; j < steps; ++j) {
    const double t = e.grid.node(j);
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      Mat g(N, k);
      for (int p = 0; p < N; ++p) {
        const StatePoint pt = point_at(e, v, j, p, t);
        Vec gp = slot_gradient(m, pt, aggs[j][v], 3, adj.q[v][j + 1].row(p).transpose(),
                               adj.k[v][j].row(p).transpose(),
                               adj.p[v][j].row(p).transpose());
        if (!srun.empty()) gp += measure_cross_block(chans, srun[j], v, pt, 3, k);
        g.row(p) = gp.transpose();
      }
      out.g[v][j] = std::move(g);
    }
  }
  return out;
}

MPReport check_maximum_principle(const CoefficientModel& m, const TrajectoryEnsemble& e,
                                 const KernelFlow& flow, const AdjointEnsemble& adj,
                                 const ControlField& candidate,
                                 const std::vector<ControlField>& probes,
                                 const MPOptions& opts) {
  candidate.validate();
  check_field_shape(e, candidate, "candidate");
  for (const ControlField& probe : probes) {
    probe.validate();
    check_field_shape(e, probe, "probe");
  }
  if (opts.bootstrap < 2)
    fail(ErrorCode::InvalidInput, kStage, "bootstrap needs at least two resamples");
  if (!(opts.tol_multiplier >= 0) || !std::isfinite(opts.tol_multiplier))
    fail(ErrorCode::InvalidInput, kStage, "tolerance multiplier must be finite and nonnegative");

  const GradientField grad = hamiltonian_gradient(m, e, flow, adj);
  const int M = e.atlas.size(), steps = e.grid.steps, k = e.dims.k;
  const double dt = e.grid.dt();
  const int B = opts.bootstrap;
  const int P = static_cast<int>(probes.size());

  MPReport rep;
  rep.cross_skipped = grad.cross_skipped;

  rep.gradient.resize(M);
  double norm_sq = 0.0;
  for (int v = 0; v < M; ++v) {
    rep.gradient[v] = Mat(steps, k);
    for (int j = 0; j < steps; ++j) {
      rep.gradient[v].row(j) = grad.g[v][j].colwise().mean();
      norm_sq += e.atlas.weights[v] * dt * rep.gradient[v].row(j).squaredNorm();
    }
  }
  rep.stationarity_norm = std::sqrt(norm_sq);

  // per-particle probe inner products, integrated over time
  std::vector<std::vector<Vec>> inner(P, std::vector<Vec>(M));
  for (int pr = 0; pr < P; ++pr)
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      Vec s = Vec::Zero(N);
      for (int j = 0; j < steps; ++j) {
        const Mat diff = probes[pr].values(v, e.atlas.labels[v], j, e.grid.node(j),
                                           e.x[v][j]) -
                         e.a[v][j];
        s += dt * (grad.g[v][j].cwiseProduct(diff)).rowwise().sum();
      }
      inner[pr][v] = std::move(s);
    }

  rep.min_inner = 0.0;
  rep.min_probe = -1;
  for (int pr = 0; pr < P; ++pr) {
    double ip = 0.0;
    for (int v = 0; v < M; ++v) ip += e.atlas.weights[v] * inner[pr][v].mean();
    if (rep.min_probe < 0 || ip < rep.min_inner) {
      rep.min_inner = ip;
      rep.min_probe = pr;
    }
  }

  // bootstrap over particles, common resampling for both statistics
  double var_station = 0.0;
  {
    std::vector<std::vector<std::vector<int>>> idx(B,
                                                   std::vector<std::vector<int>>(M));
    for (int b = 0; b < B; ++b)
      for (int v = 0; v < M; ++v) {
        const int N = e.particles(v);
        const RandomStream rs(opts.bootstrap_seed, static_cast<uint32_t>(v),
                              static_cast<uint32_t>(b), kStreamBootstrap);
        idx[b][v].resize(N);
        for (int i = 0; i < N; ++i)
          idx[b][v][i] = std::min(N - 1, static_cast<int>(rs.uniform(i) * N));
      }

    // variance of each mean-table entry across replicates
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      for (int j = 0; j < steps; ++j) {
        for (int c = 0; c < k; ++c) {
          double sum = 0.0, sumsq = 0.0;
          for (int b = 0; b < B; ++b) {
            double mb = 0.0;
            for (int i = 0; i < N; ++i) mb += grad.g[v][j](idx[b][v][i], c);
            mb /= N;
            sum += mb;
            sumsq += mb * mb;
          }
          const double var = std::max(0.0, (sumsq - sum * sum / B) / (B - 1));
          var_station += e.atlas.weights[v] * dt * var;
        }
      }
    }

    if (P > 0) {
      double msum = 0.0, msumsq = 0.0;
      for (int b = 0; b < B; ++b) {
        double mn = 0.0;
        bool first = true;
        for (int pr = 0; pr < P; ++pr) {
          double ip = 0.0;
          for (int v = 0; v < M; ++v) {
            const int N = e.particles(v);
            double mv = 0.0;
            for (int i = 0; i < N; ++i) mv += inner[pr][v](idx[b][v][i]);
            ip += e.atlas.weights[v] * mv / N;
          }
          if (first || ip < mn) mn = ip;
          first = false;
        }
        msum += mn;
        msumsq += mn * mn;
      }
      const double var = std::max(0.0, (msumsq - msum * msum / B) / (B - 1));
      rep.min_inner_tol = opts.tol_multiplier * std::sqrt(var);
    }
  }
  rep.stationarity_stderr = std::sqrt(var_station);
  rep.stationarity_tol = opts.tol_multiplier * rep.stationarity_stderr;
  rep.stationary = rep.stationarity_norm <= rep.stationarity_tol;
  rep.inner_ok = P == 0 || rep.min_inner >= -rep.min_inner_tol;

  if (rep.stationary && rep.inner_ok)
    rep.verdict = "maximum principle holds (empirical)";
  else if (!rep.stationary && !rep.inner_ok)
    rep.verdict = "stationarity and variational inequality failed";
  else if (!rep.stationary)
    rep.verdict = "stationarity failed";
  else
    rep.verdict = "variational inequality failed";
  return rep;
}

nlohmann::json mp_report_to_json(const MPReport& rep) {
  return nlohmann::json{{"stationarity_norm", rep.stationarity_norm},
                        {"stationarity_stderr", rep.stationarity_stderr},
                        {"stationarity_tol", rep.stationarity_tol},
                        {"stationary", rep.stationary},
                        {"min_inner", rep.min_inner},
                        {"min_inner_tol", rep.min_inner_tol},
                        {"min_probe", rep.min_probe},
                        {"inner_ok", rep.inner_ok},
                        {"cross_skipped", rep.cross_skipped},
                        {"verdict", rep.verdict}};
}

OptimizeResult optimize_control(const CoefficientModel& m, const InitialLaw& law,
                                const TypeAtlas& atlas, int particles,
                                const TimeGrid& grid, uint64_t seed,
                                const ControlField& initial, const OptimizeOptions& opts) {
  initial.validate();
  if (initial.kind() != ControlKind::OpenLoop)
    fail(ErrorCode::InvalidInput, kStage, "optimizer updates open-loop tables only");
  if (!initial.atlas().same_as(atlas) || initial.grid().steps != grid.steps ||
      initial.grid().horizon != grid.horizon || initial.dims().k != m.dims().k)
    fail(ErrorCode::InvalidInput, kStage, "initial control does not match the problem");
  if (!(opts.rate > 0) || !std::isfinite(opts.rate))
    fail(ErrorCode::InvalidInput, kStage, "descent rate must be positive and finite");
  if (opts.max_iters < 0 || opts.max_halvings < 0)
    fail(ErrorCode::InvalidInput, kStage, "iteration budget is malformed");

  const int M = atlas.size(), steps = grid.steps;
  const double dt = grid.dt();

  OptimizeResult out;
  ControlField ctrl = initial;
  ctrl.project();

  const auto solve = [&](const ControlField& c) {
    return picard_solve(m, c, law, atlas, particles, grid, seed, opts.picard);
  };
  PicardResult res = solve(ctrl);
  double j = evaluate_cost(m, res.ensemble, res.flow);
  out.j_history.push_back(j);
  const NoiseEnsemble noise = simulate_noise(m, law, atlas, particles, grid, seed);

  for (int it = 1; it <= opts.max_iters; ++it) {
    const AdjointResult adj = solve_adjoint(m, res.ensemble, res.flow, noise, opts.adjoint);
    if (it == 1) out.warning = adj.warning;
    const GradientField grad = hamiltonian_gradient(m, res.ensemble, res.flow, adj.ensemble);
    std::vector<Mat> mean(M);
    for (int v = 0; v < M; ++v) {
      mean[v] = Mat(steps, m.dims().k);
      for (int s = 0; s < steps; ++s) mean[v].row(s) = grad.g[v][s].colwise().mean();
    }

    double rate = opts.rate;
    bool accepted = false;
    ControlField cand = ctrl;
    PicardResult cres;
    double cj = j;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      cand = ctrl;
      for (int v = 0; v < M; ++v) {
        cand.table(v).topRows(steps) -= rate * mean[v];
        cand.table(v).row(steps) = cand.table(v).row(steps - 1);
      }
      cand.project();
      cres = solve(cand);
      cj = evaluate_cost(m, cres.ensemble, cres.flow);
      if (cj <= j + 1e-12 * (1 + std::abs(j))) {
        accepted = true;
        break;
      }
      rate /= 2;
    }
    if (!accepted) {
      if (out.warning.empty())
        out.warning = "line search stalled at iteration " + std::to_string(it);
      break;
    }

    double update_sq = 0.0;
    for (int v = 0; v < M; ++v)
      update_sq +=
          atlas.weights[v] * dt *
          (cand.table(v).topRows(steps) - ctrl.table(v).topRows(steps)).squaredNorm();
    ctrl = std::move(cand);
    res = std::move(cres);
    j = cj;
    out.j_history.push_back(j);
    out.iterations = it;
    if (std::sqrt(update_sq) < opts.tol) {
      out.converged = true;
      break;
    }
  }

  const AdjointResult adj = solve_adjoint(m, res.ensemble, res.flow, noise, opts.adjoint);
  std::vector<ControlField> probes;
  probes.reserve(opts.mp_probes);
  for (int i = 0; i < opts.mp_probes; ++i)
    probes.push_back(random_open_loop(initial.dims(), grid, atlas, initial.box(), seed, i,
                                      opts.probe_amplitude));
  out.report = check_maximum_principle(m, res.ensemble, res.flow, adj.ensemble, ctrl,
                                       probes, opts.mp);
  out.control = std::move(ctrl);
  return out;
}

namespace {

// One draw per call, sequential indices on one stream.
struct DrawCursor {
  RandomStream rs;
  uint64_t at = 0;
  explicit DrawCursor(const RandomStream& stream) : rs(stream) {}
  double normal() { return rs.normal(at++); }
  double uniform() { return rs.uniform(at++); }
};

StatePoint random_point(DrawCursor& cur, const ComponentDims& dims, double u, double t,
                        double amp) {
  StatePoint pt;
  pt.t = t;
  pt.u = u;
  pt.x = Vec(dims.n);
  pt.y = Vec(dims.l);
  pt.z = Mat(dims.l, dims.d);
  pt.a = Vec(dims.k);
  for (int i = 0; i < dims.n; ++i) pt.x(i) = amp * cur.normal();
  for (int i = 0; i < dims.l; ++i) pt.y(i) = amp * cur.normal();
  for (int i = 0; i < dims.l; ++i)
    for (int jd = 0; jd < dims.d; ++jd) pt.z(i, jd) = amp * cur.normal();
  for (int i = 0; i < dims.k; ++i) pt.a(i) = amp * cur.normal();
  return pt;
}

AggregateValues random_aggs(DrawCursor& cur, const std::vector<MeasureChannel>& chans,
                            double amp) {
  AggregateValues agg(chans.size());
  for (std::size_t c = 0; c < chans.size(); ++c) {
    agg[c] = Vec(chans[c].dim);
    for (int i = 0; i < chans[c].dim; ++i) agg[c](i) = amp * cur.normal();
  }
  return agg;
}

}  // namespace

CertificateReport verify_convexity_certificate(
    const CoefficientModel& m, const InitialLaw& law, const TypeAtlas& atlas,
    int particles, const TimeGrid& grid, uint64_t seed, const ControlField& candidate,
    const std::vector<ControlField>& rivals, const VerifyOptions& opts) {
  candidate.validate();
  if (!(opts.stderr_multiplier >= 0) || !std::isfinite(opts.stderr_multiplier))
    fail(ErrorCode::InvalidInput, kStage, "stderr multiplier must be finite and nonnegative");
  if (opts.convexity_samples < 0)
    fail(ErrorCode::InvalidInput, kStage, "convexity sample count must be nonnegative");

  CertificateReport rep;
  const PicardResult res =
      picard_solve(m, candidate, law, atlas, particles, grid, seed, opts.picard);
  const std::vector<Vec> base_costs = per_particle_costs(m, res.ensemble, res.flow);
  for (int v = 0; v < atlas.size(); ++v)
    rep.candidate_cost += atlas.weights[v] * base_costs[v].mean();

  const NoiseEnsemble noise = simulate_noise(m, law, atlas, particles, grid, seed);
  const AdjointResult adj = solve_adjoint(m, res.ensemble, res.flow, noise, opts.adjoint);
  rep.mp = check_maximum_principle(m, res.ensemble, res.flow, adj.ensemble, candidate,
                                   rivals, opts.mp);

  bool all_beaten = true;
  for (const ControlField& rival : rivals) {
    const PicardResult rres =
        picard_solve(m, rival, law, atlas, particles, grid, seed, opts.picard);
    const std::vector<Vec> rival_costs = per_particle_costs(m, rres.ensemble, rres.flow);
    RivalReport rr;
    double var_sum = 0.0;
    for (int v = 0; v < atlas.size(); ++v) {
      const Vec diff = rival_costs[v] - base_costs[v];
      const int nv = static_cast<int>(diff.size());
      rr.cost += atlas.weights[v] * rival_costs[v].mean();
      rr.margin += atlas.weights[v] * diff.mean();
      const double mean = diff.mean();
      const double var =
          nv > 1 ? (diff.array() - mean).square().sum() / (nv - 1) : 0.0;
      var_sum += atlas.weights[v] * atlas.weights[v] * var / nv;
    }
    rr.margin_stderr = std::sqrt(var_sum);
    rr.beaten = rr.margin >= -opts.stderr_multiplier * rr.margin_stderr;
    all_beaten = all_beaten && rr.beaten;
    rep.rivals.push_back(rr);
  }

  rep.convex_declared = m.declares_convex();
  if (rep.convex_declared && opts.convexity_samples > 0) {
    const ComponentDims& dims = m.dims();
    const double amp = opts.convexity_amplitude;
    const double slack = 1e-9;
    for (int s = 0; s < opts.convexity_samples; ++s) {
      DrawCursor cur(RandomStream(opts.convexity_seed, 0, static_cast<uint32_t>(s),
                                  kStreamRival));
      const double u = atlas.labels[s % atlas.size()];
      const double t = cur.uniform() * grid.horizon;
      const StatePoint p1 = random_point(cur, dims, u, t, amp);
      const StatePoint p2 = random_point(cur, dims, u, t, amp);
      const AggregateValues a1 = random_aggs(cur, m.channels(), amp);
      const AggregateValues a2 = random_aggs(cur, m.channels(), amp);
      Vec pv(dims.l), qv(dims.n);
      Mat kv(dims.n, dims.d);
      for (int i = 0; i < dims.l; ++i) pv(i) = amp * cur.normal();
      for (int i = 0; i < dims.n; ++i) qv(i) = amp * cur.normal();
      for (int i = 0; i < dims.n; ++i)
        for (int jd = 0; jd < dims.d; ++jd) kv(i, jd) = amp * cur.normal();
      const Vec kflat = flatten_rows(kv);

      // Hamiltonian gradient inequality at (p1, a1)
      {
        const double h1 = hamiltonian(m, p1, a1, pv, qv, kv);
        const double h2 = hamiltonian(m, p2, a2, pv, qv, kv);
        double lin = 0.0;
        for (int blk = 0; blk < 4; ++blk)
          lin += slot_gradient(m, p1, a1, blk, qv, kflat, pv)
                     .dot(state_block(p1, blk) - state_block(p2, blk));
        for (std::size_t c = 0; c < m.channels().size(); ++c)
          lin += slot_aggregate_gradient(m, p1, a1, static_cast<int>(c), qv, kflat, pv)
                     .dot(a1[c] - a2[c]);
        ++rep.convexity_checked;
        if (h1 - h2 > lin + slack * (1 + std::abs(h1) + std::abs(h2) + std::abs(lin)))
          ++rep.convexity_failures;
      }
      // terminal cost gradient inequality
      {
        const AggregateValues t1 = random_aggs(cur, m.terminal_channels(), amp);
        const AggregateValues t2 = random_aggs(cur, m.terminal_channels(), amp);
        const double h1 = m.terminal_cost(u, p1.x, t1);
        const double h2 = m.terminal_cost(u, p2.x, t2);
        double lin = m.terminal_partial_x(TerminalMap::Cost, u, p1.x, t1)
                         .row(0)
                         .dot(p1.x - p2.x);
        for (std::size_t c = 0; c < m.terminal_channels().size(); ++c)
          lin += m.terminal_aggregate_sensitivity(TerminalMap::Cost, static_cast<int>(c),
                                                  u, p1.x, t1)
                     .row(0)
                     .dot(t1[c] - t2[c]);
        ++rep.convexity_checked;
        if (h1 - h2 > lin + slack * (1 + std::abs(h1) + std::abs(h2) + std::abs(lin)))
          ++rep.convexity_failures;

        // terminal condition must be affine in the same variables
        Vec gap = m.terminal_condition(u, p1.x, t1) - m.terminal_condition(u, p2.x, t2);
        gap -= m.terminal_partial_x(TerminalMap::Condition, u, p1.x, t1) * (p1.x - p2.x);
        for (std::size_t c = 0; c < m.terminal_channels().size(); ++c)
          gap -= m.terminal_aggregate_sensitivity(TerminalMap::Condition,
                                                  static_cast<int>(c), u, p1.x, t1) *
                 (t1[c] - t2[c]);
        ++rep.convexity_checked;
        if (gap.lpNorm<Eigen::Infinity>() > slack * (1 + amp)) ++rep.convexity_failures;
      }
      // initial cost gradient inequality
      {
        const double g1 = m.initial_cost(u, p1.y);
        const double g2 = m.initial_cost(u, p2.y);
        const double lin = m.initial_cost_gradient(u, p1.y).dot(p1.y - p2.y);
        ++rep.convexity_checked;
        if (g1 - g2 > lin + slack * (1 + std::abs(g1) + std::abs(g2) + std::abs(lin)))
          ++rep.convexity_failures;
      }
    }
  }

  rep.verified = rep.mp.stationary && rep.mp.inner_ok && all_beaten &&
                 rep.convex_declared && rep.convexity_failures == 0;
  if (rep.verified)
    rep.verdict = "verified (empirical)";
  else if (!rep.convex_declared)
    rep.verdict = "convexity not declared by the model";
  else if (!rep.mp.stationary || !rep.mp.inner_ok)
    rep.verdict = "maximum principle failed";
  else if (!all_beaten)
    rep.verdict = "a rival beat the candidate beyond the noise allowance";
  else
    rep.verdict = "convexity spot check failed";
  return rep;
}

PairingIdentity check_pairing_identity(const CoefficientModel& m,
                                       const TrajectoryEnsemble& e, const KernelFlow& flow,
                                       const AdjointEnsemble& adj,
                                       const VariationalEnsemble& var,
                                       const ControlField& direction) {
  detail::check_ensemble(m, e, kStage);
  detail::check_flow(e, flow, kStage);
  check_adjoint_shape(e, adj);
  direction.validate();
  if (direction.kind() != ControlKind::OpenLoop)
    fail(ErrorCode::InvalidInput, kStage, "pairing direction must be an open-loop field");
  check_field_shape(e, direction, "direction");
  if (!var.atlas.same_as(e.atlas) || var.grid.steps != e.grid.steps)
    fail(ErrorCode::InvalidInput, kStage, "variational ensemble does not match trajectories");

  const int M = e.atlas.size(), steps = e.grid.steps;
  const int n = e.dims.n, l = e.dims.l, d = e.dims.d;
  const double dt = e.grid.dt();
  const auto aggs = detail::flow_aggregates(m, flow, e.grid);
  const auto tagg = terminal_flow_aggregates(m, flow);
  const auto& chans = m.channels();
  const bool has_chans = !chans.empty();

  PairingIdentity out;

  // initial/terminal side
  const auto atd = terminal_dir_aggregate(m, e, var.x);
  for (int v = 0; v < M; ++v) {
    const int N = e.particles(v);
    const double u = e.atlas.labels[v];
    double acc = 0.0;
    for (int p = 0; p < N; ++p) {
      acc += m.initial_cost_gradient(u, e.y[v][0].row(p).transpose())
                 .dot(var.y[v][0].row(p).transpose());
      const Vec x = e.x[v][steps].row(p).transpose();
      acc += m.terminal_partial_x(TerminalMap::Cost, u, x, tagg[v])
                 .row(0)
                 .dot(var.x[v][steps].row(p).transpose());
      for (std::size_t c = 0; c < atd.size(); ++c)
        acc += m.terminal_aggregate_sensitivity(TerminalMap::Cost, static_cast<int>(c), u,
                                                x, tagg[v])
                   .row(0)
                   .dot(atd[c][v]);
    }
    out.lhs += e.atlas.weights[v] * acc / N;
  }

  // running side, transcribed at the left node
  const auto scost = has_chans ? swapped_running(m, e, aggs, nullptr)
                               : std::vector<std::vector<std::vector<Vec>>>{};
  for (int j = 0; j < steps; ++j) {
    const double t = e.grid.node(j);
    std::vector<std::vector<Vec>> api;
    if (has_chans)
      api = dir_node_aggregate(m, e, j, nullptr, nullptr, nullptr, &direction, kMaskA);
    for (int v = 0; v < M; ++v) {
      const int N = e.particles(v);
      const Vec pi = direction.table(v).row(j).transpose();
      std::vector<Vec> da;
      if (has_chans) {
        da.resize(chans.size());
        for (std::size_t c = 0; c < chans.size(); ++c) da[c] = api[c][v];
      }
      double acc = 0.0;
      for (int p = 0; p < N; ++p) {
        const StatePoint pt = point_at(e, v, j, p, t);
        const Vec zero_n = Vec::Zero(n), zero_l = Vec::Zero(l),
                  zero_z = Vec::Zero(l * d);
        const Vec bdir =
            slot_direction(m, Coefficient::Drift, pt, aggs[j][v], zero_n, zero_l, zero_z,
                           pi, da);
        const Vec sdir = slot_direction(m, Coefficient::Diffusion, pt, aggs[j][v], zero_n,
                                        zero_l, zero_z, pi, da);
        const Vec fdir = slot_direction(m, Coefficient::Driver, pt, aggs[j][v], zero_n,
                                        zero_l, zero_z, pi, da);
        acc += adj.q[v][j].row(p).dot(bdir);
        acc += adj.k[v][j].row(p).dot(sdir);
        acc -= adj.p[v][j].row(p).dot(fdir);

        Vec lx = m.partial(Coefficient::RunningCost, 0, pt, aggs[j][v]).row(0).transpose();
        Vec ly = m.partial(Coefficient::RunningCost, 1, pt, aggs[j][v]).row(0).transpose();
        Vec lz = m.partial(Coefficient::RunningCost, 2, pt, aggs[j][v]).row(0).transpose();
        if (has_chans) {
          lx += measure_cross_block(chans, scost[j], v, pt, 0, n);
          ly += measure_cross_block(chans, scost[j], v, pt, 1, l);
          lz += measure_cross_block(chans, scost[j], v, pt, 2, l * d);
        }
        acc -= lx.dot(var.x[v][j].row(p).transpose());
        acc -= ly.dot(var.y[v][j].row(p).transpose());
        acc -= lz.dot(var.z[v][j].row(p).transpose());
      }
      out.rhs += e.atlas.weights[v] * dt * acc / N;
    }
  }
  out.rel_gap = std::abs(out.lhs - out.rhs) /
                std::max({std::abs(out.lhs), std::abs(out.rhs), 1e-12});
  return out;
}

GateauxTable gateaux_check(const CoefficientModel& m, const InitialLaw& law,
                           const TypeAtlas& atlas, int particles, const TimeGrid& grid,
                           uint64_t seed, const ControlField& control,
                           const ControlField& direction, const GateauxOptions& opts) {
  control.validate();
  direction.validate();
  if (control.kind() != ControlKind::OpenLoop ||
      direction.kind() != ControlKind::OpenLoop)
    fail(ErrorCode::InvalidInput, kStage, "finite-difference audit needs open-loop fields");
  if (opts.epsilons.empty())
    fail(ErrorCode::InvalidInput, kStage, "no epsilons to audit");
  for (double eps : opts.epsilons)
    if (!(eps > 0) || !std::isfinite(eps))
      fail(ErrorCode::InvalidInput, kStage, "epsilons must be positive and finite");

  const PicardResult base =
      picard_solve(m, control, law, atlas, particles, grid, seed, opts.picard);
  const NoiseEnsemble noise = simulate_noise(m, law, atlas, particles, grid, seed);
  const VariationalResult var =
      solve_variational(m, base.ensemble, base.flow, noise, direction, opts.variational);
  const AdjointResult adj = solve_adjoint(m, base.ensemble, base.flow, noise, opts.adjoint);
  const GradientField grad =
      hamiltonian_gradient(m, base.ensemble, base.flow, adj.ensemble);

  GateauxTable out;
  const int M = atlas.size(), steps = grid.steps;
  const double dt = grid.dt();
  for (int v = 0; v < M; ++v)
    for (int j = 0; j < steps; ++j)
      out.derivative += atlas.weights[v] * dt *
                        (grad.g[v][j] * direction.table(v).row(j).transpose()).mean();
  out.pairing = check_pairing_identity(m, base.ensemble, base.flow, adj.ensemble,
                                       var.ensemble, direction);

  const double j0 = evaluate_cost(m, base.ensemble, base.flow);
  for (double eps : opts.epsilons) {
    ControlField pert = control;
    for (int v = 0; v < M; ++v) pert.table(v) += eps * direction.table(v);
    const PicardResult pres =
        picard_solve(m, pert, law, atlas, particles, grid, seed, opts.picard);

    GateauxRow row;
    row.eps = eps;
    std::vector<std::vector<Mat>> shift(M);
    const auto remainder = [&](const std::vector<std::vector<Mat>>& full,
                               const std::vector<std::vector<Mat>>& lin,
                               const std::vector<std::vector<Mat>>& prime) {
      for (int v = 0; v < M; ++v) {
        shift[v].resize(steps + 1);
        for (int j = 0; j <= steps; ++j) shift[v][j] = lin[v][j] + eps * prime[v][j];
      }
      return detail::stack_distance(atlas, steps, full, shift) / eps;
    };
    row.x_err = remainder(pres.ensemble.x, base.ensemble.x, var.ensemble.x);
    row.y_err = remainder(pres.ensemble.y, base.ensemble.y, var.ensemble.y);
    row.z_err = remainder(pres.ensemble.z, base.ensemble.z, var.ensemble.z);
    row.cost_slope = (evaluate_cost(m, pres.ensemble, pres.flow) - j0) / eps;
    row.pairing_gap = std::abs(row.cost_slope - out.derivative);
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace hmf
