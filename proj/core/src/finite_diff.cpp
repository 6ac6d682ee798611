#include "hmf/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hmf/rng.hpp"

namespace hmf {

namespace {

constexpr const char* kStage = "audit";
constexpr uint32_t kStreamAudit = 7;

const char* block_name(int block) {
  switch (block) {
    case 0: return "x";
    case 1: return "y";
    case 2: return "z";
    default: return "a";
  }
}

const char* marginal_name(int block) {
  switch (block) {
    case 0: return "P1";
    case 1: return "P2";
    case 2: return "P3";
    default: return "P4";
  }
}

Vec coeff_value(const CoefficientModel& m, Coefficient c, const StatePoint& p,
                const AggregateValues& agg) {
  switch (c) {
    case Coefficient::Drift: return m.drift(p, agg);
    case Coefficient::Diffusion: {
      const Mat s = m.diffusion(p, agg);
      Vec v(s.size());
      const int d = static_cast<int>(s.cols());
      for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < d; ++j) v(i * d + j) = s(i, j);
      return v;
    }
    case Coefficient::Driver: return m.driver(p, agg);
    case Coefficient::RunningCost: {
      Vec v(1);
      v(0) = m.running_cost(p, agg);
      return v;
    }
  }
  return Vec();
}

void set_block(StatePoint& p, int block, const Vec& v) {
  switch (block) {
    case 0: p.x = v; break;
    case 1: p.y = v; break;
    case 2: {
      const int d = static_cast<int>(p.z.cols());
      for (int i = 0; i < p.z.rows(); ++i)
        for (int j = 0; j < d; ++j) p.z(i, j) = v(i * d + j);
      break;
    }
    default: p.a = v; break;
  }
}

// Audit points stay away from the origin (each coordinate is
// sign * (0.5 + U[0,1])) so quotients and slope ratios are well scaled.
StatePoint random_state(const ComponentDims& dims, const TypeAtlas& atlas, double t,
                        uint64_t seed, int index) {
  const int type = index % atlas.size();
  StatePoint p = zero_state(dims, t, atlas.labels[type]);
  RandomStream st(seed, 0, static_cast<uint32_t>(index), kStreamAudit);
  uint64_t at = 0;
  auto draw = [&]() {
    const double sign = st.uniform(at++) < 0.5 ? -1.0 : 1.0;
    return sign * (0.5 + st.uniform(at++));
  };
  for (int i = 0; i < dims.n; ++i) p.x(i) = draw();
  for (int i = 0; i < dims.l; ++i) p.y(i) = draw();
  for (int i = 0; i < dims.l; ++i)
    for (int j = 0; j < dims.d; ++j) p.z(i, j) = draw();
  for (int i = 0; i < dims.k; ++i) p.a(i) = draw();
  return p;
}

int row_column(const MeasureKernel& kernel, int block, int coord) {
  const int target = kernel.dims.offset(block) + coord;
  const std::vector<int> cols = mask_columns(kernel.dims, kernel.mask);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == target) return static_cast<int>(i);
  }
  fail(ErrorCode::Internal, kStage, "perturbed block is outside the kernel mask");
}

void check_ladder(const std::vector<double>& ladder, const char* what) {
  if (ladder.empty()) {
    fail(ErrorCode::InvalidInput, kStage, std::string(what) + " ladder is empty");
  }
  for (double v : ladder) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::InvalidInput, kStage, std::string(what) + " ladder must be positive");
    }
  }
}

}  // namespace

DerivativeAudit finite_diff_check(const CoefficientModel& m, const MeasureKernel& kernel,
                                  double t, uint64_t seed, int points,
                                  const std::vector<double>& eps_ladder,
                                  const std::vector<double>& delta_ladder) {
  if (points < 1) fail(ErrorCode::InvalidInput, kStage, "need at least one audit point");
  check_ladder(eps_ladder, "eps");
  check_ladder(delta_ladder, "delta");

  const ComponentDims& dims = m.dims();
  const int M = kernel.atlas.size();
  const int E = static_cast<int>(eps_ladder.size());
  const auto aggs = compute_aggregates(m, kernel, t);
  const MeasureKernel xk = project(kernel, kMaskX);
  const auto taggs = compute_terminal_aggregates(m, xk);

  DerivativeAudit audit;
  audit.points = points;

  auto note = [&](const std::string& key, int rung, double rel) {
    auto& rungs = audit.classical.emplace(key, std::vector<double>(E, 0.0)).first->second;
    rungs[rung] = std::max(rungs[rung], rel);
  };

  const Coefficient kCoeffs[] = {Coefficient::Drift, Coefficient::Diffusion,
                                 Coefficient::Driver, Coefficient::RunningCost};

  for (int pt = 0; pt < points; ++pt) {
    const int type = pt % M;
    const double u = kernel.atlas.labels[type];
    const StatePoint p = random_state(dims, kernel.atlas, t, seed, pt);
    const AggregateValues& agg = aggs[type];
    const AggregateValues& tagg = taggs[type];

    for (Coefficient c : kCoeffs) {
      if (coefficient_rows(dims, c) == 0) continue;
      for (int block = 0; block < 4; ++block) {
        const int bd = dims.block_dim(block);
        if (bd == 0) continue;
        Mat an;
        try {
          an = eval_partial(m, c, block, p, agg);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::UnsupportedDerivative) {
            ++audit.skipped_unsupported;
            continue;
          }
          throw;
        }
        for (int r = 0; r < E; ++r) {
          const double eps = eps_ladder[r];
          Mat fd(an.rows(), bd);
          for (int coord = 0; coord < bd; ++coord) {
            StatePoint hi = p, lo = p;
            bump_state(hi, block, coord, eps);
            bump_state(lo, block, coord, -eps);
            fd.col(coord) =
                (coeff_value(m, c, hi, agg) - coeff_value(m, c, lo, agg)) / (2.0 * eps);
          }
          const double rel = (fd - an).cwiseAbs().maxCoeff() /
                             std::max(1.0, an.cwiseAbs().maxCoeff());
          note(std::string(coefficient_name(c)) + "." + block_name(block), r, rel);
        }
      }
    }

    // terminal maps in x and the initial cost in y
    for (TerminalMap which : {TerminalMap::Condition, TerminalMap::Cost}) {
      Mat an;
      try {
        an = eval_terminal_partial_x(m, which, u, p.x, tagg);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::UnsupportedDerivative) {
          ++audit.skipped_unsupported;
          continue;
        }
        throw;
      }
      auto value = [&](const Vec& x2) -> Vec {
        if (which == TerminalMap::Condition) return m.terminal_condition(u, x2, tagg);
        Vec v(1);
        v(0) = m.terminal_cost(u, x2, tagg);
        return v;
      };
      for (int r = 0; r < E; ++r) {
        const double eps = eps_ladder[r];
        Mat fd(an.rows(), dims.n);
        for (int coord = 0; coord < dims.n; ++coord) {
          Vec hi = p.x, lo = p.x;
          hi(coord) += eps;
          lo(coord) -= eps;
          fd.col(coord) = (value(hi) - value(lo)) / (2.0 * eps);
        }
        const double rel =
            (fd - an).cwiseAbs().maxCoeff() / std::max(1.0, an.cwiseAbs().maxCoeff());
        note(which == TerminalMap::Condition ? "G.x" : "h.x", r, rel);
      }
    }
    if (dims.l > 0) {
      const Vec gy = m.initial_cost_gradient(u, p.y);
      for (int r = 0; r < E; ++r) {
        const double eps = eps_ladder[r];
        Vec fd(dims.l);
        for (int coord = 0; coord < dims.l; ++coord) {
          Vec hi = p.y, lo = p.y;
          hi(coord) += eps;
          lo(coord) -= eps;
          fd(coord) = (m.initial_cost(u, hi) - m.initial_cost(u, lo)) / (2.0 * eps);
        }
        const double rel =
            (fd - gy).cwiseAbs().maxCoeff() / std::max(1.0, gy.cwiseAbs().maxCoeff());
        note("g.y", r, rel);
      }
    }
  }

  // Measure-derivative slope audit: shift one particle coordinate and compare
  // the induced coefficient move against the predicted first-order shift.
  unsigned running_need = 0;
  for (const auto& ch : m.channels()) running_need |= ch.arg_mask;
  const int probes = std::min(3, M * kernel.clouds[0].size());
  for (int s = 0; s < (running_need ? probes : 0); ++s) {
    const int obs_index = 20000 + s;
    const StatePoint obs = random_state(dims, kernel.atlas, t, seed, obs_index);
    const AggregateValues& agg = aggs[obs_index % M];
    const int v = s % M;
    const int particle = s % kernel.clouds[v].size();
    const double scale = kernel.atlas.weights[v] * kernel.clouds[v].weights(particle);
    const StatePoint sample = state_from_row(kernel, v, particle, t);
    for (int block = 0; block < 4; ++block) {
      if (!(running_need & block_mask(block)) || dims.block_dim(block) == 0) continue;
      const int coord = s % dims.block_dim(block);
      const int col = row_column(kernel, block, coord);
      for (Coefficient c : kCoeffs) {
        Mat deriv;
        try {
          deriv = eval_measure_derivative(m, c, obs, agg, block, sample);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::UnsupportedDerivative) {
            ++audit.skipped_unsupported;
            continue;
          }
          throw;
        }
        const Vec dir = deriv.col(coord) * scale;
        int out_row = 0;
        const double mag = dir.cwiseAbs().maxCoeff(&out_row);
        if (mag < 1e-12) continue;
        const double base = coeff_value(m, c, obs, agg)(out_row);
        // the band is judged at the finest rung only: coarser deltas carry the
        // o(delta) curvature term and are recorded as convergence evidence
        double finest_ratio = 1.0;
        for (double delta : delta_ladder) {
          MeasureKernel pert = kernel;
          pert.clouds[v].points(particle, col) += delta;
          const AggregateValues shifted = aggregates_for_label(m, pert, t, obs.u);
          const double moved = coeff_value(m, c, obs, shifted)(out_row) - base;
          const double ratio = moved / (dir(out_row) * delta);
          audit.slopes.push_back({std::string(coefficient_name(c)) + "." +
                                      marginal_name(block),
                                  delta, ratio});
          finest_ratio = ratio;
        }
        audit.worst_slope_gap =
            std::max(audit.worst_slope_gap, std::abs(finest_ratio - 1.0));
      }
    }
  }

  // terminal-side slope audit on the X marginal
  const int tprobes = m.terminal_channels().empty()
                          ? 0
                          : std::min(3, M * xk.clouds[0].size());
  for (int s = 0; s < tprobes; ++s) {
    const int obs_index = 30000 + s;
    const StatePoint obs = random_state(dims, kernel.atlas, m.horizon(), seed, obs_index);
    const double u = obs.u;
    const AggregateValues& tagg = taggs[obs_index % M];
    const int v = s % M;
    const int particle = s % xk.clouds[v].size();
    const double scale = xk.atlas.weights[v] * xk.clouds[v].weights(particle);
    const StatePoint sample = state_from_row(xk, v, particle, m.horizon());
    const int coord = s % dims.n;
    const int col = row_column(xk, 0, coord);
    for (TerminalMap which : {TerminalMap::Condition, TerminalMap::Cost}) {
      Mat deriv;
      try {
        deriv = eval_terminal_measure_derivative(m, which, u, obs.x, tagg, sample);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::UnsupportedDerivative) {
          ++audit.skipped_unsupported;
          continue;
        }
        throw;
      }
      auto value = [&](const AggregateValues& ta) {
        if (which == TerminalMap::Condition) return m.terminal_condition(u, obs.x, ta);
        Vec one(1);
        one(0) = m.terminal_cost(u, obs.x, ta);
        return one;
      };
      const Vec dir = deriv.col(coord) * scale;
      int out_row = 0;
      const double mag = dir.cwiseAbs().maxCoeff(&out_row);
      if (mag < 1e-12) continue;
      const double base = value(tagg)(out_row);
      double finest_ratio = 1.0;
      for (double delta : delta_ladder) {
        MeasureKernel pert = xk;
        pert.clouds[v].points(particle, col) += delta;
        const AggregateValues shifted = terminal_aggregates_for_label(m, pert, u);
        const double moved = value(shifted)(out_row) - base;
        const double ratio = moved / (dir(out_row) * delta);
        audit.slopes.push_back(
            {std::string(which == TerminalMap::Condition ? "G" : "h") + ".P1", delta,
             ratio});
        finest_ratio = ratio;
      }
      audit.worst_slope_gap =
          std::max(audit.worst_slope_gap, std::abs(finest_ratio - 1.0));
    }
  }

  for (const auto& [key, rungs] : audit.classical) {
    audit.max_classical_rel = std::max(audit.max_classical_rel, rungs.back());
  }
  return audit;
}

SheetAudit audit_sheet(const CoefficientModel& m, const MeasureKernel& kernel, double t,
                       uint64_t seed, int pairs) {
  if (pairs < 1) fail(ErrorCode::InvalidInput, kStage, "need at least one audit pair");
  const ComponentDims& dims = m.dims();
  const int M = kernel.atlas.size();
  const auto aggs = compute_aggregates(m, kernel, t);
  const MeasureKernel xk = project(kernel, kMaskX);
  const auto taggs = compute_terminal_aggregates(m, xk);
  const ConstantSheet& sheet = m.sheet();

  SheetAudit audit;
  audit.pairs = pairs;

  auto note = [&](const char* key, double margin) {
    auto [it, fresh] = audit.margins.emplace(key, margin);
    if (!fresh) it->second = std::max(it->second, margin);
  };

  struct LipProbe {
    const char* key;
    Coefficient c;
    int block;
    double bound;
  };
  const LipProbe probes[] = {
      {"rho1", Coefficient::Drift, 1, sheet.rho1},
      {"rho2", Coefficient::Drift, 2, sheet.rho2},
      {"rho6", Coefficient::Drift, 3, sheet.rho6},
      {"mu1", Coefficient::Driver, 0, sheet.mu1},
      {"mu2", Coefficient::Driver, 2, sheet.mu2},
      {"mu4", Coefficient::Driver, 3, sheet.mu4},
      {"w1", Coefficient::Diffusion, 0, sheet.w1},
      {"w2", Coefficient::Diffusion, 1, sheet.w2},
      {"w3", Coefficient::Diffusion, 2, sheet.w3},
      {"w5", Coefficient::Diffusion, 3, sheet.w5},
  };

  for (int i = 0; i < pairs; ++i) {
    const int type = i % M;
    const double u = kernel.atlas.labels[type];
    StatePoint pa = random_state(dims, kernel.atlas, t, seed, 2 * i);
    StatePoint pb = random_state(dims, kernel.atlas, t, seed, 2 * i + 1);
    pa.u = u;
    pb.u = u;
    const AggregateValues& agg = aggs[type];
    const AggregateValues& tagg = taggs[type];

    for (const LipProbe& probe : probes) {
      if (dims.block_dim(probe.block) == 0) continue;
      StatePoint q = pa;
      set_block(q, probe.block, state_block(pb, probe.block));
      const double den =
          (state_block(pa, probe.block) - state_block(q, probe.block)).norm();
      if (den < 1e-12) continue;
      const Vec va = coeff_value(m, probe.c, pa, agg);
      const Vec vb = coeff_value(m, probe.c, q, agg);
      note(probe.key, (va - vb).norm() / den - probe.bound);
    }

    if ((pa.x - pb.x).norm() > 1e-12) {
      const Vec ga = m.terminal_condition(u, pa.x, tagg);
      const Vec gb = m.terminal_condition(u, pb.x, tagg);
      note("rho4", (ga - gb).norm() / (pa.x - pb.x).norm() - sheet.rho4);

      // one-sided slope of b in x
      StatePoint q = pa;
      q.x = pb.x;
      const Vec dx = pa.x - q.x;
      const Vec da = m.drift(pa, agg) - m.drift(q, agg);
      note("lambda1", da.dot(dx) / dx.squaredNorm() - sheet.lambda1);
    }
    if ((pa.y - pb.y).norm() > 1e-12) {
      StatePoint q = pa;
      q.y = pb.y;
      const Vec dy = pa.y - q.y;
      const Vec df = m.driver(pa, agg) - m.driver(q, agg);
      note("lambda2", df.dot(dy) / dy.squaredNorm() - sheet.lambda2);
    }
  }

  audit.max_violation = -std::numeric_limits<double>::infinity();
  for (const auto& [key, margin] : audit.margins) {
    audit.max_violation = std::max(audit.max_violation, margin);
  }
  if (audit.margins.empty()) audit.max_violation = 0.0;
  return audit;
}

}  // namespace hmf
