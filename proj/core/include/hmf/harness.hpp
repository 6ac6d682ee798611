#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <utility>
#include <vector>

#include "hmf/conditions.hpp"
#include "hmf/control.hpp"
#include "hmf/model.hpp"
#include "hmf/solver.hpp"
#include "hmf/types.hpp"

namespace hmf {

// A fully resolved run description: one scenario file determines one run.
// Parsing fills every optional field with its documented default, so two
// files that resolve to the same scenario hash identically regardless of key
// order, comments, or whether defaults are spelled out.
struct Scenario {
  std::string family;
  ModelParams params;  // horizon is kept in sync with grid.horizon
  AtlasSpec atlas;
  TimeGrid grid{1.0, 1};
  int particles = 1;
  uint64_t seed = 1;
  // output directory; may be empty, in which case the CLI requires --out
  std::string out_dir;

  InitialLaw law;
  ControlKind control_kind = ControlKind::OpenLoop;
  Vec control_lo, control_hi;  // empty = unconstrained

  PicardOptions picard;
  AdjointOptions adjoint;
  MPOptions mp;
  OptimizeOptions optimize;  // nested picard/adjoint/mp mirror the above
  VerifyOptions verify;
  int verify_rivals = 20;  // random rivals drawn when none are supplied

  // optional [sheet] override used by `check` in place of the model sheet
  bool has_sheet = false;
  ConstantSheet sheet;

  // FNV-1a over the sorted canonical key=value lines of the resolved
  // scenario. The output directory is excluded: it never affects results.
  uint64_t hash() const;

  std::unique_ptr<CoefficientModel> build_model() const;
  TypeAtlas build_atlas() const;
  ControlBox box() const;
  // law with empty center/spread widened to zero vectors of the right size
  InitialLaw resolved_law(const ComponentDims& dims) const;
  // zero field of the configured kind, clamped into the box
  ControlField initial_control(const ComponentDims& dims) const;
};

// Strict parser for the scenario format: [section] headers and key = value
// lines, values are numbers, booleans, quoted strings, or numeric arrays.
// Unknown sections or keys, duplicate keys, and malformed lines are rejected
// with origin:line:column messages; missing required fields are named as
// section.key. [model.params] is an open numeric table forwarded verbatim.
Scenario parse_scenario(const std::string& text, const std::string& origin = "scenario");
Scenario load_scenario(const std::string& path);

struct RunManifest {
  std::string command;
  std::string code_version;
  uint64_t scenario_hash = 0;
  uint64_t seed = 0;
  // wall-clock stamps and stage timings; excluded from determinism
  // comparisons, everything else in the output directory is byte-stable
  std::string started_at;
  std::string finished_at;
  std::vector<std::pair<std::string, double>> stage_seconds;
  std::vector<std::string> outputs;
};

nlohmann::json manifest_to_json(const RunManifest& manifest);

struct BenchmarkLqOptions {
  int particles = 2000;
  int steps = 100;
  uint64_t seed = 7;
  int rivals = 20;
};

// Desk-scale acceptance driver for the decoupled LQ problem: certify on the
// reference sheets, solve at the zero control against the closed-form cost,
// optimize against the simulated closed-form optimum, then the maximum
// principle and rival certificates at the optimizer's iterate. The report
// carries per-stage pass flags plus a noise-floor annotation when the Monte
// Carlo stderr alone exceeds a failed band. No timestamps: reruns with equal
// options produce identical reports.
nlohmann::json benchmark_lq(const BenchmarkLqOptions& opts = {});

// Subcommands: check | solve | optimize | verify | benchmark-lq. Exit status
// 0 on success, 1 on validation errors, 2 on solver non-convergence, 3 on
// anything else; failures leave an error.json {stage, code, message} in the
// output directory when one is known.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

}  // namespace hmf
