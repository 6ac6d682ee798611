#include "hmf/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>

#include "hmf/common.hpp"
#include "hmf/models.hpp"

#ifndef HMF_VERSION
#define HMF_VERSION "0.1.0"
#endif

namespace hmf {
namespace {

using json = nlohmann::json;

const char kStage[] = "harness";

// ---------------------------------------------------------------- scenario

// One parsed `key = value` line. Values are numbers, integers, booleans,
// quoted strings, or single-line numeric arrays; nothing else.
struct RawValue {
  enum class Kind { Number, Integer, Boolean, String, Array };
  Kind kind = Kind::Number;
  double num = 0.0;
  long long inum = 0;
  bool flag = false;
  std::string str;
  std::vector<double> arr;
  int line = 1, col = 1;  // of the value, for type errors
};

struct Entry {
  std::string section, key;
  int line = 1, key_col = 1;
  RawValue value;
};

[[noreturn]] void parse_fail(const std::string& origin, int line, int col,
                             const std::string& msg) {
  fail(ErrorCode::InvalidSpec, kStage,
       origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

bool space_char(char c) { return c == ' ' || c == '\t'; }

size_t skip_space(const std::string& line, size_t i) {
  while (i < line.size() && space_char(line[i])) ++i;
  return i;
}

struct NumTok {
  bool is_int = false;
  long long ival = 0;
  double dval = 0.0;
};

// Reads one number token starting at i; stops at whitespace, ',', ']', '#'.
// Integers are bare digit strings; everything else must round-trip through
// strtod and be finite.
NumTok read_number(const std::string& line, size_t& i, const std::string& origin,
                   int line_no) {
  const size_t beg = i;
  while (i < line.size() && !space_char(line[i]) && line[i] != ',' && line[i] != ']' &&
         line[i] != '#')
    ++i;
  const std::string tok = line.substr(beg, i - beg);
  if (tok.empty()) parse_fail(origin, line_no, static_cast<int>(beg) + 1, "expected a number");

  bool integral = true;
  size_t p = (tok[0] == '+' || tok[0] == '-') ? 1 : 0;
  if (p == tok.size()) integral = false;
  for (size_t q = p; q < tok.size(); ++q)
    if (!std::isdigit(static_cast<unsigned char>(tok[q]))) {
      integral = false;
      break;
    }

  NumTok out;
  errno = 0;
  char* end = nullptr;
  if (integral) {
    out.ival = std::strtoll(tok.c_str(), &end, 10);
    if (errno == ERANGE || end != tok.c_str() + tok.size())
      parse_fail(origin, line_no, static_cast<int>(beg) + 1,
                 "malformed number '" + tok + "'");
    out.is_int = true;
    out.dval = static_cast<double>(out.ival);
  } else {
    out.dval = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(out.dval))
      parse_fail(origin, line_no, static_cast<int>(beg) + 1,
                 "malformed number '" + tok + "'");
  }
  return out;
}

const std::set<std::string>& known_sections() {
  static const std::set<std::string> s = {"model",   "model.params", "atlas",
                                          "grid",    "run",          "law",
                                          "control", "picard",       "regression",
                                          "adjoint", "mp",           "optimize",
                                          "verify",  "sheet"};
  return s;
}

std::vector<Entry> tokenize(const std::string& text, const std::string& origin) {
  std::vector<Entry> out;
  std::set<std::string> seen_sections, seen_keys;
  std::string section;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t i = skip_space(line, 0);
    if (i >= line.size() || line[i] == '#') continue;

    if (line[i] == '[') {
      const int col = static_cast<int>(i) + 1;
      const size_t close = line.find(']', i);
      if (close == std::string::npos)
        parse_fail(origin, line_no, col, "unterminated section header");
      const std::string name = line.substr(i + 1, close - i - 1);
      for (char c : name)
        if (!ident_char(c) && c != '.')
          parse_fail(origin, line_no, col, "malformed section name '" + name + "'");
      if (!known_sections().count(name))
        parse_fail(origin, line_no, col, "unknown section [" + name + "]");
      if (!seen_sections.insert(name).second)
        parse_fail(origin, line_no, col, "duplicate section [" + name + "]");
      i = skip_space(line, close + 1);
      if (i < line.size() && line[i] != '#')
        parse_fail(origin, line_no, static_cast<int>(i) + 1,
                   "unexpected text after section header");
      section = name;
      continue;
    }

    if (section.empty())
      parse_fail(origin, line_no, static_cast<int>(i) + 1, "key outside of a section");

    const size_t kbeg = i;
    while (i < line.size() && ident_char(line[i])) ++i;
    if (i == kbeg)
      parse_fail(origin, line_no, static_cast<int>(i) + 1, "expected 'key = value'");
    const std::string key = line.substr(kbeg, i - kbeg);
    i = skip_space(line, i);
    if (i >= line.size() || line[i] != '=')
      parse_fail(origin, line_no, static_cast<int>(i) + 1,
                 "expected '=' after key '" + key + "'");
    i = skip_space(line, i + 1);
    if (i >= line.size() || line[i] == '#')
      parse_fail(origin, line_no, static_cast<int>(i) + 1,
                 "missing value for key '" + key + "'");

    RawValue v;
    v.line = line_no;
    v.col = static_cast<int>(i) + 1;
    if (line[i] == '"') {
      ++i;
      std::string s;
      while (i < line.size() && line[i] != '"') {
        if (line[i] == '\\' && i + 1 < line.size()) {
          s += line[i + 1];
          i += 2;
        } else {
          s += line[i++];
        }
      }
      if (i >= line.size()) parse_fail(origin, line_no, v.col, "unterminated string");
      ++i;
      v.kind = RawValue::Kind::String;
      v.str = std::move(s);
    } else if (line[i] == '[') {
      ++i;
      v.kind = RawValue::Kind::Array;
      i = skip_space(line, i);
      if (i < line.size() && line[i] == ']') {
        ++i;
      } else {
        while (true) {
          i = skip_space(line, i);
          v.arr.push_back(read_number(line, i, origin, line_no).dval);
          i = skip_space(line, i);
          if (i < line.size() && line[i] == ',') {
            ++i;
            continue;
          }
          if (i < line.size() && line[i] == ']') {
            ++i;
            break;
          }
          parse_fail(origin, line_no, static_cast<int>(i) + 1, "expected ',' or ']'");
        }
      }
    } else {
      size_t tbeg = i;
      while (i < line.size() && !space_char(line[i]) && line[i] != '#') ++i;
      const std::string tok = line.substr(tbeg, i - tbeg);
      if (tok == "true" || tok == "false") {
        v.kind = RawValue::Kind::Boolean;
        v.flag = (tok == "true");
      } else {
        i = tbeg;
        const NumTok t = read_number(line, i, origin, line_no);
        v.kind = t.is_int ? RawValue::Kind::Integer : RawValue::Kind::Number;
        v.num = t.dval;
        v.inum = t.ival;
      }
    }
    i = skip_space(line, i);
    if (i < line.size() && line[i] != '#')
      parse_fail(origin, line_no, static_cast<int>(i) + 1, "unexpected trailing text");

    const std::string path = section + "." + key;
    if (!seen_keys.insert(path).second)
      parse_fail(origin, line_no, static_cast<int>(kbeg) + 1, "duplicate key " + path);
    out.push_back({section, key, line_no, static_cast<int>(kbeg) + 1, std::move(v)});
  }
  return out;
}

[[noreturn]] void type_fail(const Entry& e, const std::string& origin,
                            const std::string& want) {
  parse_fail(origin, e.value.line, e.value.col,
             "key " + e.section + "." + e.key + ": expected " + want);
}

// want_* extractors: a wrong value kind is a schema error at the value's
// position; numbers accept integer literals, nothing else converts.

double want_number(const Entry& e, const std::string& origin) {
  if (e.value.kind == RawValue::Kind::Number || e.value.kind == RawValue::Kind::Integer)
    return e.value.kind == RawValue::Kind::Integer ? static_cast<double>(e.value.inum)
                                                   : e.value.num;
  type_fail(e, origin, "a number");
}

long long want_int(const Entry& e, const std::string& origin) {
  if (e.value.kind == RawValue::Kind::Integer) return e.value.inum;
  type_fail(e, origin, "an integer");
}

uint64_t want_seed(const Entry& e, const std::string& origin) {
  const long long v = want_int(e, origin);
  if (v < 0) type_fail(e, origin, "a nonnegative integer");
  return static_cast<uint64_t>(v);
}

bool want_bool(const Entry& e, const std::string& origin) {
  if (e.value.kind == RawValue::Kind::Boolean) return e.value.flag;
  type_fail(e, origin, "true or false");
}

std::string want_string(const Entry& e, const std::string& origin) {
  if (e.value.kind == RawValue::Kind::String) return e.value.str;
  type_fail(e, origin, "a quoted string");
}

Vec want_vec(const Entry& e, const std::string& origin) {
  if (e.value.kind != RawValue::Kind::Array) type_fail(e, origin, "an array of numbers");
  Vec v(e.value.arr.size());
  for (size_t i = 0; i < e.value.arr.size(); ++i) v(i) = e.value.arr[i];
  return v;
}

const std::vector<std::pair<const char*, double ConstantSheet::*>>& sheet_fields() {
  static const std::vector<std::pair<const char*, double ConstantSheet::*>> t = {
      {"lambda1", &ConstantSheet::lambda1},   {"lambda2", &ConstantSheet::lambda2},
      {"rho1", &ConstantSheet::rho1},         {"rho2", &ConstantSheet::rho2},
      {"rho3", &ConstantSheet::rho3},         {"rho4", &ConstantSheet::rho4},
      {"rho5", &ConstantSheet::rho5},         {"rho6", &ConstantSheet::rho6},
      {"mu1", &ConstantSheet::mu1},           {"mu2", &ConstantSheet::mu2},
      {"mu3", &ConstantSheet::mu3},           {"mu4", &ConstantSheet::mu4},
      {"w1", &ConstantSheet::w1},             {"w2", &ConstantSheet::w2},
      {"w3", &ConstantSheet::w3},             {"w4", &ConstantSheet::w4},
      {"w5", &ConstantSheet::w5},             {"rho31", &ConstantSheet::rho31},
      {"rho32", &ConstantSheet::rho32},       {"rho33", &ConstantSheet::rho33},
      {"mu31", &ConstantSheet::mu31},         {"mu32", &ConstantSheet::mu32},
      {"mu33", &ConstantSheet::mu33},         {"w41", &ConstantSheet::w41},
      {"w42", &ConstantSheet::w42},           {"w43", &ConstantSheet::w43},
      {"rhobar5", &ConstantSheet::rhobar5},   {"mubar_b1", &ConstantSheet::mubar_b1},
      {"mubar_b2", &ConstantSheet::mubar_b2}, {"mubar_b3", &ConstantSheet::mubar_b3},
      {"mubar_f1", &ConstantSheet::mubar_f1}, {"mubar_f2", &ConstantSheet::mubar_f2},
      {"mubar_f3", &ConstantSheet::mubar_f3}, {"mubar_s1", &ConstantSheet::mubar_s1},
      {"mubar_s2", &ConstantSheet::mubar_s2}, {"mubar_s3", &ConstantSheet::mubar_s3},
      {"c_alpha", &ConstantSheet::c_alpha},
  };
  return t;
}

[[noreturn]] void missing_field(const std::string& origin, const std::string& name) {
  fail(ErrorCode::InvalidSpec, kStage, origin + ": missing required field " + name);
}

[[noreturn]] void field_fail(const std::string& origin, const std::string& name,
                             const std::string& msg) {
  fail(ErrorCode::InvalidSpec, kStage, origin + ": field " + name + " " + msg);
}

Scenario resolve(const std::vector<Entry>& entries, const std::string& origin) {
  Scenario sc;
  bool saw_family = false, saw_T = false, saw_steps = false;
  for (const Entry& e : entries) {
    const std::string path = e.section + "." + e.key;
    const auto unknown = [&]() -> void {
      parse_fail(origin, e.line, e.key_col, "unknown key " + path);
    };
    if (e.section == "model") {
      if (e.key == "family") {
        sc.family = want_string(e, origin);
        saw_family = true;
      } else if (e.key == "kappa") {
        sc.params.kappa = want_string(e, origin);
      } else {
        unknown();
      }
    } else if (e.section == "model.params") {
      // open numeric table, forwarded verbatim to the model factory
      sc.params.values[e.key] = want_number(e, origin);
    } else if (e.section == "atlas") {
      if (e.key == "mode") {
        const std::string s = want_string(e, origin);
        if (s == "grid")
          sc.atlas.mode = AtlasMode::Grid;
        else if (s == "iid")
          sc.atlas.mode = AtlasMode::Iid;
        else
          type_fail(e, origin, "\"grid\" or \"iid\"");
      } else if (e.key == "count") {
        sc.atlas.count = static_cast<int>(want_int(e, origin));
      } else if (e.key == "lo") {
        sc.atlas.lo = want_number(e, origin);
      } else if (e.key == "hi") {
        sc.atlas.hi = want_number(e, origin);
      } else if (e.key == "seed") {
        sc.atlas.seed = want_seed(e, origin);
      } else {
        unknown();
      }
    } else if (e.section == "grid") {
      if (e.key == "T") {
        sc.grid.horizon = want_number(e, origin);
        saw_T = true;
      } else if (e.key == "steps") {
        sc.grid.steps = static_cast<int>(want_int(e, origin));
        saw_steps = true;
      } else {
        unknown();
      }
    } else if (e.section == "run") {
      if (e.key == "particles")
        sc.particles = static_cast<int>(want_int(e, origin));
      else if (e.key == "seed")
        sc.seed = want_seed(e, origin);
      else if (e.key == "out")
        sc.out_dir = want_string(e, origin);
      else
        unknown();
    } else if (e.section == "law") {
      if (e.key == "kind") {
        const std::string s = want_string(e, origin);
        if (s == "dirac")
          sc.law.kind = InitialLaw::Kind::Dirac;
        else if (s == "gaussian")
          sc.law.kind = InitialLaw::Kind::Gaussian;
        else if (s == "uniform")
          sc.law.kind = InitialLaw::Kind::Uniform;
        else
          type_fail(e, origin, "\"dirac\", \"gaussian\" or \"uniform\"");
      } else if (e.key == "center") {
        sc.law.center = want_vec(e, origin);
      } else if (e.key == "spread") {
        sc.law.spread = want_vec(e, origin);
      } else if (e.key == "type_shift") {
        sc.law.type_shift = want_vec(e, origin);
      } else {
        unknown();
      }
    } else if (e.section == "control") {
      if (e.key == "kind") {
        const std::string s = want_string(e, origin);
        if (s == "open-loop")
          sc.control_kind = ControlKind::OpenLoop;
        else if (s == "feedback")
          sc.control_kind = ControlKind::Feedback;
        else
          type_fail(e, origin, "\"open-loop\" or \"feedback\"");
      } else if (e.key == "lo") {
        sc.control_lo = want_vec(e, origin);
      } else if (e.key == "hi") {
        sc.control_hi = want_vec(e, origin);
      } else {
        unknown();
      }
    } else if (e.section == "picard") {
      if (e.key == "max_outer")
        sc.picard.max_outer = static_cast<int>(want_int(e, origin));
      else if (e.key == "max_inner")
        sc.picard.max_inner = static_cast<int>(want_int(e, origin));
      else if (e.key == "tol")
        sc.picard.tol = want_number(e, origin);
      else if (e.key == "damping")
        sc.picard.damping = want_number(e, origin);
      else
        unknown();
    } else if (e.section == "regression") {
      if (e.key == "degree")
        sc.picard.basis.degree = static_cast<int>(want_int(e, origin));
      else if (e.key == "include_initial")
        sc.picard.basis.include_initial = want_bool(e, origin);
      else if (e.key == "ridge")
        sc.picard.basis.ridge = want_number(e, origin);
      else
        unknown();
    } else if (e.section == "adjoint") {
      if (e.key == "max_passes")
        sc.adjoint.max_passes = static_cast<int>(want_int(e, origin));
      else if (e.key == "tol")
        sc.adjoint.tol = want_number(e, origin);
      else
        unknown();
    } else if (e.section == "mp") {
      if (e.key == "bootstrap")
        sc.mp.bootstrap = static_cast<int>(want_int(e, origin));
      else if (e.key == "tol_multiplier")
        sc.mp.tol_multiplier = want_number(e, origin);
      else if (e.key == "seed")
        sc.mp.bootstrap_seed = want_seed(e, origin);
      else
        unknown();
    } else if (e.section == "optimize") {
      if (e.key == "rate")
        sc.optimize.rate = want_number(e, origin);
      else if (e.key == "iters")
        sc.optimize.max_iters = static_cast<int>(want_int(e, origin));
      else if (e.key == "tol")
        sc.optimize.tol = want_number(e, origin);
      else if (e.key == "halvings")
        sc.optimize.max_halvings = static_cast<int>(want_int(e, origin));
      else if (e.key == "probes")
        sc.optimize.mp_probes = static_cast<int>(want_int(e, origin));
      else if (e.key == "probe_amplitude")
        sc.optimize.probe_amplitude = want_number(e, origin);
      else
        unknown();
    } else if (e.section == "verify") {
      if (e.key == "stderr_multiplier")
        sc.verify.stderr_multiplier = want_number(e, origin);
      else if (e.key == "samples")
        sc.verify.convexity_samples = static_cast<int>(want_int(e, origin));
      else if (e.key == "seed")
        sc.verify.convexity_seed = want_seed(e, origin);
      else if (e.key == "amplitude")
        sc.verify.convexity_amplitude = want_number(e, origin);
      else if (e.key == "rivals")
        sc.verify_rivals = static_cast<int>(want_int(e, origin));
      else
        unknown();
    } else if (e.section == "sheet") {
      sc.has_sheet = true;
      bool found = false;
      for (const auto& [name, member] : sheet_fields())
        if (e.key == name) {
          sc.sheet.*member = want_number(e, origin);
          found = true;
          break;
        }
      if (!found) unknown();
    }
  }

  if (!saw_family) missing_field(origin, "model.family");
  if (!saw_T) missing_field(origin, "grid.T");
  if (!saw_steps) missing_field(origin, "grid.steps");

  if (!(sc.grid.horizon > 0.0) || !std::isfinite(sc.grid.horizon))
    field_fail(origin, "grid.T", "must be positive");
  if (sc.grid.steps < 1) field_fail(origin, "grid.steps", "must be at least 1");
  if (sc.particles < 1) field_fail(origin, "run.particles", "must be at least 1");
  if (sc.atlas.count < 1) field_fail(origin, "atlas.count", "must be at least 1");
  if (!(sc.atlas.lo < sc.atlas.hi)) field_fail(origin, "atlas.lo", "must be below atlas.hi");
  if (sc.control_lo.size() != sc.control_hi.size())
    field_fail(origin, "control.lo", "length differs from control.hi");
  if (sc.optimize.max_iters < 0) field_fail(origin, "optimize.iters", "must be nonnegative");
  if (sc.verify_rivals < 0) field_fail(origin, "verify.rivals", "must be nonnegative");

  sc.params.horizon = sc.grid.horizon;
  sc.adjoint.basis = sc.picard.basis;
  sc.optimize.picard = sc.picard;
  sc.optimize.adjoint = sc.adjoint;
  sc.optimize.mp = sc.mp;
  sc.verify.picard = sc.picard;
  sc.verify.adjoint = sc.adjoint;
  sc.verify.mp = sc.mp;
  return sc;
}

const char* atlas_mode_name(AtlasMode m) { return m == AtlasMode::Grid ? "grid" : "iid"; }

const char* law_kind_name(InitialLaw::Kind k) {
  switch (k) {
    case InitialLaw::Kind::Dirac: return "dirac";
    case InitialLaw::Kind::Gaussian: return "gaussian";
    case InitialLaw::Kind::Uniform: return "uniform";
  }
  return "dirac";
}

const char* control_kind_name(ControlKind k) {
  return k == ControlKind::OpenLoop ? "open-loop" : "feedback";
}

std::string canon_vec(const Vec& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt_double(v(i));
  }
  return s;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  return resolve(tokenize(text, origin), origin);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::InvalidSpec, kStage, "cannot open scenario file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path);
}

// Canonical form: sorted section.key=value lines over the resolved scenario,
// folded through 64-bit FNV-1a. The output directory is excluded; everything
// that can change a result is included, defaults spelled out.
uint64_t Scenario::hash() const {
  std::vector<std::string> rows;
  const auto put = [&rows](const std::string& key, const std::string& val) {
    rows.push_back(key + "=" + val);
  };
  const auto num = [&put](const std::string& key, double v) { put(key, fmt_double(v)); };
  const auto count = [&put](const std::string& key, long long v) {
    put(key, std::to_string(v));
  };
  const auto flag = [&put](const std::string& key, bool v) {
    put(key, v ? "true" : "false");
  };

  put("model.family", family);
  put("model.kappa", params.kappa);
  for (const auto& [k, v] : params.values) num("model.params." + k, v);
  put("atlas.mode", atlas_mode_name(atlas.mode));
  count("atlas.count", atlas.count);
  num("atlas.lo", atlas.lo);
  num("atlas.hi", atlas.hi);
  count("atlas.seed", static_cast<long long>(atlas.seed));
  num("grid.T", grid.horizon);
  count("grid.steps", grid.steps);
  count("run.particles", particles);
  count("run.seed", static_cast<long long>(seed));
  put("law.kind", law_kind_name(law.kind));
  put("law.center", canon_vec(law.center));
  put("law.spread", canon_vec(law.spread));
  put("law.type_shift", canon_vec(law.type_shift));
  put("control.kind", control_kind_name(control_kind));
  put("control.lo", canon_vec(control_lo));
  put("control.hi", canon_vec(control_hi));
  count("picard.max_outer", picard.max_outer);
  count("picard.max_inner", picard.max_inner);
  num("picard.tol", picard.tol);
  num("picard.damping", picard.damping);
  count("regression.degree", picard.basis.degree);
  flag("regression.include_initial", picard.basis.include_initial);
  num("regression.ridge", picard.basis.ridge);
  count("adjoint.max_passes", adjoint.max_passes);
  num("adjoint.tol", adjoint.tol);
  count("mp.bootstrap", mp.bootstrap);
  num("mp.tol_multiplier", mp.tol_multiplier);
  count("mp.seed", static_cast<long long>(mp.bootstrap_seed));
  num("optimize.rate", optimize.rate);
  count("optimize.iters", optimize.max_iters);
  num("optimize.tol", optimize.tol);
  count("optimize.halvings", optimize.max_halvings);
  count("optimize.probes", optimize.mp_probes);
  num("optimize.probe_amplitude", optimize.probe_amplitude);
  num("verify.stderr_multiplier", verify.stderr_multiplier);
  count("verify.samples", verify.convexity_samples);
  count("verify.seed", static_cast<long long>(verify.convexity_seed));
  num("verify.amplitude", verify.convexity_amplitude);
  count("verify.rivals", verify_rivals);
  flag("sheet.present", has_sheet);
  if (has_sheet)
    for (const auto& [name, member] : sheet_fields())
      num(std::string("sheet.") + name, sheet.*member);

  std::sort(rows.begin(), rows.end());
  uint64_t h = 14695981039346656037ull;
  const auto fold = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  };
  for (const std::string& row : rows) {
    for (char c : row) fold(c);
    fold('\n');
  }
  return h;
}

std::unique_ptr<CoefficientModel> Scenario::build_model() const {
  return make_model(family, params);
}

TypeAtlas Scenario::build_atlas() const { return build_type_atlas(atlas); }

ControlBox Scenario::box() const { return ControlBox{control_lo, control_hi}; }

InitialLaw Scenario::resolved_law(const ComponentDims& dims) const {
  InitialLaw out = law;
  if (out.center.size() == 0) out.center = Vec::Zero(dims.n);
  if (out.spread.size() == 0) out.spread = Vec::Zero(dims.n);
  return out;
}

ControlField Scenario::initial_control(const ComponentDims& dims) const {
  const TypeAtlas a = build_atlas();
  return control_kind == ControlKind::OpenLoop
             ? ControlField::open_loop(dims, grid, a, box())
             : ControlField::feedback(dims, grid, a, box());
}

nlohmann::json manifest_to_json(const RunManifest& manifest) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(manifest.scenario_hash));
  json stages = json::array();
  for (const auto& [name, sec] : manifest.stage_seconds)
    stages.push_back(json{{"stage", name}, {"seconds", sec}});
  return json{{"command", manifest.command},
              {"code_version", manifest.code_version},
              {"scenario_hash", hex},
              {"seed", manifest.seed},
              {"started_at", manifest.started_at},
              {"finished_at", manifest.finished_at},
              {"stage_seconds", stages},
              {"outputs", manifest.outputs}};
}

namespace {

std::string now_iso() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects outputs and stage timings for one subcommand run; the manifest is
// written last and lists every other file. With no output directory (check
// without --out) all writes are dropped.
struct RunWriter {
  std::filesystem::path dir;
  bool enabled = false;
  RunManifest man;
  std::chrono::steady_clock::time_point mark = std::chrono::steady_clock::now();

  RunWriter(const std::string& out_dir, std::string command, uint64_t hash,
            uint64_t seed) {
    enabled = !out_dir.empty();
    if (enabled) dir = out_dir;
    man.command = std::move(command);
    man.code_version = HMF_VERSION;
    man.scenario_hash = hash;
    man.seed = seed;
    man.started_at = now_iso();
  }

  void stage(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    man.stage_seconds.emplace_back(name,
                                   std::chrono::duration<double>(now - mark).count());
    mark = now;
  }

  void write_stream(const std::string& name,
                    const std::function<void(std::ostream&)>& body) {
    if (!enabled) return;
    std::filesystem::create_directories(dir);
    const std::filesystem::path target = dir / name;
    std::ofstream out(target, std::ios::binary);
    if (!out)
      fail(ErrorCode::Internal, kStage, "cannot open output file '" + target.string() + "'");
    body(out);
    out.flush();
    if (!out)
      fail(ErrorCode::Internal, kStage, "write to '" + target.string() + "' failed");
    man.outputs.push_back(name);
  }

  void write(const std::string& name, const std::string& text) {
    write_stream(name, [&text](std::ostream& os) { os << text; });
  }

  void finish() {
    if (!enabled) return;
    man.finished_at = now_iso();
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest_to_json(man).dump(2) << "\n";
  }
};

std::string dumps(const json& j) { return j.dump(2) + "\n"; }

ControlField load_control_file(const Scenario& sc, const ComponentDims& dims,
                               const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::InvalidInput, kStage, "cannot open control table '" + path + "'");
  return load_control_csv(dims, sc.grid, sc.build_atlas(), in, sc.box());
}

std::string history_csv(const std::vector<double>& history) {
  std::string s = "iter,J\n";
  for (size_t i = 0; i < history.size(); ++i)
    s += std::to_string(i) + "," + fmt_double(history[i]) + "\n";
  return s;
}

// m-weighted stderr of the mean cost: sqrt(sum_v w_v^2 var_v / N_v).
double cost_stderr(const CoefficientModel& m, const TrajectoryEnsemble& e,
                   const KernelFlow& flow, const TypeAtlas& atlas) {
  const std::vector<Vec> per = per_particle_costs(m, e, flow);
  double var = 0.0;
  for (int v = 0; v < atlas.size(); ++v) {
    const Vec& c = per[v];
    const int n = static_cast<int>(c.size());
    if (n < 2) continue;
    const double mean = c.mean();
    const double s2 = (c.array() - mean).square().sum() / (n - 1);
    var += atlas.weights[v] * atlas.weights[v] * s2 / n;
  }
  return std::sqrt(var);
}

std::string resolve_out(const std::string& flag, const Scenario& sc, bool required) {
  std::string out = flag.empty() ? sc.out_dir : flag;
  if (out.empty() && required)
    fail(ErrorCode::InvalidSpec, kStage, "output directory: set run.out or pass --out");
  return out;
}

int cmd_check(const std::string& scenario_path, std::string& out_dir) {
  const Scenario sc = load_scenario(scenario_path);
  out_dir = resolve_out(out_dir, sc, false);
  RunWriter w(out_dir, "check", sc.hash(), sc.seed);
  w.stage("load");

  ConstantSheet sheet;
  std::string source;
  if (sc.has_sheet) {
    sheet = sc.sheet;
    source = "scenario-sheet";
  } else {
    sheet = sc.build_model()->sheet();
    source = "model-sheet";
  }
  json variants = json::object();
  for (const ConditionVariant v :
       {ConditionVariant::Base, ConditionVariant::Marginal,
        ConditionVariant::VariationalTheta1, ConditionVariant::AdjointTheta2,
        ConditionVariant::Combined})
    variants[variant_name(v)] = report_to_json(certify(sheet, v));
  w.stage("certify");

  const json report{{"source", source}, {"sheet", sheet_to_json(sheet)},
                    {"variants", variants}};
  std::cout << report.dump(2) << "\n";
  w.write("check.json", dumps(report));
  w.finish();
  return 0;
}

int cmd_solve(const std::string& scenario_path, std::string& out_dir,
              const std::string& control_path) {
  const Scenario sc = load_scenario(scenario_path);
  out_dir = resolve_out(out_dir, sc, true);
  RunWriter w(out_dir, "solve", sc.hash(), sc.seed);

  const auto m = sc.build_model();
  const TypeAtlas atlas = sc.build_atlas();
  const InitialLaw law = sc.resolved_law(m->dims());
  const ControlField ctrl = control_path.empty()
                                ? sc.initial_control(m->dims())
                                : load_control_file(sc, m->dims(), control_path);
  w.stage("load");

  const PicardResult res =
      picard_solve(*m, ctrl, law, atlas, sc.particles, sc.grid, sc.seed, sc.picard);
  w.stage("solve");

  const NoiseEnsemble noise =
      simulate_noise(*m, law, atlas, sc.particles, sc.grid, sc.seed);
  const Defects defects = residual(*m, noise, res.flow, res.ensemble);
  const double cost = evaluate_cost(*m, res.ensemble, res.flow);
  w.stage("residual");

  for (int v = 0; v < atlas.size(); ++v)
    w.write_stream("trajectory_" + std::to_string(v) + ".csv",
                   [&](std::ostream& os) { save_trajectory_csv(res.ensemble, v, os); });
  const json report{
      {"converged", res.diag.converged},
      {"cost", cost},
      {"defects", {{"forward", defects.forward}, {"backward", defects.backward}}},
      {"picard",
       {{"outer_distances", res.diag.outer_distances},
        {"inner_passes", res.diag.inner_passes},
        {"ridge_fallbacks", res.diag.ridge_fallbacks},
        {"residual_bound", res.diag.residual_bound},
        {"distance_subsampled", res.diag.distance_subsampled},
        {"damped_iterations", res.diag.damped_iterations}}}};
  w.write("solve.json", dumps(report));
  w.stage("write");
  w.finish();

  if (!res.diag.converged)
    fail(ErrorCode::NonConvergence, "solve",
         "picard iteration did not converge within the outer budget");
  return 0;
}

struct OptimizeFlags {
  std::optional<int> iters;
  std::optional<double> rate;
  std::optional<uint64_t> seed;
};

int cmd_optimize(const std::string& scenario_path, std::string& out_dir,
                 const std::string& control_path, const OptimizeFlags& flags) {
  Scenario sc = load_scenario(scenario_path);
  if (flags.iters) {
    if (*flags.iters < 0)
      fail(ErrorCode::InvalidSpec, kStage, "--iters must be nonnegative");
    sc.optimize.max_iters = *flags.iters;
  }
  if (flags.rate) {
    if (!(*flags.rate > 0.0))
      fail(ErrorCode::InvalidSpec, kStage, "--rate must be positive");
    sc.optimize.rate = *flags.rate;
  }
  if (flags.seed) sc.seed = *flags.seed;
  out_dir = resolve_out(out_dir, sc, true);
  RunWriter w(out_dir, "optimize", sc.hash(), sc.seed);

  const auto m = sc.build_model();
  const TypeAtlas atlas = sc.build_atlas();
  const InitialLaw law = sc.resolved_law(m->dims());
  const ControlField initial = control_path.empty()
                                   ? sc.initial_control(m->dims())
                                   : load_control_file(sc, m->dims(), control_path);
  w.stage("load");

  const OptimizeResult opt = optimize_control(*m, law, atlas, sc.particles, sc.grid,
                                              sc.seed, initial, sc.optimize);
  w.stage("optimize");

  w.write_stream("control.csv",
                 [&](std::ostream& os) { save_control_csv(opt.control, os); });
  w.write("j_history.csv", history_csv(opt.j_history));
  w.write("mp_report.json", dumps(mp_report_to_json(opt.report)));
  const json report{{"iterations", opt.iterations},
                    {"converged", opt.converged},
                    {"warning", opt.warning},
                    {"final_cost", opt.j_history.back()},
                    {"j_history", opt.j_history}};
  w.write("optimize.json", dumps(report));
  w.stage("write");
  w.finish();
  return 0;
}

int cmd_verify(const std::string& scenario_path, std::string& out_dir,
               const std::string& control_path, const std::vector<std::string>& rival_paths,
               int random_rivals) {
  const Scenario sc = load_scenario(scenario_path);
  out_dir = resolve_out(out_dir, sc, true);
  RunWriter w(out_dir, "verify", sc.hash(), sc.seed);

  const auto m = sc.build_model();
  const TypeAtlas atlas = sc.build_atlas();
  const InitialLaw law = sc.resolved_law(m->dims());
  const ControlField candidate = load_control_file(sc, m->dims(), control_path);
  std::vector<ControlField> rivals;
  for (const std::string& path : rival_paths)
    rivals.push_back(load_control_file(sc, m->dims(), path));
  const int drawn = random_rivals >= 0 ? random_rivals : sc.verify_rivals;
  for (int i = 0; i < drawn; ++i)
    rivals.push_back(random_open_loop(m->dims(), sc.grid, atlas, sc.box(), sc.seed, i,
                                      sc.optimize.probe_amplitude));
  w.stage("load");

  const CertificateReport rep = verify_convexity_certificate(
      *m, law, atlas, sc.particles, sc.grid, sc.seed, candidate, rivals, sc.verify);
  w.stage("verify");

  json rival_rows = json::array();
  for (const RivalReport& r : rep.rivals)
    rival_rows.push_back(json{{"cost", r.cost},
                              {"margin", r.margin},
                              {"margin_stderr", r.margin_stderr},
                              {"beaten", r.beaten}});
  const json report{{"verified", rep.verified},
                    {"verdict", rep.verdict},
                    {"candidate_cost", rep.candidate_cost},
                    {"convex_declared", rep.convex_declared},
                    {"convexity_checked", rep.convexity_checked},
                    {"convexity_failures", rep.convexity_failures},
                    {"mp", mp_report_to_json(rep.mp)},
                    {"rivals", rival_rows}};
  w.write("verify.json", dumps(report));
  w.stage("write");
  w.finish();
  return 0;
}

}  // namespace

nlohmann::json benchmark_lq(const BenchmarkLqOptions& opts) {
  if (opts.particles < 1 || opts.steps < 1 || opts.rivals < 0)
    fail(ErrorCode::InvalidInput, kStage, "benchmark options are malformed");

  ModelParams params;
  params.horizon = 1.0;
  const auto m = make_model("lq", params);
  const TypeAtlas atlas = build_type_atlas({});
  const TimeGrid grid{1.0, opts.steps};
  InitialLaw law;
  law.kind = InitialLaw::Kind::Gaussian;
  law.center = Vec::Constant(1, 1.0);
  law.spread = Vec::Constant(1, 0.3);
  const int N = opts.particles;

  json stages = json::array();
  std::vector<std::string> failed;
  std::vector<std::string> annotations;
  const auto push_stage = [&](const std::string& name, bool pass, json details) {
    details["name"] = name;
    details["pass"] = pass;
    stages.push_back(std::move(details));
    if (!pass) failed.push_back(name);
  };

  // certify: the decoupled reference sheet must come out feasible with
  // theta = 2/3 at the zero witness, the zero-slope sheet must be gated out;
  // the lq model sheet itself has zero one-sided slopes and is recorded as
  // the designed infeasible-gate answer without gating the benchmark
  ConstantSheet decoupled;
  decoupled.lambda1 = decoupled.lambda2 = -1.0;
  decoupled.rho4 = 1.0;
  const SmallnessReport base = certify(decoupled, ConditionVariant::Base);
  ConstantSheet gated;
  gated.rho3 = 1.0;
  const SmallnessReport gate = certify(gated, ConditionVariant::Base);
  const SmallnessReport model_rep = certify(m->sheet(), ConditionVariant::AdjointTheta2);
  const bool cert_pass = base.feasible && std::abs(base.theta - 2.0 / 3.0) <= 1e-12 &&
                         std::abs(base.witness.lambda) <= 1e-12 && !gate.feasible &&
                         gate.reason == "infeasible-gate";
  push_stage("certify", cert_pass,
             json{{"decoupled", report_to_json(base)},
                  {"gate", report_to_json(gate)},
                  {"model_sheet", report_to_json(model_rep)}});

  // solve at the zero control: X is an exact random walk, so the cost oracle
  // is the left-endpoint quadrature of E[x^2]/2 plus the terminal half
  const ControlField zero = ControlField::open_loop(m->dims(), grid, atlas);
  const PicardResult at_zero =
      picard_solve(*m, zero, law, atlas, N, grid, opts.seed);
  const NoiseEnsemble noise = simulate_noise(*m, law, atlas, N, grid, opts.seed);
  const Defects defects = residual(*m, noise, at_zero.flow, at_zero.ensemble);
  const double j_zero = evaluate_cost(*m, at_zero.ensemble, at_zero.flow);
  const double second_moment = 1.0 * 1.0 + 0.3 * 0.3;
  double j_zero_oracle = 0.0;
  for (int j = 0; j < grid.steps; ++j)
    j_zero_oracle += grid.dt() * 0.5 * (second_moment + grid.node(j));
  j_zero_oracle += 0.5 * (second_moment + grid.horizon);
  const double se_zero = cost_stderr(*m, at_zero.ensemble, at_zero.flow, atlas);
  const bool solve_pass = at_zero.diag.converged && defects.forward < 1e-8 &&
                          std::abs(j_zero - j_zero_oracle) <= 0.05 * j_zero_oracle;
  push_stage("solve", solve_pass,
             json{{"converged", at_zero.diag.converged},
                  {"cost", j_zero},
                  {"oracle", j_zero_oracle},
                  {"stderr", se_zero},
                  {"defects",
                   {{"forward", defects.forward}, {"backward", defects.backward}}}});

  // optimize against the simulated closed-form open-loop optimum
  // alpha*(t) = -exp(-t) (Riccati P = 1, mean path m(t) = exp(-t))
  const OptimizeResult opt =
      optimize_control(*m, law, atlas, N, grid, opts.seed, zero);
  ControlField star = ControlField::open_loop(m->dims(), grid, atlas);
  for (int j = 0; j <= grid.steps; ++j)
    star.table(0)(j, 0) = -std::exp(-grid.node(j));
  const PicardResult at_star = picard_solve(*m, star, law, atlas, N, grid, opts.seed);
  const double j_star = evaluate_cost(*m, at_star.ensemble, at_star.flow);
  const PicardResult at_opt =
      picard_solve(*m, opt.control, law, atlas, N, grid, opts.seed);
  const double se_opt = cost_stderr(*m, at_opt.ensemble, at_opt.flow, atlas);
  double sxa = 0.0, sxx = 0.0;
  for (int j = 0; j < grid.steps; ++j) {
    const double mx = at_opt.ensemble.x[0][j].col(0).mean();
    sxa += opt.control.table(0)(j, 0) * mx;
    sxx += mx * mx;
  }
  const double gain = sxx > 0.0 ? sxa / sxx : 0.0;
  const double j_hat = opt.j_history.back();
  const bool opt_pass = gain >= -1.1 && gain <= -0.9 &&
                        std::abs(j_hat - j_star) <= 0.05 * std::abs(j_star);
  push_stage("optimize", opt_pass,
             json{{"cost", j_hat},
                  {"oracle", j_star},
                  {"gain", gain},
                  {"stderr", se_opt},
                  {"iterations", opt.iterations},
                  {"converged", opt.converged},
                  {"warning", opt.warning}});

  // maximum principle at the optimizer's iterate
  const bool mp_pass = opt.report.stationary && opt.report.inner_ok;
  push_stage("maximum-principle", mp_pass,
             json{{"stationarity_norm", opt.report.stationarity_norm},
                  {"stationarity_stderr", opt.report.stationarity_stderr},
                  {"stationarity_tol", opt.report.stationarity_tol},
                  {"stationary", opt.report.stationary},
                  {"min_inner", opt.report.min_inner},
                  {"min_inner_tol", opt.report.min_inner_tol},
                  {"inner_ok", opt.report.inner_ok},
                  {"verdict", opt.report.verdict}});

  // verification against random admissible rivals under common noise
  std::vector<ControlField> rivals;
  rivals.reserve(opts.rivals);
  for (int i = 0; i < opts.rivals; ++i)
    rivals.push_back(random_open_loop(m->dims(), grid, atlas, {}, opts.seed, i, 1.0));
  const CertificateReport cert = verify_convexity_certificate(
      *m, law, atlas, N, grid, opts.seed, opt.control, rivals);
  json rival_rows = json::array();
  int beaten = 0;
  for (const RivalReport& r : cert.rivals) {
    beaten += r.beaten ? 1 : 0;
    rival_rows.push_back(json{{"cost", r.cost},
                              {"margin", r.margin},
                              {"margin_stderr", r.margin_stderr},
                              {"beaten", r.beaten}});
  }
  push_stage("verification", cert.verified,
             json{{"verified", cert.verified},
                  {"verdict", cert.verdict},
                  {"candidate_cost", cert.candidate_cost},
                  {"convexity_checked", cert.convexity_checked},
                  {"convexity_failures", cert.convexity_failures},
                  {"rivals_beaten", beaten},
                  {"rivals", rival_rows}});

  // a failed band that is narrower than twice the Monte Carlo stderr cannot
  // be met at this particle count regardless of the solver
  const bool all_pass = failed.empty();
  if (!all_pass && 2.0 * std::max(se_zero, se_opt) > 0.05 * std::abs(j_star))
    annotations.push_back(
        "noise floor: twice the Monte Carlo stderr (" +
        fmt_double(2.0 * std::max(se_zero, se_opt)) +
        ") exceeds the 5% acceptance band (" + fmt_double(0.05 * std::abs(j_star)) +
        ") at " + std::to_string(N) + " particles");

  return json{{"particles", N},       {"steps", opts.steps},
              {"seed", opts.seed},    {"rivals", opts.rivals},
              {"pass", all_pass},     {"stages", stages},
              {"annotations", annotations}};
}

namespace {

int cmd_benchmark(std::string& out_dir, const BenchmarkLqOptions& opts) {
  RunWriter w(out_dir, "benchmark-lq", 0, opts.seed);
  const json rep = benchmark_lq(opts);
  w.stage("benchmark");
  w.write("benchmark.json", dumps(rep));
  w.stage("write");
  w.finish();
  if (!rep.at("pass").get<bool>()) {
    std::string names;
    for (const auto& s : rep.at("stages"))
      if (!s.at("pass").get<bool>()) {
        if (!names.empty()) names += ", ";
        names += s.at("name").get<std::string>();
      }
    fail(ErrorCode::NonConvergence, "benchmark-lq", "stages failed: " + names);
  }
  return 0;
}

int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidInput: return 1;
    case ErrorCode::NonConvergence: return 2;
    default: return 3;
  }
}

void emit_error_file(const std::string& out_dir, const std::string& stage,
                     const std::string& code, const std::string& message) {
  if (out_dir.empty()) return;
  try {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / "error.json", std::ios::binary);
    out << json{{"stage", stage}, {"code", code}, {"message", message}}.dump(2) << "\n";
  } catch (...) {
    // the error file is best-effort; the exit status already reports failure
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("hmf");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& s : full) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"heterogeneous mean-field fbsde and control toolkit", "hmf"};
  app.require_subcommand(1);

  std::string scenario_path, out_flag, control_path;
  std::vector<std::string> rival_paths;
  int iters_flag = 0;
  double rate_flag = 0.0;
  long long seed_flag = 0;
  int random_rivals = -1;
  BenchmarkLqOptions bench;
  long long bench_seed = static_cast<long long>(bench.seed);

  CLI::App* c_check =
      app.add_subcommand("check", "certify the smallness conditions of a scenario sheet");
  c_check->add_option("--scenario", scenario_path, "scenario file")->required();
  c_check->add_option("--out", out_flag, "output directory (defaults to run.out)");

  CLI::App* c_solve = app.add_subcommand("solve", "run the mean-field picard solver");
  c_solve->add_option("--scenario", scenario_path, "scenario file")->required();
  c_solve->add_option("--out", out_flag, "output directory (defaults to run.out)");
  c_solve->add_option("--control", control_path, "control table csv (default zero)");

  CLI::App* c_opt =
      app.add_subcommand("optimize", "projected gradient descent on the control");
  c_opt->add_option("--scenario", scenario_path, "scenario file")->required();
  c_opt->add_option("--out", out_flag, "output directory (defaults to run.out)");
  c_opt->add_option("--control", control_path, "initial control table csv");
  c_opt->add_option("--iters", iters_flag, "override optimize.iters");
  c_opt->add_option("--rate", rate_flag, "override optimize.rate");
  c_opt->add_option("--seed", seed_flag, "override run.seed");

  CLI::App* c_ver =
      app.add_subcommand("verify", "empirical optimality certificate for a control table");
  c_ver->add_option("--scenario", scenario_path, "scenario file")->required();
  c_ver->add_option("--control", control_path, "candidate control table csv")->required();
  c_ver->add_option("--rival", rival_paths, "rival control table csv (repeatable)");
  c_ver->add_option("--random-rivals", random_rivals,
                    "number of random rivals (defaults to verify.rivals)");
  c_ver->add_option("--out", out_flag, "output directory (defaults to run.out)");

  CLI::App* c_bench = app.add_subcommand(
      "benchmark-lq", "end-to-end acceptance benchmark on the decoupled lq problem");
  c_bench->add_option("--out", out_flag, "output directory")->required();
  c_bench->add_option("--n", bench.particles, "particle count");
  c_bench->add_option("--steps", bench.steps, "time steps");
  c_bench->add_option("--seed", bench_seed, "base seed");
  c_bench->add_option("--rivals", bench.rivals, "random rival count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  std::string out_dir = out_flag;
  try {
    if (c_check->parsed()) return cmd_check(scenario_path, out_dir);
    if (c_solve->parsed()) return cmd_solve(scenario_path, out_dir, control_path);
    if (c_opt->parsed()) {
      OptimizeFlags flags;
      if (c_opt->count("--iters")) flags.iters = iters_flag;
      if (c_opt->count("--rate")) flags.rate = rate_flag;
      if (c_opt->count("--seed")) {
        if (seed_flag < 0) fail(ErrorCode::InvalidSpec, kStage, "--seed must be nonnegative");
        flags.seed = static_cast<uint64_t>(seed_flag);
      }
      return cmd_optimize(scenario_path, out_dir, control_path, flags);
    }
    if (c_ver->parsed())
      return cmd_verify(scenario_path, out_dir, control_path, rival_paths, random_rivals);
    if (c_bench->parsed()) {
      if (bench_seed < 0) fail(ErrorCode::InvalidSpec, kStage, "--seed must be nonnegative");
      bench.seed = static_cast<uint64_t>(bench_seed);
      return cmd_benchmark(out_dir, bench);
    }
    fail(ErrorCode::Internal, kStage, "no subcommand dispatched");
  } catch (const Error& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << "\n";
    emit_error_file(out_dir, e.stage(), error_code_name(e.code()), e.what());
    return exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error [" << command << "]: " << e.what() << "\n";
    emit_error_file(out_dir, command, "internal", e.what());
    return 3;
  }
}

}  // namespace hmf
