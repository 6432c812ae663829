#pragma once

// Config-driven front end: one command per run, results as CSV tables plus a
// plain-text report. Needs nlohmann/json on the include path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "intocp/bilinear.hpp"
#include "intocp/fredholm.hpp"
#include "intocp/lqc.hpp"
#include "intocp/optimizer.hpp"
#include "intocp/presets.hpp"
#include "intocp/volterra.hpp"

namespace intocp::cli {

using json = nlohmann::json;

enum class Exit : int { ok = 0, check_failed = 1, solver_failed = 2, config_error = 3 };

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"solve",
                                              "optimize",
                                              "grad-check",
                                              "second-variation-check",
                                              "sufficiency-check",
                                              "lqc-solve",
                                              "bilinear-solve"};
  return names;
}

/// Scalar problem assembled from the built-in kernel catalog:
///   f1 = λ a(x,y) φ + β u + α sin φ,   f2 = κ φ1φ2 + γ φ1u2,
///   F1 = ½q(φ - φ̄)² + ½r u² + η φu,    F2 = μ φ1φ2u1u2 + ν φ1u2 + ρ u1u2,
///   F0 = ½p Y² (Volterra only),        forcing ≡ const,
/// with a ≡ 1, exp(-decay|x-y|) or exp(-decay|x-y|²).
struct KernelSpec {
  Family family = Family::fredholm;
  double forcing = 1.0;
  double lambda = 0, beta = 0, alpha = 0;
  std::string memory = "none";
  double decay = 1.0;
  double kappa = 0, gamma = 0;
  double q = 0, target = 0, r = 1, eta = 0;
  double mu = 0, nu = 0, rho = 0;
  double p = 0;
};

struct Tolerances {
  double state = 1e-12;
  double grad_check = 1e-4;
  double second_variation_check = 1e-3;
  double stationarity = 1e-8;
  double fd_step = 1e-5;
  double fd_step2 = 1e-3;
};

struct RunConfig {
  std::string command;
  std::string preset;
  presets::Params params;
  std::optional<KernelSpec> kernels;
  std::optional<double> T;
  std::vector<std::pair<double, double>> bounds;
  std::optional<int> N;
  Tolerances tol;
  OptimOptions optimizer;
  int directions = 5;
  /// Checks run at base_scale times a random control; 0 means u = 0.
  double base_scale = 0.5;
  std::string out = "out";
  std::uint64_t seed = 0;
};

/// Command-line flags; each one overrides the matching config entry.
struct Overrides {
  std::optional<std::string> preset, command, out;
  std::optional<int> N;
  std::optional<std::uint64_t> seed;
};

// ------------------------------------------------------------------ parsing

/// One JSON object being read; remembers which keys were consumed so the
/// leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json* find(const std::string& k) {
    seen_.insert(k);
    auto it = j_->find(k);
    return it == j_->end() ? nullptr : &*it;
  }

  std::optional<double> number(const std::string& k) {
    const json* v = find(k);
    if (!v) return std::nullopt;
    if (!v->is_number()) throw ConfigError(key(k), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw ConfigError(key(k), "expected a finite number");
    return x;
  }
  double number(const std::string& k, double def) { return number(k).value_or(def); }

  std::optional<long long> integer(const std::string& k) {
    const json* v = find(k);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) throw ConfigError(key(k), "expected an integer");
    return v->get<long long>();
  }

  std::optional<std::string> text(const std::string& k) {
    const json* v = find(k);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw ConfigError(key(k), "expected a string");
    return v->get<std::string>();
  }

  std::optional<Section> section(const std::string& k) {
    const json* v = find(k);
    if (!v) return std::nullopt;
    return Section(*v, key(k));
  }

  const json& raw() const { return *j_; }

  void finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

namespace detail {

inline Family family_from(const std::string& s, const std::string& key) {
  if (s == "fredholm") return Family::fredholm;
  if (s == "volterra") return Family::volterra;
  throw ConfigError(key, "expected 'fredholm' or 'volterra'");
}

inline KernelSpec parse_kernels(Section s) {
  KernelSpec k;
  if (auto f = s.text("family")) k.family = family_from(*f, s.key("family"));
  k.forcing = s.number("forcing", k.forcing);
  if (auto f1 = s.section("f1")) {
    k.lambda = f1->number("lambda", 0);
    k.beta = f1->number("beta", 0);
    k.alpha = f1->number("alpha", 0);
    k.memory = f1->text("memory").value_or("none");
    if (k.memory != "none" && k.memory != "exp" && k.memory != "gauss")
      throw ConfigError(f1->key("memory"), "expected 'none', 'exp' or 'gauss'");
    k.decay = f1->number("decay", 1.0);
    f1->finish();
  }
  if (auto f2 = s.section("f2")) {
    k.kappa = f2->number("kappa", 0);
    k.gamma = f2->number("gamma", 0);
    f2->finish();
  }
  if (auto F1 = s.section("F1")) {
    k.q = F1->number("q", 0);
    k.target = F1->number("target", 0);
    k.r = F1->number("r", 1);
    k.eta = F1->number("eta", 0);
    F1->finish();
  }
  if (auto F2 = s.section("F2")) {
    k.mu = F2->number("mu", 0);
    k.nu = F2->number("nu", 0);
    k.rho = F2->number("rho", 0);
    F2->finish();
  }
  if (auto F0 = s.section("F0")) {
    if (k.family != Family::volterra) throw ConfigError(s.key("F0"), "terminal cost needs family 'volterra'");
    k.p = F0->number("p", 0);
    F0->finish();
  }
  s.finish();
  return k;
}

inline void parse_problem(Section s, RunConfig& c) {
  if (auto name = s.text("preset")) c.preset = *name;
  if (auto params = s.section("params")) {
    for (auto it = params->raw().begin(); it != params->raw().end(); ++it)
      c.params[it.key()] = *params->number(it.key());
    params->finish();
  }
  if (auto k = s.section("kernels")) c.kernels = parse_kernels(std::move(*k));
  if (c.kernels && !c.preset.empty()) throw ConfigError(s.key("kernels"), "give either a preset or kernels, not both");
  if (c.kernels && !c.params.empty()) throw ConfigError(s.key("params"), "params only apply to presets");
  s.finish();
}

inline void parse_grid(Section s, RunConfig& c) {
  c.T = s.number("T");
  if (auto n = s.integer("N")) c.N = static_cast<int>(*n);
  if (const json* b = s.find("bounds")) {
    if (!b->is_array() || b->empty()) throw ConfigError(s.key("bounds"), "expected a list of [lo, hi] pairs");
    for (const auto& e : *b) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
        throw ConfigError(s.key("bounds"), "expected a list of [lo, hi] pairs");
      c.bounds.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
  }
  if (c.T && !c.bounds.empty()) throw ConfigError(s.key("bounds"), "give either T or bounds");
  s.finish();
}

inline void parse_tolerances(Section s, Tolerances& t) {
  t.state = s.number("state", t.state);
  t.grad_check = s.number("grad_check", t.grad_check);
  t.second_variation_check = s.number("second_variation_check", t.second_variation_check);
  t.stationarity = s.number("stationarity", t.stationarity);
  t.fd_step = s.number("fd_step", t.fd_step);
  t.fd_step2 = s.number("fd_step2", t.fd_step2);
  s.finish();
}

inline void parse_optimizer(Section s, OptimOptions& o) {
  if (auto n = s.integer("max_iters")) o.max_iters = static_cast<int>(*n);
  o.grad_tol = s.number("grad_tol", o.grad_tol);
  o.step_tol = s.number("step_tol", o.step_tol);
  o.initial_step = s.number("initial_step", o.initial_step);
  o.armijo = s.number("armijo", o.armijo);
  o.shrink = s.number("shrink", o.shrink);
  s.finish();
}

inline void parse_checks(Section s, RunConfig& c) {
  if (auto n = s.integer("directions")) c.directions = static_cast<int>(*n);
  c.base_scale = s.number("base_scale", c.base_scale);
  s.finish();
}

}  // namespace detail

inline RunConfig parse_config(const json& doc) {
  RunConfig c;
  Section root(doc, "");
  if (auto cmd = root.text("command")) c.command = *cmd;
  if (auto p = root.section("problem")) detail::parse_problem(std::move(*p), c);
  if (auto g = root.section("grid")) detail::parse_grid(std::move(*g), c);
  if (auto t = root.section("tolerances")) detail::parse_tolerances(std::move(*t), c.tol);
  if (auto o = root.section("optimizer")) detail::parse_optimizer(std::move(*o), c.optimizer);
  if (auto k = root.section("checks")) detail::parse_checks(std::move(*k), c);
  if (auto out = root.text("output")) c.out = *out;
  if (const json* s = root.find("seed")) {
    if (!s->is_number_integer() || s->get<long long>() < 0)
      throw ConfigError("seed", "expected a non-negative integer");
    c.seed = s->get<std::uint64_t>();
  }
  root.finish();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("malformed document: ") + e.what());
  }
  return parse_config(doc);
}

inline void apply(const Overrides& o, RunConfig& c) {
  if (o.preset) {
    c.preset = *o.preset;
    c.kernels.reset();
  }
  if (o.command) c.command = *o.command;
  if (o.out) c.out = *o.out;
  if (o.N) c.N = *o.N;
  if (o.seed) c.seed = *o.seed;
}

// ---------------------------------------------------------------- problems

enum class Source { catalog, lqc, bilinear, kernels };

inline bool listed(const std::vector<std::string>& names, const std::string& n) {
  return std::find(names.begin(), names.end(), n) != names.end();
}

inline Source source_of(const RunConfig& c) {
  if (c.kernels) return Source::kernels;
  if (presets::find(c.preset)) return Source::catalog;
  if (listed(lqc::preset_names(), c.preset)) return Source::lqc;
  if (listed(bilinear_control::preset_names(), c.preset)) return Source::bilinear;
  throw ConfigError("problem.preset", "unknown preset '" + c.preset + "'");
}

/// Rejects anything that cannot run before any work is done.
inline void validate(const RunConfig& c) {
  if (c.command.empty()) throw ConfigError("command", "missing");
  if (!listed(commands(), c.command)) throw ConfigError("command", "unknown command '" + c.command + "'");
  if (c.preset.empty() && !c.kernels) throw ConfigError("problem", "needs a preset or kernels");
  if (c.N && *c.N < 2) throw ConfigError("grid.N", "must be at least 2");
  if (c.T && !(*c.T > 0)) throw ConfigError("grid.T", "must be positive");
  for (const auto& [lo, hi] : c.bounds)
    if (!(hi > lo)) throw ConfigError("grid.bounds", "each pair needs lo < hi");
  if (c.directions < 1) throw ConfigError("checks.directions", "must be at least 1");
  const Source s = source_of(c);
  if (c.command == "lqc-solve" && s != Source::lqc)
    throw ConfigError("problem.preset", "lqc-solve needs one of the lqc presets");
  if (c.command == "bilinear-solve" && s != Source::bilinear)
    throw ConfigError("problem.preset", "bilinear-solve needs one of the bilinear presets");
  const bool interval_only = s == Source::lqc || s == Source::bilinear ||
                             (s == Source::catalog && presets::find(c.preset)->family == Family::volterra) ||
                             (s == Source::kernels && c.kernels->family == Family::volterra);
  if (interval_only && !c.bounds.empty()) throw ConfigError("grid.bounds", "this problem needs an interval [0, T]");
  const auto positive = [](double v, const char* key) {
    if (!(v > 0)) throw ConfigError(key, "must be positive");
  };
  positive(c.tol.state, "tolerances.state");
  positive(c.tol.grad_check, "tolerances.grad_check");
  positive(c.tol.second_variation_check, "tolerances.second_variation_check");
  positive(c.tol.stationarity, "tolerances.stationarity");
  positive(c.tol.fd_step, "tolerances.fd_step");
  positive(c.tol.fd_step2, "tolerances.fd_step2");
  if (c.optimizer.max_iters < 0) throw ConfigError("optimizer.max_iters", "must be non-negative");
  if (!(c.optimizer.shrink > 0 && c.optimizer.shrink < 1)) throw ConfigError("optimizer.shrink", "must lie in (0, 1)");
}

inline Problem build_kernels(const KernelSpec& k) {
  std::function<double(const Point&, const Point&)> a;
  const double decay = k.decay;
  if (k.memory == "exp")
    a = [decay](const Point& x, const Point& y) { return std::exp(-decay * (x - y).norm()); };
  else if (k.memory == "gauss")
    a = [decay](const Point& x, const Point& y) { return std::exp(-decay * (x - y).squaredNorm()); };
  ProblemDef d;
  d.family = k.family;
  d.forcing = presets::detail::constant_forcing(k.forcing);
  d.f1 = presets::detail::scalar_f1(k.lambda, k.beta, k.alpha, a);
  d.f2 = presets::detail::scalar_f2(k.kappa, k.gamma);
  d.F1 = presets::detail::scalar_F1(k.q, k.target, k.r, k.eta);
  d.F2 = presets::detail::scalar_F2(k.mu, k.nu, k.rho);
  if (k.family == Family::volterra) d.F0 = presets::detail::terminal(1, k.p);
  return make_problem(d);
}

inline Grid build_grid(const RunConfig& c, presets::GridSpec spec) {
  if (c.T) {
    spec.T = *c.T;
    spec.bounds.clear();
  }
  if (!c.bounds.empty()) spec.bounds = c.bounds;
  if (c.N) spec.N = *c.N;
  return spec.build();
}

/// The problem behind every generic command, whatever catalog it came from.
inline std::pair<Problem, Grid> resolve_problem(const RunConfig& c) {
  switch (source_of(c)) {
    case Source::kernels:
      return {build_kernels(*c.kernels), build_grid(c, {})};
    case Source::catalog: {
      const presets::Entry* e = presets::find(c.preset);
      return {e->build(c.params), build_grid(c, e->grid)};
    }
    case Source::lqc:
      return {lqc::to_problem(lqc::preset(c.preset, c.params)), build_grid(c, {})};
    case Source::bilinear:
      return {bilinear_control::to_problem(bilinear_control::preset2(c.preset, c.params)), build_grid(c, {})};
  }
  throw ConfigError("problem", "unreachable");
}

// ------------------------------------------------------------------ output

namespace detail {

inline std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline std::string short_num(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

/// node, coordinates, then one column per component of `values` (dim × N).
inline void write_table(const std::filesystem::path& file, const Grid& g, bool time, const Mat& values,
                        const std::string& symbol) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  out << "node";
  if (g.kind() == GridKind::interval)
    out << (time ? ",t" : ",x");
  else
    for (int d = 0; d < g.dim(); ++d) out << ",x" << d + 1;
  for (int c = 0; c < values.rows(); ++c) out << ',' << symbol << c + 1;
  out << '\n';
  for (int i = 0; i < g.size(); ++i) {
    out << i;
    const Point& x = g.node(i);
    const int coords = g.kind() == GridKind::interval ? 1 : g.dim();
    for (int d = 0; d < coords; ++d) out << ',' << num(x(d));
    for (int c = 0; c < values.rows(); ++c) out << ',' << num(values(c, i));
    out << '\n';
  }
}

/// Smooth seeded direction: low Fourier modes in the first coordinate plus
/// a slower one in the second.
inline Control probe(const Grid& g, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Control d(m, g.size());
  const double L = g.kind() == GridKind::interval ? g.horizon() : 1.0;
  for (int c = 0; c < m; ++c) {
    double a[3], b[3];
    for (int k = 0; k < 3; ++k) {
      a[k] = nd(rng) / (1 + k);
      b[k] = nd(rng) / (1 + k);
    }
    for (int i = 0; i < g.size(); ++i) {
      const Point& x = g.node(i);
      const double s = (x(0) + 0.25 * x(1)) / L;
      double v = 0;
      for (int k = 0; k < 3; ++k) v += a[k] * std::cos(M_PI * k * s) + b[k] * std::sin(M_PI * (k + 1) * s);
      d.at(i)(c) = v;
    }
  }
  return d;
}

inline double rel(double got, double want) {
  const double scale = std::max(std::abs(got), std::abs(want));
  return scale == 0 ? 0.0 : std::abs(got - want) / scale;
}

}  // namespace detail

/// Everything one run produced, before it hits the disk.
struct Outcome {
  Exit code = Exit::ok;
  Mat state, costate, control;
  bool time = false;
  std::ostringstream report;
};

namespace detail {

inline void solution_lines(std::ostream& r, double J, double state_res, double costate_res) {
  r << "J: " << num(J) << '\n';
  r << "state_residual: " << short_num(state_res) << '\n';
  r << "costate_residual: " << short_num(costate_res) << '\n';
}

template <typename S>
void keep(Outcome& o, const S& s) {
  o.state = s.state.values();
  o.costate = s.costate.values();
  o.control = s.control.values();
}

inline QuadIntegralForm accessory_form(const Problem& p, const Grid& g, const fredholm::FredholmSolution& s) {
  return fredholm::assemble_accessory(fredholm::accessory_from_solution(p, g, s), g);
}

inline QuadIntegralForm accessory_form(const Problem& p, const Grid& g, const volterra::VolterraSolution& s) {
  return volterra::form(volterra::reduce_accessory(volterra::accessory_from_solution(p, g, s), g));
}

inline CoControl gradient_at(const Problem& p, const Grid& g, const fredholm::FredholmSolution& s) {
  return fredholm::gradient(p, g, s);
}

inline CoControl gradient_at(const Problem& p, const Grid& g, const volterra::VolterraSolution& s) {
  return volterra::gradient(p, g, s);
}

inline PDReport pd_check(QuadIntegralForm& f, const Grid& g, Family fam) {
  return fam == Family::fredholm ? check_pd(f, g) : volterra::check_pd_volterra(f, g);
}

inline void pd_lines(std::ostream& r, const std::string& prefix, const PDReport& pd) {
  r << prefix << "verdict: " << to_string(pd.verdict) << '\n';
  r << prefix << "pointwise: " << to_string(pd.pointwise) << " (min eigenvalue " << short_num(pd.min_eig_pointwise)
    << ")\n";
  r << prefix << "gram: " << to_string(pd.discrete) << " (min eigenvalue " << short_num(pd.min_eig_discrete) << ")\n";
}

inline void optim_lines(std::ostream& r, const OptimRun& run) {
  r << "optimizer: " << to_string(run.reason) << " after " << run.iterates.size() - 1 << " iterations\n";
  r << "J_initial: " << num(run.iterates.front().cost) << '\n';
  r << "gradient_norm: " << short_num(run.iterates.back().grad_norm) << '\n';
}

template <typename F>
Control base_control(const F& f, const RunConfig& c, std::mt19937_64& rng) {
  Control u = f.zero_control();
  if (c.base_scale != 0) u = c.base_scale * probe(f.grid(), f.problem().m, rng);
  return u;
}

template <typename F>
void run_generic(const F& f, const RunConfig& c, Outcome& o) {
  const Grid& g = f.grid();
  const Problem& p = f.problem();
  std::ostream& r = o.report;
  std::mt19937_64 rng(c.seed);

  if (c.command == "solve") {
    auto s = f.solve(f.zero_control());
    keep(o, s);
    solution_lines(r, s.cost, s.state_residual, s.costate_residual);
    return;
  }

  if (c.command == "optimize" || c.command == "sufficiency-check") {
    OptimRun run = minimize(f, f.zero_control(), c.optimizer);
    auto s = f.solve(run.control);
    keep(o, s);
    optim_lines(r, run);
    solution_lines(r, s.cost, s.state_residual, s.costate_residual);
    if (run.reason == Termination::max_iters) o.code = Exit::solver_failed;
    if (c.command == "optimize") return;
    QuadIntegralForm form = accessory_form(p, g, s);
    PDReport pd = pd_check(form, g, p.family);
    pd_lines(r, "", pd);
    if (o.code == Exit::ok && pd.verdict != Verdict::positive_definite) o.code = Exit::check_failed;
    return;
  }

  // Directional checks at a seeded base control.
  Control u = base_control(f, c, rng);
  auto s = f.solve(u);
  keep(o, s);
  solution_lines(r, s.cost, s.state_residual, s.costate_residual);
  const bool first = c.command == "grad-check";
  const double tol = first ? c.tol.grad_check : c.tol.second_variation_check;
  const double eps = first ? c.tol.fd_step : c.tol.fd_step2;
  CoControl grad = gradient_at(p, g, s);
  r << (first ? "check: adjoint gradient vs central difference" : "check: second variation vs second difference")
    << ", eps " << short_num(eps) << ", tolerance " << short_num(tol) << '\n';
  r << "direction,analytic,finite_difference,relative_error\n";
  bool pass = true;
  for (int d = 0; d < c.directions; ++d) {
    Control du = probe(g, p.m, rng);
    double analytic, fd;
    if (first) {
      analytic = pair(grad, du, g);
      fd = fd_gradient(f, u, du, eps);
    } else {
      analytic = f.second_variation(u, du);
      fd = fd_second(f, u, du, eps);
    }
    const double e = rel(analytic, fd);
    pass = pass && e <= tol;
    r << d << ',' << num(analytic) << ',' << num(fd) << ',' << short_num(e) << '\n';
  }
  r << "result: " << (pass ? "pass" : "fail") << '\n';
  if (!pass) o.code = Exit::check_failed;
}

inline void run_lqc(const RunConfig& c, Outcome& o) {
  lqc::LqcProblem lp = lqc::preset(c.preset, c.params);
  Grid g = build_grid(c, {});
  lqc::LqcOptions opt;
  opt.state.tol = c.tol.state;
  lqc::LqcSolution s = lqc::solve_lqc(lp, g, opt);
  keep(o, s);
  std::ostream& r = o.report;
  r << "J: " << num(s.cost) << '\n';
  r << "outer_iterations: " << s.outer_iterations << '\n';
  r << "stationarity_residual: " << short_num(s.stationarity_residual) << '\n';
  const bool pass = s.stationarity_residual <= c.tol.stationarity;
  r << "result: " << (pass ? "pass" : "fail") << '\n';
  if (!pass) o.code = Exit::check_failed;
}

inline void triple_lines(std::ostream& r, const bilinear_control::Triple& s) {
  r << "J: " << num(s.cost) << '\n';
  r << "sweeps: " << s.sweeps << '\n';
  r << "state_residual: " << short_num(s.state_residual) << '\n';
  r << "costate_residual: " << short_num(s.costate_residual) << '\n';
  r << "stationarity_residual: " << short_num(s.stationarity_residual) << '\n';
}

inline void run_bilinear(const RunConfig& c, Outcome& o) {
  namespace bc = bilinear_control;
  Grid g = build_grid(c, {});
  bc::NcOptions opt;
  opt.state.tol = c.tol.state;
  std::ostream& r = o.report;
  bc::Triple s;
  if (bc::is_first_order(c.preset)) {
    bc::BilinearProblem1 b = bc::preset1(c.preset, c.params);
    s = bc::solve_nc1(b, g, opt);
    triple_lines(r, s);
    pd_lines(r, "", bc::sufficiency1(b, g, s));
  } else {
    bc::BilinearProblem2 b = bc::preset2(c.preset, c.params);
    s = bc::solve_nc2(b, g, opt);
    triple_lines(r, s);
    bc::Sufficiency suf = bc::sufficiency2(b, g, s);
    r << "verdict: " << to_string(suf.verdict) << '\n';
    pd_lines(r, "joint_", suf.joint);
    pd_lines(r, "reduced_", suf.sharpened);
  }
  keep(o, s);
  const bool pass = s.stationarity_residual <= c.tol.stationarity;
  r << "result: " << (pass ? "pass" : "fail") << '\n';
  if (!pass) o.code = Exit::check_failed;
}

}  // namespace detail

/// Runs one validated config in memory. Solver failures come back as
/// Exit::solver_failed with the message in the report; configuration
/// errors propagate as ConfigError.
inline Outcome run(const RunConfig& c) {
  validate(c);
  Outcome o;
  std::ostream& r = o.report;
  r << "command: " << c.command << '\n';
  r << "problem: " << (c.kernels ? std::string("kernels") : c.preset) << '\n';
  r << "seed: " << c.seed << '\n';
  try {
    if (c.command == "lqc-solve") {
      o.time = false;
      r << "grid_nodes: " << build_grid(c, {}).size() << '\n';
      detail::run_lqc(c, o);
    } else if (c.command == "bilinear-solve") {
      o.time = true;
      r << "grid_nodes: " << build_grid(c, {}).size() << '\n';
      detail::run_bilinear(c, o);
    } else {
      auto [p, g] = resolve_problem(c);
      r << "family: " << (p.family == Family::fredholm ? "fredholm" : "volterra") << '\n';
      r << "grid_nodes: " << g.size() << '\n';
      if (p.family == Family::fredholm) {
        fredholm::SolverOptions so;
        so.tol = c.tol.state;
        detail::run_generic(fredholm::Functional(p, g, so), c, o);
      } else {
        o.time = true;
        volterra::SolverOptions so;
        so.tol = c.tol.state;
        detail::run_generic(volterra::Functional(p, g, so), c, o);
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    r << "solver_failure: " << e.what() << '\n';
    o.code = Exit::solver_failed;
  }
  return o;
}

/// Writes the three tables and the report into `dir`. Tables are skipped
/// when the run failed before producing a trajectory.
inline void write_outputs(const Outcome& o, const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (o.state.size()) {
    Grid g = c.command == "lqc-solve" || c.command == "bilinear-solve" ? build_grid(c, {})
                                                                       : resolve_problem(c).second;
    detail::write_table(dir / "state.csv", g, o.time, o.state, o.time ? "y" : "phi");
    detail::write_table(dir / "costate.csv", g, o.time, o.costate, "psi");
    detail::write_table(dir / "control.csv", g, o.time, o.control, "u");
  }
  std::ofstream rep(dir / "report.txt");
  if (!rep) throw Error("cannot write report in '" + dir.string() + "'");
  rep << o.report.str();
}

/// Full pipeline used by the executable: overrides, validation, run, files.
/// Returns the process exit status; messages go to `err`.
inline int execute(RunConfig c, std::ostream& out, std::ostream& err) {
  try {
    Outcome o = run(c);
    write_outputs(o, c, c.out);
    out << o.report.str();
    return static_cast<int>(o.code);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return static_cast<int>(Exit::config_error);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(Exit::solver_failed);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(Exit::solver_failed);
  }
}

}  // namespace intocp::cli
