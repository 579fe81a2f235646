#include "vbcalc/harness.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "vbcalc/scenes.hpp"

namespace vbc {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

[[noreturn]] void invariant(const std::string& msg) { throw ConfigError(ConfigError::Kind::Invariant, msg); }

Vector vector_from_json(const json& j, int size, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != size)
    invariant(what + " must be an array of " + std::to_string(size) + " numbers");
  Vector v(size);
  for (int i = 0; i < size; ++i) v(i) = j[i].get<double>();
  return v;
}

const Field& require_field(const Scene& s, const std::string& name, const std::string& role) {
  if (!s.has_field(name))
    throw ConfigError(ConfigError::Kind::UnknownField,
                      "field '" + name + "' (" + role + ") is not registered in scene '" + s.name + "'");
  return s.field(name);
}

void require_shape(const Field& f, int size, const std::string& name, const std::string& what) {
  if (f.rows * f.cols != size)
    invariant("field '" + name + "' must be " + what + " (" + std::to_string(size) + " entries)");
}

std::shared_ptr<Scene> load_scene(const json& j) {
  try {
    return scene_from_json(j);
  } catch (const SceneConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("unknown scene", 0) == 0) throw ConfigError(ConfigError::Kind::UnknownScene, msg);
    invariant("scene: " + msg);
  }
}

BaseDynamics::Kind base_kind(const std::string& s) {
  if (s == "brownian") return BaseDynamics::Kind::Brownian;
  if (s == "drift") return BaseDynamics::Kind::Drift;
  if (s == "still") return BaseDynamics::Kind::Still;
  invariant("motion.base.kind must be brownian, drift or still");
}

FiberDynamics::Kind fiber_kind(const std::string& s) {
  if (s == "constant") return FiberDynamics::Kind::Constant;
  if (s == "parallel") return FiberDynamics::Kind::Parallel;
  if (s == "sde") return FiberDynamics::Kind::Sde;
  invariant("motion.fiber.kind must be constant, parallel or sde");
}

BundleMap map_from_json(const json& j, const std::shared_ptr<Scene>& source) {
  const std::string kind = j.value("kind", std::string("identity"));
  const int d = source->dim();
  const int n = source->rank();
  std::vector<std::string> base, fiber;
  for (int i = 1; i <= d; ++i) base.push_back("x" + std::to_string(i));
  ScenePtr target = source;
  double eps = j.value("eps", 1e-5);

  if (kind == "identity") {
    BundleMap F = identity_map(source);
    F.eps = eps;
    return F;
  }
  if (kind == "scale") {
    const double c = j.value("factor", 2.0);
    for (int a = 1; a <= n; ++a) fiber.push_back(fmt(c) + "*v" + std::to_string(a));
  } else if (kind == "linear") {
    if (!j.contains("matrix")) invariant("map.kind 'linear' needs 'matrix' (n x n)");
    const json& m = j.at("matrix");
    if (!m.is_array() || static_cast<int>(m.size()) != n) invariant("map.matrix must be n x n");
    for (int r = 0; r < n; ++r) {
      if (!m[r].is_array() || static_cast<int>(m[r].size()) != n) invariant("map.matrix must be n x n");
      std::string e = "0";
      for (int c = 0; c < n; ++c) {
        const std::string coef = m[r][c].is_string() ? m[r][c].get<std::string>() : fmt(m[r][c].get<double>());
        e += "+(" + coef + ")*v" + std::to_string(c + 1);
      }
      fiber.push_back(e);
    }
  } else if (kind == "expr") {
    if (j.contains("target")) target = load_scene(j.at("target"));
    if (!j.contains("fiber")) invariant("map.kind 'expr' needs 'fiber' expressions");
    fiber = j.at("fiber").get<std::vector<std::string>>();
    if (j.contains("base")) base = j.at("base").get<std::vector<std::string>>();
  } else {
    invariant("map.kind must be identity, scale, linear or expr");
  }
  try {
    BundleMap F = expression_map(source, target, base, fiber);
    F.eps = eps;
    return F;
  } catch (const SceneConfigError& e) {
    invariant(std::string("map: ") + e.what());
  }
}

void apply_thresholds(const json& j, Thresholds& t) {
  if (!j.is_object()) invariant("'thresholds' must be an object");
  std::map<std::string, double*> slots = {
      {"z_max", &t.z_max},         {"abort_budget", &t.abort_budget},
      {"order_low", &t.order_low}, {"order_high", &t.order_high},
      {"min_ratio", &t.min_ratio}, {"floor", &t.floor},
      {"fd_floor", &t.fd_floor},   {"strat_fraction", &t.strat_fraction},
      {"commutation_rel", &t.commutation_rel}};
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto slot = slots.find(it.key());
    if (slot == slots.end()) invariant("unknown threshold '" + it.key() + "'");
    *slot->second = it.value().get<double>();
  }
}

void validate_steps(const std::vector<double>& steps, double horizon) {
  if (steps.size() < 3) invariant("convergence needs at least 3 step sizes");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!(steps[i] > 0.0)) invariant("convergence steps must be positive");
    const double k = horizon / steps[i];
    if (std::abs(k - std::round(k)) > 1e-9 * k) invariant("convergence step " + fmt(steps[i]) + " does not divide T");
    if (i > 0) {
      const double r = steps[i - 1] / steps[i];
      if (r < 1.5 || std::abs(r - std::round(r)) > 1e-9 * r)
        invariant("convergence steps must be nested: each must divide the previous one");
    }
  }
}

}  // namespace

const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> checks = {"prop21", "prop22", "prop24", "prop25",
                                                  "prop26", "commutation", "harmonic"};
  return checks;
}

long ExperimentConfig::steps_count() const { return std::lround(horizon / dt); }

std::string ExperimentConfig::hash() const {
  // the output location does not change results
  nlohmann::json hashed = json;
  hashed.erase("output");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : hashed.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig load_config(const std::string& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigError::Kind::Io, "cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(ConfigError::Kind::Parse, "config parse error in '" + path + "': " + e.what());
  }
  return config_from_json(std::move(j), overrides);
}

ExperimentConfig config_from_json(json j, const Overrides& o) {
  if (!j.is_object()) throw ConfigError(ConfigError::Kind::Parse, "config must be a JSON object");
  if (o.paths) j["paths"] = *o.paths;
  if (o.dt) j["dt"] = *o.dt;
  if (o.seed) j["seed"] = *o.seed;
  if (o.out) j["output"] = *o.out;
  if (o.steps) j["steps"] = *o.steps;

  ExperimentConfig cfg;
  try {
    if (!j.contains("check")) throw ConfigError(ConfigError::Kind::UnknownCheck, "config has no 'check'");
    std::string check = j.at("check").get<std::string>();
    const std::string prefix = "convergence:";
    if (check.rfind(prefix, 0) == 0) {
      cfg.convergence = true;
      check = check.substr(prefix.size());
    }
    const auto& known = known_checks();
    if (std::find(known.begin(), known.end(), check) == known.end())
      throw ConfigError(ConfigError::Kind::UnknownCheck,
                        "unknown check '" + j.at("check").get<std::string>() +
                            "' (expected prop21, prop22, prop24, prop25, prop26, commutation, harmonic "
                            "or convergence:<check>)");
    cfg.check = check;

    if (!j.contains("scene")) invariant("config has no 'scene'");
    cfg.scene = load_scene(j.at("scene"));
    const Scene& s = *cfg.scene;
    const int d = s.dim();
    const int n = s.rank();

    cfg.paths = j.value("paths", 100L);
    cfg.horizon = j.value("T", 1.0);
    cfg.dt = j.value("dt", 1e-3);
    cfg.seed = j.value("seed", std::uint64_t{1});
    cfg.output = j.value("output", std::string("out"));
    if (cfg.paths < 1) invariant("invariant violated: paths must be >= 1");
    if (!(cfg.horizon > 0.0) || !(cfg.dt > 0.0)) invariant("invariant violated: T and dt must be positive");
    const double k = cfg.horizon / cfg.dt;
    if (std::abs(k - std::round(k)) > 1e-9 * k || std::round(k) < 1)
      invariant("invariant violated: dt = " + fmt(cfg.dt) + " does not divide T = " + fmt(cfg.horizon));

    if (j.contains("thresholds")) apply_thresholds(j.at("thresholds"), cfg.thresholds);

    // motion
    const json motion = j.value("motion", json::object());
    cfg.motion.x0 = motion.contains("x0") ? vector_from_json(motion.at("x0"), d, "motion.x0") : Vector::Zero(d);
    cfg.motion.v0 = motion.contains("v0") ? vector_from_json(motion.at("v0"), n, "motion.v0") : Vector::Ones(n);
    if (!s.contains(cfg.motion.x0)) invariant("motion.x0 lies outside the chart domain");
    cfg.driver_dim = motion.value("driver_dim", d);
    if (cfg.driver_dim < d) invariant("motion.driver_dim must be at least the base dimension");
    const json base = motion.value("base", json::object());
    cfg.motion.base.kind = base_kind(base.value("kind", std::string("brownian")));
    cfg.motion.base.drift = base.value("drift", std::string());
    cfg.motion.base.diffusion = base.value("diffusion", std::string());
    if (cfg.motion.base.kind == BaseDynamics::Kind::Drift) {
      if (cfg.motion.base.drift.empty()) invariant("motion.base.kind 'drift' needs a 'drift' field");
      require_shape(require_field(s, cfg.motion.base.drift, "base drift"), d, cfg.motion.base.drift, "d x 1");
      if (!cfg.motion.base.diffusion.empty()) {
        const Field& f = require_field(s, cfg.motion.base.diffusion, "base diffusion");
        if (f.rows != d || f.cols != cfg.driver_dim) invariant("base diffusion must be d x driver_dim");
      }
    }
    const json fib = motion.value("fiber", json::object());
    cfg.motion.fiber.kind = fiber_kind(fib.value("kind", std::string("constant")));
    cfg.motion.fiber.drift = fib.value("drift", std::string());
    cfg.motion.fiber.diffusion = fib.value("diffusion", std::string());
    if (cfg.motion.fiber.kind == FiberDynamics::Kind::Sde) {
      if (cfg.motion.fiber.drift.empty()) invariant("motion.fiber.kind 'sde' needs a 'drift' field");
      require_shape(require_field(s, cfg.motion.fiber.drift, "fibre drift"), n, cfg.motion.fiber.drift, "n x 1");
      if (!cfg.motion.fiber.diffusion.empty()) {
        const Field& f = require_field(s, cfg.motion.fiber.diffusion, "fibre diffusion");
        if (f.rows != n || f.cols != cfg.driver_dim) invariant("fibre diffusion must be n x driver_dim");
      }
    }

    cfg.theta = j.value("theta", std::string("theta"));
    cfg.b = j.value("b", std::string("b"));
    cfg.sigma = j.value("sigma", std::string("sigma"));
    cfg.phi = j.value("phi", std::string());
    cfg.v_field = j.value("V", std::string());

    if (check == "prop21" || check == "prop22" || check == "commutation") {
      require_shape(require_field(s, cfg.theta, "theta"), n, cfg.theta, "a covector (n x 1)");
    }
    if (check == "prop24" || check == "prop25" || check == "prop26") {
      cfg.map = map_from_json(j.value("map", json::object()), cfg.scene);
      const Scene& t = *cfg.map->target;
      if (check == "prop25") {
        const Field& b = require_field(t, cfg.b, "b'");
        if (b.rows != t.dim() || b.cols != t.rank()) invariant("field '" + cfg.b + "' must be d' x n'");
      } else {
        require_shape(require_field(t, cfg.theta, "theta'"), t.rank(), cfg.theta, "a covector (n' x 1)");
      }
    }
    if (check == "commutation") {
      const json fam = j.value("family", json::object());
      cfg.family_dx0 = fam.contains("dx0") ? vector_from_json(fam.at("dx0"), d, "family.dx0") : Vector::Unit(d, 0);
      cfg.family_dv0 = fam.contains("dv0") ? vector_from_json(fam.at("dv0"), n, "family.dv0") : Vector::Zero(n);
      cfg.family_da = fam.value("da", 1e-2);
      if (!(cfg.family_da > 0.0)) invariant("family.da must be positive");
    }
    if (check == "harmonic") {
      const json h = j.value("harmonic", json::object());
      cfg.degree = h.value("degree", 1);
      if (cfg.degree != 0 && cfg.degree != 1) invariant("harmonic.degree must be 0 or 1");
      try {
        cfg.mode = gauge_mode_from_string(h.value("mode", std::string("dt")));
      } catch (const std::invalid_argument& e) {
        invariant(std::string("harmonic.") + e.what());
      }
      cfg.martingale = h.value("martingale", true);
      cfg.lemma = h.value("lemma", false);
      cfg.lemma_paths = h.value("lemma_paths", 100L);
      cfg.sample_points = h.value("sample_points", 64);
      cfg.slices = h.value("slices", 10);
      if (cfg.martingale && cfg.paths < 100) invariant("invariant violated: the martingale test needs paths >= 100");
      const int m = cfg.degree == 0 ? n : d * n;
      require_shape(require_field(s, cfg.sigma, "sigma"), m, cfg.sigma, "a section of E^p");
      require_shape(require_field(s, cfg.theta, "theta"), m, cfg.theta, "a covector on E^p");
      if (!cfg.phi.empty()) {
        const Field& f = require_field(s, cfg.phi, "phi");
        if (f.rows != m || f.cols != m) invariant("field '" + cfg.phi + "' must be an m x m endomorphism of E^p");
      }
      if (!cfg.v_field.empty()) {
        const Field& f = require_field(s, cfg.v_field, "V");
        if (f.rows != m || f.cols != m) invariant("field '" + cfg.v_field + "' must be an m x m endomorphism of E^p");
      }
    }

    if (j.contains("steps")) cfg.steps = j.at("steps").get<std::vector<double>>();
    if (cfg.convergence) {
      if (check == "harmonic") invariant("convergence studies are defined for pathwise checks only");
      validate_steps(cfg.steps, cfg.horizon);
    }
  } catch (const json::exception& e) {
    throw ConfigError(ConfigError::Kind::Parse, std::string("config: ") + e.what());
  }
  cfg.json = std::move(j);
  return cfg;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.median = median(values);
  a.iqr = quantile(values, 0.75) - quantile(values, 0.25);
  a.mean = mean(values);
  a.stderr_mean = standard_error(values);
  return a;
}

double ExperimentReport::value(const std::string& name) const {
  for (const auto& [k, v] : summary)
    if (k == name) return v;
  throw std::out_of_range("report has no summary value '" + name + "'");
}

namespace {

/// Column names and a per-level evaluator whose last value is the residual.
struct Evaluator {
  std::vector<std::string> columns;
  std::function<std::vector<double>(const TimeGrid&, const WienerDriver&)> fn;
  double floor = 0.0;
};

Evaluator make_evaluator(const ExperimentConfig& cfg) {
  const Scene& s = *cfg.scene;
  Evaluator ev;
  ev.floor = cfg.thresholds.floor;
  auto simulate = [&cfg](const TimeGrid& g, const WienerDriver& w) {
    return simulate_bundle_semimartingale(*cfg.scene, cfg.motion, g, w);
  };
  if (cfg.check == "prop21") {
    ev.columns = {"frame", "connector", "residual"};
    ev.fn = [&, simulate](const TimeGrid& g, const WienerDriver& w) {
      const BundlePath path = simulate(g, w);
      const Field& th = s.field(cfg.theta);
      const long K = g.steps();
      const double a = covariant_stratonovich_frame(s, th, decompose(s, path))(K);
      const double b = covariant_stratonovich_connector(s, th, path)(K);
      return std::vector<double>{a, b, std::abs(a - b)};
    };
  } else if (cfg.check == "prop22") {
    ev.columns = {"stratonovich", "ito", "residual"};
    ev.fn = [&, simulate](const TimeGrid& g, const WienerDriver& w) {
      const FramedPath fp = decompose(s, simulate(g, w));
      const Field& th = s.field(cfg.theta);
      const long K = g.steps();
      return std::vector<double>{covariant_stratonovich_frame(s, th, fp)(K), covariant_ito(s, th, fp)(K),
                                 conversion_residual(s, th, fp)};
    };
  } else if (cfg.check == "prop24" || cfg.check == "prop25" || cfg.check == "prop26") {
    ev.columns = {"lhs", "rhs", "residual"};
    ev.floor = cfg.thresholds.fd_floor;
    const std::string check = cfg.check;
    ev.fn = [&, simulate, check](const TimeGrid& g, const WienerDriver& w) {
      const FramedPath fp = decompose(s, simulate(g, w));
      const BundleMap& F = *cfg.map;
      ResidualParts parts;
      if (check == "prop24")
        parts = bundle_map_strat_parts(F, F.target->field(cfg.theta), fp);
      else if (check == "prop25")
        parts = bundle_map_mixed_parts(F, F.target->field(cfg.b), fp);
      else
        parts = bundle_map_ito_parts(F, F.target->field(cfg.theta), fp);
      return std::vector<double>{parts.lhs, parts.rhs, parts.residual()};
    };
  } else if (cfg.check == "commutation") {
    ev.columns = {"defect", "curvature_term", "residual"};
    ev.fn = [&](const TimeGrid& g, const WienerDriver& w) {
      // Δa is refined together with Δt
      const double da = cfg.family_da * g.dt(0) / cfg.dt;
      const std::vector<double> params = {-da, 0.0, da};
      const FamilyOfPaths fam = make_family(s, cfg.motion, g, w, params, cfg.family_dx0, cfg.family_dv0);
      const CommutationResult r = commutation_defect(s, s.field(cfg.theta), fam, 1);
      return std::vector<double>{r.defect, r.curvature_term, std::abs(r.defect - r.curvature_term)};
    };
  } else {
    throw std::logic_error("no pathwise evaluator for check '" + cfg.check + "'");
  }
  return ev;
}

struct LevelResults {
  std::vector<std::vector<double>> values;  // [path][level * columns + c]
  std::vector<char> ok;
  long aborted = 0;
  std::vector<std::string> abort_messages;
};

/// Evaluate every path at each level; levels are coarsenings of a shared
/// fine driver (factor[i] fine steps per level-i step).
LevelResults evaluate_levels(const ExperimentConfig& cfg, const Evaluator& ev, double fine_dt,
                             const std::vector<long>& factors) {
  const long fine_steps = std::lround(cfg.horizon / fine_dt);
  const TimeGrid fine_grid = TimeGrid::uniform(cfg.horizon, fine_steps);
  const std::size_t N = static_cast<std::size_t>(cfg.paths);
  const std::size_t C = ev.columns.size();
  LevelResults res;
  res.values.assign(N, std::vector<double>(C * factors.size(), kNaN));
  res.ok.assign(N, 0);
  std::vector<std::string> messages(N);
  parallel_for(N, [&](std::size_t i) {
    try {
      const WienerDriver fine = sample_wiener(fine_grid, cfg.driver_dim, path_seed(cfg.seed, i));
      for (std::size_t l = 0; l < factors.size(); ++l) {
        const TimeGrid g = factors[l] == 1 ? fine_grid : coarsen(fine_grid, factors[l]);
        const WienerDriver w = factors[l] == 1 ? fine : coarsen(fine, factors[l]);
        const auto v = ev.fn(g, w);
        std::copy(v.begin(), v.end(), res.values[i].begin() + l * C);
      }
      res.ok[i] = 1;
    } catch (const DomainError& e) {
      messages[i] = e.what();
    } catch (const FrameDegeneracy& e) {
      messages[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < N; ++i) {
    if (!res.ok[i]) {
      ++res.aborted;
      if (res.abort_messages.size() < 5) res.abort_messages.push_back("path " + std::to_string(i) + ": " + messages[i]);
    }
  }
  return res;
}

std::vector<double> kept_column(const LevelResults& res, std::size_t index) {
  std::vector<double> out;
  for (std::size_t i = 0; i < res.values.size(); ++i)
    if (res.ok[i]) out.push_back(res.values[i][index]);
  return out;
}

std::vector<double> abs_values(std::vector<double> v) {
  for (double& x : v) x = std::abs(x);
  return v;
}

void add_aggregate(ExperimentReport& rep, const std::string& prefix, const std::vector<double>& v) {
  const Aggregate a = aggregate(v);
  rep.summary.emplace_back(prefix + "_median", a.median);
  rep.summary.emplace_back(prefix + "_iqr", a.iqr);
  rep.summary.emplace_back(prefix + "_mean", a.mean);
  rep.summary.emplace_back(prefix + "_stderr", a.stderr_mean);
}

bool abort_budget_exceeded(const ExperimentConfig& cfg, long aborted) {
  return static_cast<double>(aborted) > cfg.thresholds.abort_budget * static_cast<double>(cfg.paths);
}

void finish(ExperimentReport& rep, const ExperimentConfig& cfg) {
  if (abort_budget_exceeded(cfg, rep.aborted)) {
    rep.pass = false;
    rep.exit_code = 3;
    rep.notes.push_back("abort budget exceeded: " + std::to_string(rep.aborted) + " of " +
                        std::to_string(cfg.paths) + " paths left the domain or lost frame invertibility");
  } else {
    rep.exit_code = rep.pass ? 0 : 1;
  }
}

ExperimentReport run_pathwise(const ExperimentConfig& cfg) {
  const Evaluator ev = make_evaluator(cfg);
  const Thresholds& th = cfg.thresholds;
  ExperimentReport rep;
  rep.check = cfg.check;
  rep.config_hash = cfg.hash();
  rep.seed = cfg.seed;
  rep.paths = cfg.paths;

  const LevelResults res = evaluate_levels(cfg, ev, cfg.dt / 2.0, {2, 1});
  const std::size_t C = ev.columns.size();
  rep.aborted = res.aborted;
  for (const auto& m : res.abort_messages) rep.notes.push_back("aborted " + m);
  rep.columns = ev.columns;
  rep.columns.push_back("residual_half_dt");
  for (std::size_t i = 0; i < res.values.size(); ++i) {
    if (!res.ok[i]) continue;
    PathRow row{static_cast<long>(i), path_seed(cfg.seed, i), {}};
    row.values.assign(res.values[i].begin(), res.values[i].begin() + C);
    row.values.push_back(res.values[i][C + C - 1]);
    rep.rows.push_back(std::move(row));
  }

  const std::vector<double> resid = kept_column(res, C - 1);
  const std::vector<double> resid_half = kept_column(res, 2 * C - 1);
  rep.summary.emplace_back("dt", cfg.dt);
  rep.summary.emplace_back("paths_ok", static_cast<double>(resid.size()));
  rep.summary.emplace_back("paths_aborted", static_cast<double>(rep.aborted));
  add_aggregate(rep, "residual", resid);
  rep.summary.emplace_back("residual_half_dt_median", median(resid_half));
  const double m1 = median(resid);
  const double m2 = median(resid_half);
  const double ratio = m2 > 0.0 ? m1 / m2 : (m1 > 0.0 ? std::numeric_limits<double>::infinity() : kNaN);
  rep.summary.emplace_back("refinement_ratio", ratio);

  const bool exact = m1 < ev.floor && m2 < ev.floor;
  bool pass = exact || ratio >= th.min_ratio;
  if (exact) rep.notes.push_back("residual below the exactness floor " + short_fmt(ev.floor));
  else if (!pass) rep.notes.push_back("refinement ratio " + short_fmt(ratio) + " below " + short_fmt(th.min_ratio));

  if (cfg.check == "prop22") {
    const double strat = median(abs_values(kept_column(res, 0)));
    rep.summary.emplace_back("stratonovich_abs_median", strat);
    rep.summary.emplace_back("residual_fraction", m1 / strat);
    if (!(m1 < th.strat_fraction * strat)) {
      pass = false;
      rep.notes.push_back("median conversion residual is not below " + short_fmt(th.strat_fraction) +
                          " of the median |Stratonovich terminal|");
    }
  }
  if (cfg.check == "commutation") {
    const std::vector<double> curv = abs_values(kept_column(res, 1));
    const std::vector<double> defect = abs_values(kept_column(res, 0));
    const double mc = median(curv);
    rep.summary.emplace_back("defect_abs_median", median(defect));
    rep.summary.emplace_back("curvature_abs_median", mc);
    if (mc > th.floor) {
      const double rel = m1 / mc;
      rep.summary.emplace_back("relative_gap", rel);
      pass = rel < th.commutation_rel;
      rep.notes.push_back(pass ? "defect matches the curvature term"
                               : "defect differs from the curvature term by more than " +
                                     short_fmt(th.commutation_rel * 100) + "%");
    }
  }
  rep.pass = pass;
  finish(rep, cfg);
  return rep;
}

ExperimentReport run_harmonic(const ExperimentConfig& cfg) {
  const Scene& s = *cfg.scene;
  ExperimentReport rep;
  rep.check = cfg.check;
  rep.config_hash = cfg.hash();
  rep.seed = cfg.seed;
  rep.paths = cfg.paths;

  HarmonicConfig hc;
  hc.paths = cfg.martingale ? cfg.paths : 0;
  hc.horizon = cfg.horizon;
  hc.dt = cfg.dt;
  hc.seed = cfg.seed;
  hc.x0 = cfg.motion.x0;
  hc.mode = cfg.mode;
  hc.martingale = cfg.martingale;
  hc.lemma = cfg.lemma;
  hc.lemma_paths = cfg.lemma_paths;
  hc.sample_points = cfg.sample_points;
  hc.slices = cfg.slices;
  hc.z_max = cfg.thresholds.z_max;
  hc.min_ratio = cfg.thresholds.min_ratio;
  hc.floor = cfg.thresholds.fd_floor;
  const Field* phi = cfg.phi.empty() ? nullptr : &s.field(cfg.phi);
  const Field* v = cfg.v_field.empty() ? nullptr : &s.field(cfg.v_field);
  const HarmonicReport hr =
      harmonicity_check(cfg.scene, PFormSection{cfg.degree, s.field(cfg.sigma)}, s.field(cfg.theta), phi, v, hc);

  rep.aborted = hr.aborted;
  rep.summary.emplace_back("dt", cfg.dt);
  rep.summary.emplace_back("max_abs_laplacian", hr.max_laplacian);
  if (cfg.martingale) {
    rep.columns = {"terminal"};
    for (std::size_t i = 0; i < hr.terminals.size(); ++i)
      rep.rows.push_back(PathRow{hr.path_ids[i], hr.seeds[i], {hr.terminals[i]}});
    rep.martingale = hr.stat;
    rep.summary.emplace_back("paths_ok", static_cast<double>(hr.terminals.size()));
    rep.summary.emplace_back("paths_aborted", static_cast<double>(hr.aborted));
    rep.summary.emplace_back("terminal_mean", hr.stat.mean);
    rep.summary.emplace_back("terminal_stderr", hr.stat.stderr_mean);
    rep.summary.emplace_back("z", hr.stat.z);
    rep.summary.emplace_back("trend_t", hr.stat.trend_t);
    rep.summary.emplace_back("martingale_verdict", hr.stat.verdict ? 1.0 : 0.0);
    rep.notes.push_back(std::string("gauge mode: ") + to_string(cfg.mode));
    if (!hr.stat.verdict) rep.notes.push_back("martingale test rejected (|z| or |trend t| >= " + short_fmt(cfg.thresholds.z_max) + ")");
  }
  if (cfg.lemma) {
    for (std::size_t i = 0; i < hr.lemma_gap_coarse.size(); ++i)
      rep.lemma_rows.push_back(PathRow{static_cast<long>(i), path_seed(cfg.seed ^ 0x4c454d4dULL, i),
                                       {hr.lemma_gap_coarse[i], hr.lemma_gap_fine[i]}});
    rep.summary.emplace_back("lemma_gap_median", hr.lemma_median_coarse);
    rep.summary.emplace_back("lemma_gap_half_dt_median", hr.lemma_median_fine);
    rep.summary.emplace_back("lemma_ratio", hr.lemma_ratio);
    if (!hr.lemma_pass) rep.notes.push_back("lemma gap refinement ratio below " + short_fmt(cfg.thresholds.min_ratio));
  }
  rep.pass = hr.pass;
  finish(rep, cfg);
  return rep;
}

}  // namespace

ExperimentReport run_check(const ExperimentConfig& cfg) {
  if (cfg.convergence) return convergence_study(cfg, cfg.steps);
  if (cfg.check == "harmonic") return run_harmonic(cfg);
  return run_pathwise(cfg);
}

ExperimentReport convergence_study(const ExperimentConfig& cfg, const std::vector<double>& steps_in) {
  if (cfg.check == "harmonic") invariant("convergence studies are defined for pathwise checks only");
  std::vector<double> steps = steps_in;
  validate_steps(steps, cfg.horizon);
  const Evaluator ev = make_evaluator(cfg);
  const double fine_dt = steps.back();
  std::vector<long> factors;
  for (double h : steps) factors.push_back(std::lround(h / fine_dt));

  ExperimentReport rep;
  rep.check = "convergence:" + cfg.check;
  rep.config_hash = cfg.hash();
  rep.seed = cfg.seed;
  rep.paths = cfg.paths;
  const LevelResults res = evaluate_levels(cfg, ev, fine_dt, factors);
  rep.aborted = res.aborted;
  for (const auto& m : res.abort_messages) rep.notes.push_back("aborted " + m);
  const std::size_t C = ev.columns.size();
  for (std::size_t l = 0; l < steps.size(); ++l) rep.columns.push_back("residual_dt" + std::to_string(l));
  for (std::size_t i = 0; i < res.values.size(); ++i) {
    if (!res.ok[i]) continue;
    PathRow row{static_cast<long>(i), path_seed(cfg.seed, i), {}};
    for (std::size_t l = 0; l < steps.size(); ++l) row.values.push_back(res.values[i][l * C + C - 1]);
    rep.rows.push_back(std::move(row));
  }

  std::vector<double> lx, ly;
  bool all_exact = true;
  for (std::size_t l = 0; l < steps.size(); ++l) {
    ConvergenceRow row;
    row.dt = steps[l];
    row.median_residual = median(kept_column(res, l * C + C - 1));
    row.order = l == 0 ? kNaN
                       : std::log(rep.convergence.back().median_residual / row.median_residual) /
                             std::log(steps[l - 1] / steps[l]);
    rep.convergence.push_back(row);
    if (row.median_residual >= ev.floor) {
      all_exact = false;
      lx.push_back(std::log(row.dt));
      ly.push_back(std::log(row.median_residual));
    }
  }
  rep.exact = all_exact;
  if (!all_exact && lx.size() >= 2) {
    const double mx = mean(lx), my = mean(ly);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    rep.slope = sxy / sxx;
  } else {
    rep.slope = kNaN;
  }
  rep.summary.emplace_back("levels", static_cast<double>(steps.size()));
  rep.summary.emplace_back("paths_ok", static_cast<double>(rep.rows.size()));
  rep.summary.emplace_back("paths_aborted", static_cast<double>(rep.aborted));
  rep.summary.emplace_back("slope", rep.slope);
  const Thresholds& th = cfg.thresholds;
  if (all_exact) {
    rep.pass = true;
    rep.notes.push_back("slope: exact (all medians below " + short_fmt(ev.floor) + ")");
  } else {
    rep.pass = rep.slope >= th.order_low && rep.slope <= th.order_high;
    rep.notes.push_back("estimated order " + short_fmt(rep.slope) + (rep.pass ? " inside " : " outside ") + "[" +
                        short_fmt(th.order_low) + ", " + short_fmt(th.order_high) + "]");
  }
  finish(rep, cfg);
  return rep;
}

void write_paths_csv(std::ostream& os, const ExperimentReport& rep) {
  os << "# vbcalc " << kVersion << "\n";
  os << "# config_hash " << rep.config_hash << "\n";
  os << "# check " << rep.check << "\n";
  os << "# seed " << rep.seed << "\n";
  os << "path_id,seed";
  for (const auto& c : rep.columns) os << "," << c;
  os << "\n";
  for (const auto& row : rep.rows) {
    os << row.id << "," << row.seed;
    for (double v : row.values) os << "," << fmt(v);
    os << "\n";
  }
}

void write_convergence_csv(std::ostream& os, const ExperimentReport& rep) {
  os << "# vbcalc " << kVersion << "\n";
  os << "# config_hash " << rep.config_hash << "\n";
  os << "dt,median_residual,order\n";
  for (const auto& r : rep.convergence) os << fmt(r.dt) << "," << fmt(r.median_residual) << "," << fmt(r.order) << "\n";
  os << "# slope " << (rep.exact ? std::string("exact") : fmt(rep.slope)) << "\n";
}

void write_summary(std::ostream& os, const ExperimentReport& rep) {
  os << "vbcalc " << kVersion << "\n";
  os << "check        " << rep.check << "\n";
  os << "config hash  " << rep.config_hash << "\n";
  os << "seed         " << rep.seed << "\n";
  os << "paths        " << rep.paths << " (" << rep.aborted << " aborted)\n";
  for (const auto& [k, v] : rep.summary) os << "  " << k << " = " << short_fmt(v) << "\n";
  if (!rep.convergence.empty()) {
    os << "  dt            median residual   order\n";
    for (const auto& r : rep.convergence)
      os << "  " << short_fmt(r.dt) << "\t" << short_fmt(r.median_residual) << "\t" << short_fmt(r.order) << "\n";
  }
  for (const auto& n : rep.notes) os << "note: " << n << "\n";
  os << "result       " << (rep.pass ? "PASS" : "FAIL") << " (exit " << rep.exit_code << ")\n";
}

void write_report(const ExperimentReport& rep, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    return f;
  };
  {
    auto f = open("paths.csv");
    write_paths_csv(f, rep);
  }
  {
    auto f = open("summary.txt");
    write_summary(f, rep);
  }
  if (!rep.convergence.empty()) {
    auto f = open("convergence.csv");
    write_convergence_csv(f, rep);
  }
  if (!rep.lemma_rows.empty()) {
    auto f = open("lemma.csv");
    f << "# vbcalc " << kVersion << "\n# config_hash " << rep.config_hash << "\npath_id,seed,gap_dt,gap_half_dt\n";
    for (const auto& row : rep.lemma_rows)
      f << row.id << "," << row.seed << "," << fmt(row.values[0]) << "," << fmt(row.values[1]) << "\n";
  }
}

}  // namespace vbc
