// One PASS/FAIL line per acceptance criterion; exit status 0 only when all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "support.hpp"
#include "vbcalc/covariant.hpp"
#include "vbcalc/harness.hpp"

using namespace vbc;
namespace t = vbc::test;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

ExperimentConfig config(const std::string& name, const Overrides& o = {}) {
  return load_config(t::source_path("configs/" + name + ".json"), o);
}

std::string paths_csv(const ExperimentReport& r) {
  std::ostringstream os;
  write_paths_csv(os, r);
  return os.str();
}

std::string summary_text(const ExperimentReport& r) {
  std::ostringstream os;
  write_summary(os, r);
  return os.str();
}

void single_thread(bool on) {
  if (on) setenv("VBCALC_THREADS", "1", 1);
  else unsetenv("VBCALC_THREADS");
}

// ---------------------------------------------------------------------------

Outcome flat_reduction() {
  const auto start = Clock::now();
  ExperimentConfig cfg = config("flat_exact");
  const Scene& s = *cfg.scene;
  const Field& theta = s.field(cfg.theta);
  const TimeGrid grid = TimeGrid::uniform(cfg.horizon, cfg.steps_count());
  double worst = 0.0;
  for (long i = 0; i < 100; ++i) {
    BundlePath p = simulate_bundle_semimartingale(s, cfg.motion, grid,
                                                  sample_wiener(grid, cfg.driver_dim, path_seed(cfg.seed, i)));
    const long K = p.steps();
    Matrix th(K + 1, s.rank());
    for (long k = 0; k <= K; ++k) th.row(k) = theta.vec(p.x(k), p.v(k)).transpose();
    double mid = 0.0;
    for (long k = 0; k < K; ++k)
      mid += theta.vec(0.5 * (p.x(k) + p.x(k + 1)), 0.5 * (p.v(k) + p.v(k + 1))).dot(p.v(k + 1) - p.v(k));
    FramedPath fp = decompose(s, p);
    worst = std::max({worst,
                      std::abs(covariant_stratonovich_frame(s, theta, fp)(K) - stratonovich_sum(th, p.fiber)(K)),
                      std::abs(covariant_stratonovich_connector(s, theta, p)(K) - mid),
                      std::abs(covariant_ito(s, theta, fp)(K) - ito_sum(th, p.fiber)(K))});
  }
  const double secs = seconds_since(start);
  return {worst < 1e-12 && secs < 10.0,
          "max deviation " + num(worst) + " over 100 paths (< 1e-12), " + num(secs) + " s (< 10 s)"};
}

/// Ratios of median residuals along the ladder Δt ∈ {4, 2, 1}·10⁻³.
Outcome ladder(const std::string& name, const std::string& check, double limit_secs, ExperimentReport* at_fine) {
  const auto start = Clock::now();
  Overrides o;
  o.paths = 200;
  ExperimentConfig cfg = config(name, o);
  cfg.check = check;
  ExperimentReport r = convergence_study(cfg, {4e-3, 2e-3, 1e-3});
  const double secs = seconds_since(start);
  bool ok = secs < limit_secs && r.aborted == 0;
  std::string detail = "medians";
  for (const auto& row : r.convergence) detail += " " + num(row.median_residual);
  detail += ", ratios";
  for (std::size_t l = 1; l < r.convergence.size(); ++l) {
    const double ratio = r.convergence[l - 1].median_residual / r.convergence[l].median_residual;
    ok = ok && ratio >= 1.6;
    detail += " " + num(ratio);
  }
  detail += " (>= 1.6), " + num(secs) + " s";
  if (at_fine) {
    Overrides f;
    f.paths = 200;
    f.dt = 1e-3;
    ExperimentConfig c = config(name, f);
    *at_fine = run_check(c);
  }
  return {ok, detail};
}

Outcome prop21() { return ladder("prop21_twisted", "prop21", 120.0, nullptr); }

Outcome prop22() {
  ExperimentReport fine;
  Outcome o = ladder("prop22_twisted", "prop22", 1e9, &fine);
  const double frac = fine.value("residual_fraction");
  o.pass = o.pass && frac < 0.05;
  o.detail += "; residual/|Strat| at dt=1e-3 " + num(frac) + " (< 0.05)";
  return o;
}

Outcome bundle_maps() {
  auto s = t::fielded_scene("twisted-flat", 1.0);
  BundleMap id = identity_map(s);
  double worst = 0.0;
  std::vector<BundlePath> deterministic{t::smooth_path(1.0, 500), t::smooth_path(2.0, 300)};
  {
    SdeSpec spec = t::sde_motion();
    spec.base.kind = BaseDynamics::Kind::Drift;
    s->add_field("drift", make_expr_field(FieldKind::OneForm, 2, 1, {"cos(x2)", "0.5"}, 2, 2, {}));
    spec.base.drift = "drift";
    spec.fiber.diffusion.clear();
    TimeGrid g = TimeGrid::uniform(1.0, 1000);
    deterministic.push_back(simulate_bundle_semimartingale(*s, spec, g, sample_wiener(g, 2, 1)));
  }
  for (const auto& p : deterministic) {
    FramedPath fp = decompose(*s, p);
    worst = std::max({worst, bundle_map_strat_residual(id, s->field("theta"), fp),
                      bundle_map_mixed_residual(id, s->field("b"), fp),
                      bundle_map_ito_residual(id, s->field("theta"), fp)});
  }
  bool ok = worst < 1e-10;
  std::string detail = "identity max residual " + num(worst) + " (< 1e-10)";
  for (const char* name : {"prop24_affine", "prop25_linear", "prop26_linear"}) {
    Overrides o;
    o.paths = 200;
    ExperimentReport r = run_check(config(name, o));
    const double ratio = r.value("refinement_ratio");
    ok = ok && r.pass && ratio >= 1.6;
    detail += "; " + r.check + " ratio " + num(ratio);
  }
  detail += " (>= 1.6)";
  return {ok, detail};
}

Outcome transport() {
  const double lambda = 1.3;
  auto s = make_twisted_flat_scene(lambda);
  Matrix J(2, 2);
  J << 0, 1, -1, 0;
  const double x2 = 0.8, a = -0.4, b = 0.9;
  const long steps = 13000;  // Δt = 10⁻⁴
  Matrix u = Matrix::Identity(2, 2);
  Vector x(2), dx(2);
  x << a, x2;
  dx << (b - a) / steps, 0.0;
  for (long k = 0; k < steps; ++k) {
    u = transport_step(*s, x, dx, u);
    x += dx;
  }
  const Matrix oracle = (-(b - a) * lambda * x2 * J).exp();
  const double err = (u - oracle).cwiseAbs().maxCoeff();

  auto sphere = make_sphere_stereo_scene();
  const double area = 0.1;
  const double rho = std::sqrt(area / (4.0 * M_PI - area));
  const long loop = 20000;
  Matrix f = Matrix::Identity(2, 2);
  for (long k = 0; k < loop; ++k) {
    const double t0 = 2.0 * M_PI * k / loop, t1 = 2.0 * M_PI * (k + 1) / loop;
    Vector p(2), q(2);
    p << rho * std::cos(t0), rho * std::sin(t0);
    q << rho * std::cos(t1), rho * std::sin(t1);
    f = transport_step(*sphere, p, q - p, f);
  }
  const double angle = std::abs(std::atan2(f(1, 0), f(0, 0)));
  const double rel = std::abs(angle - area) / area;
  return {err < 1e-6 && rel < 0.05, "exp oracle error " + num(err) + " (< 1e-6); holonomy " + num(angle) +
                                        " vs area 0.1, rel " + num(rel) + " (< 0.05)"};
}

Outcome curvature() {
  const double lambda = 1.0;
  auto s = make_twisted_flat_scene(lambda);
  Matrix J(2, 2);
  J << 0, 1, -1, 0;
  double twisted = 0.0, sphere_err = 0.0, antisym = 0.0;
  bool sphere_ok = true;
  for (double h : {1e-2, 1e-3}) {
    for (const Vector& x : {Vector(Vector::Zero(2)), Vector((Vector(2) << 0.7, -1.1).finished())}) {
      CurvatureValue r = bundle_curvature(*s, x, h);
      twisted = std::max(twisted, (r(0, 1) + lambda * J).cwiseAbs().maxCoeff() / (h * h));
      antisym = std::max(antisym, (r(0, 1) + r(1, 0)).norm() + r(0, 0).norm() + r(1, 1).norm());
    }
  }
  auto sph = make_sphere_stereo_scene();
  for (double h : {1e-2, 3e-3}) {
    for (const Vector& x : {Vector(Vector::Zero(2)), Vector((Vector(2) << 0.4, -0.8).finished()),
                            Vector((Vector(2) << 1.5, 0.3).finished())}) {
      CurvatureValue r = bundle_curvature(*sph, x, h);
      const Matrix g = sph->metric(x);
      const double k = (g * r(0, 1).col(1))(0) / g.determinant();
      sphere_err = std::max(sphere_err, std::abs(k - 1.0) / (h * h));
      sphere_ok = sphere_ok && std::abs(k - 1.0) < 10.0 * h * h;
      CurvatureValue rs = bundle_curvature(*sph, x, h);
      antisym = std::max(antisym, (rs(0, 1) + rs(1, 0)).norm());
    }
  }
  return {twisted < 1.0 && sphere_ok && antisym == 0.0,
          "twisted |R12 + lambda J| / h^2 " + num(twisted) + "; sphere |K - 1| / h^2 " + num(sphere_err) +
              " (< 10); antisymmetry defect " + num(antisym)};
}

Outcome commutation() {
  ExperimentReport flat = run_check(config("commutation_flat"));
  ExperimentReport twisted = run_check(config("commutation_twisted"));
  const double ratio = flat.value("refinement_ratio");
  const double rel = twisted.value("relative_gap");
  return {flat.pass && ratio >= 1.6 && twisted.pass && rel < 0.1,
          "flat defect ratio " + num(ratio) + " (>= 1.6); twisted |defect - curvature| / |curvature| " + num(rel) +
              " (< 0.1)"};
}

Outcome theorem_martingale() {
  int dx1_pass = 0, sin_fail = 0;
  double slowest = 0.0;
  std::string zs;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const char* name : {"harmonic_torus_dx1", "harmonic_torus_sin"}) {
      Overrides o;
      o.seed = 1000 + seed;
      const auto start = Clock::now();
      ExperimentReport r = run_check(config(name, o));
      slowest = std::max(slowest, seconds_since(start));
      const double z = r.value("z");
      if (std::string(name) == "harmonic_torus_dx1") dx1_pass += std::abs(z) < 3.0;
      else sin_fail += std::abs(z) > 3.0;
    }
  }
  return {dx1_pass >= 19 && sin_fail >= 19 && slowest < 300.0,
          "dx1 |z| < 3 in " + std::to_string(dx1_pass) + "/20, sin(x1)dx1 |z| > 3 in " + std::to_string(sin_fail) +
              "/20 (>= 19), slowest run " + num(slowest) + " s (< 300 s)"};
}

Outcome lemma() {
  ExperimentReport r = run_check(config("lemma_twisted"));
  const double ratio = r.value("lemma_ratio");
  return {r.pass && ratio >= 1.6, "gap medians " + num(r.value("lemma_gap_median")) + " -> " +
                                      num(r.value("lemma_gap_half_dt_median")) + ", ratio " + num(ratio) +
                                      " (>= 1.6)"};
}

Outcome reproducibility() {
  bool bytes = true, aggregates = true;
  std::string detail;
  const std::vector<std::pair<const char*, long>> runs{
      {"prop21_twisted", 40}, {"prop26_linear", 40}, {"commutation_flat", 40}, {"lemma_twisted", 30},
      {"harmonic_torus_sin", 500}};
  for (const auto& [name, paths] : runs) {
    Overrides o;
    o.paths = paths;
    ExperimentConfig cfg = config(name, o);
    single_thread(true);
    ExperimentReport a = run_check(cfg);
    ExperimentReport b = run_check(cfg);
    single_thread(false);
    setenv("VBCALC_THREADS", "4", 1);
    ExperimentReport c = run_check(cfg);
    unsetenv("VBCALC_THREADS");
    bytes = bytes && paths_csv(a) == paths_csv(b) && summary_text(a) == summary_text(b);
    aggregates = aggregates && summary_text(a) == summary_text(c);
  }
  detail = std::string("single-thread CSVs ") + (bytes ? "identical" : "differ") + "; 4-thread aggregates " +
           (aggregates ? "identical" : "differ") + " (5 configs)";
  return {bytes && aggregates, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"flat reduction", flat_reduction},
      {"frame vs connector routes", prop21},
      {"Ito-Stratonovich conversion", prop22},
      {"bundle maps", bundle_maps},
      {"parallel transport", transport},
      {"curvature", curvature},
      {"commutation", commutation},
      {"harmonic martingale test", theorem_martingale},
      {"gauge lemma", lemma},
      {"reproducibility", reproducibility},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
