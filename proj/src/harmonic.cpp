#include "vbcalc/harmonic.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace vbc {

namespace {

using FlatFn = std::function<Vector(const Vector&)>;

int form_rank(const Scene& s, int p) { return p == 0 ? s.rank() : s.dim() * s.rank(); }

void require_degree(int p) {
  if (p != 0 && p != 1) throw std::invalid_argument("p-form degree must be 0 or 1");
}

Matrix inverse_metric(const Scene& s, const Vector& x) {
  if (s.manifold.euclidean()) return Matrix::Identity(s.dim(), s.dim());
  return s.metric(x).llt().solve(Matrix::Identity(s.dim(), s.dim()));
}

/// Columns ∇_jf of a flattened E^p section, m×d.
Matrix covariant_jacobian(const Scene& s, int p, const FlatFn& f, const Vector& x, double h) {
  const int d = s.dim();
  const Vector f0 = f(x);
  const ConnectionValue gamma = form_connection(s, p, x);
  Matrix out(f0.size(), d);
  for (int j = 0; j < d; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    out.col(j) = (f(xp) - f(xm)) / (2.0 * h) + gamma[j] * f0;
  }
  return out;
}

Vector codifferential_of(const Scene& s, const FlatFn& sigma, const Vector& x, double h) {
  const int d = s.dim();
  const int n = s.rank();
  const Matrix jac = covariant_jacobian(s, 1, sigma, x, h);
  const Matrix ginv = inverse_metric(s, x);
  Vector out = Vector::Zero(n);
  for (int j = 0; j < d; ++j)
    for (int l = 0; l < d; ++l)
      if (ginv(j, l) != 0.0) out -= ginv(j, l) * jac.col(j).segment(l * n, n);
  return out;
}

/// ω_ij = ∇_iσ_j − ∇_jσ_i for a V-valued 1-form, entry (i·d + j)·n + α.
Vector curl_of(const Scene& s, const FlatFn& sigma, const Vector& x, double h) {
  const int d = s.dim();
  const int n = s.rank();
  const Matrix jac = covariant_jacobian(s, 1, sigma, x, h);
  Vector omega(d * d * n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      omega.segment((i * d + j) * n, n) = jac.col(i).segment(j * n, n) - jac.col(j).segment(i * n, n);
  return omega;
}

/// (δω)_l = −g^{ij}(∇_iω)_{jl} for a V-valued 2-form.
Vector codifferential_2form(const Scene& s, const FlatFn& omega_fn, const Vector& x, double h) {
  const int d = s.dim();
  const int n = s.rank();
  const Vector omega = omega_fn(x);
  const Matrix ginv = inverse_metric(s, x);
  const LeviCivitaValue lc = s.levi_civita(x);
  const ConnectionValue gv = s.connection(x);
  auto w = [&](const Vector& o, int j, int l) { return o.segment((j * d + l) * n, n); };

  Vector out = Vector::Zero(d * n);
  for (int i = 0; i < d; ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const Vector domega = (omega_fn(xp) - omega_fn(xm)) / (2.0 * h);
    for (int j = 0; j < d; ++j) {
      if (ginv(i, j) == 0.0) continue;
      for (int l = 0; l < d; ++l) {
        Vector nab = w(domega, j, l) + gv[i] * w(omega, j, l);
        for (int m = 0; m < d; ++m) nab -= lc[m](i, j) * w(omega, m, l) + lc[m](i, l) * w(omega, j, m);
        out.segment(l * n, n) -= ginv(i, j) * nab;
      }
    }
  }
  return out;
}

}  // namespace

Vector flatten_form(const Matrix& sigma) {
  const Matrix t = sigma.transpose();
  return Eigen::Map<const Vector>(t.data(), t.size());
}

Matrix unflatten_form(const Vector& flat, int d, int n) {
  if (flat.size() != d * n) throw ShapeError("unflatten_form: size is not d*n");
  return Eigen::Map<const Matrix>(flat.data(), n, d).transpose();
}

Vector PFormSection::value(const Vector& x) const {
  const Matrix v = field(x);
  return v.cols() == 1 ? Vector(v.col(0)) : flatten_form(v);
}

Field flat_field(const Field& f) {
  if (f.cols == 1) return f;
  Field out = f;
  out.rows = f.rows * f.cols;
  out.cols = 1;
  out.fn = [f](const Vector& x, const Vector& v, Matrix& dst) {
    Matrix val(f.rows, f.cols);
    f.fn(x, v, val);
    dst = flatten_form(val);
  };
  return out;
}

ConnectionValue form_connection(const Scene& s, int p, const Vector& x) {
  require_degree(p);
  ConnectionValue gv = s.connection(x);
  if (p == 0) return gv;
  const int d = s.dim();
  const int n = s.rank();
  const LeviCivitaValue lc = s.levi_civita(x);
  ConnectionValue out(d, Matrix::Zero(d * n, d * n));
  for (int i = 0; i < d; ++i) {
    for (int l = 0; l < d; ++l) {
      out[i].block(l * n, l * n, n, n) += gv[i];
      for (int m = 0; m < d; ++m) {
        const double c = lc[m](i, l);
        if (c == 0.0) continue;
        for (int a = 0; a < n; ++a) out[i](l * n + a, m * n + a) -= c;
      }
    }
  }
  return out;
}

std::shared_ptr<Scene> form_bundle_scene(const ScenePtr& s, int p) {
  require_degree(p);
  auto e = std::make_shared<Scene>();
  e->name = s->name + (p == 0 ? "/E0" : "/E1");
  e->description = "p-form bundle over " + s->name;
  e->manifold = s->manifold;
  e->params = s->params;
  e->fd_step = s->fd_step;
  e->fd_step2 = s->fd_step2;
  e->bundle.rank = form_rank(*s, p);
  const bool flat = s->bundle.flat() && (p == 0 || s->manifold.euclidean());
  if (!flat) {
    e->bundle.christoffel = [s, p](const Vector& x, ConnectionValue& gamma) {
      gamma = form_connection(*s, p, x);
    };
  }
  return e;
}

Matrix form_covariant_jacobian(const Scene& s, const PFormSection& sigma, const Vector& x, double h) {
  require_degree(sigma.degree);
  s.require_point(x);
  return covariant_jacobian(s, sigma.degree, [&](const Vector& y) { return sigma.value(y); }, x, h);
}

Matrix exterior_d(const Scene& s, const PFormSection& sigma, const Vector& x) {
  if (sigma.degree != 0) throw std::invalid_argument("exterior_d: only implemented for p = 0");
  return form_covariant_jacobian(s, sigma, x, s.fd_step).transpose();
}

Vector codifferential(const Scene& s, const PFormSection& sigma, const Vector& x) {
  if (sigma.degree != 1) throw std::invalid_argument("codifferential: requires p = 1");
  s.require_point(x);
  return codifferential_of(s, [&](const Vector& y) { return sigma.value(y); }, x, s.fd_step);
}

Matrix hodge_laplacian(const Scene& s, const PFormSection& sigma, const Vector& x) {
  require_degree(sigma.degree);
  s.require_point(x);
  const double h = s.fd_step2;
  const double inner = 2.0 * h;
  const FlatFn value = [&](const Vector& y) { return sigma.value(y); };
  if (sigma.degree == 0) {
    // δd only: δ vanishes on 0-forms
    const FlatFn dsigma = [&](const Vector& y) {
      return flatten_form(covariant_jacobian(s, 0, value, y, inner).transpose());
    };
    return codifferential_of(s, dsigma, x, h);
  }
  const FlatFn delta = [&](const Vector& y) { return codifferential_of(s, value, y, inner); };
  const Matrix d_delta = covariant_jacobian(s, 0, delta, x, h).transpose();
  const FlatFn curl = [&](const Vector& y) { return curl_of(s, value, y, inner); };
  const Matrix delta_d = unflatten_form(codifferential_2form(s, curl, x, h), s.dim(), s.rank());
  return d_delta + delta_d;
}

std::vector<Vector> form_second_covariant(const Scene& s, const PFormSection& sigma, const Vector& x) {
  require_degree(sigma.degree);
  s.require_point(x);
  const int d = s.dim();
  const int p = sigma.degree;
  const double h = s.fd_step2;
  const FlatFn value = [&](const Vector& y) { return sigma.value(y); };
  const Matrix n0 = covariant_jacobian(s, p, value, x, 2.0 * h);
  const ConnectionValue gamma = form_connection(s, p, x);
  const LeviCivitaValue lc = s.levi_civita(x);
  std::vector<Vector> out(d * d);
  for (int i = 0; i < d; ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const Matrix dn = (covariant_jacobian(s, p, value, xp, 2.0 * h) -
                       covariant_jacobian(s, p, value, xm, 2.0 * h)) / (2.0 * h);
    for (int l = 0; l < d; ++l) {
      Vector v = dn.col(l) + gamma[i] * n0.col(l);
      for (int m = 0; m < d; ++m) v -= lc[m](i, l) * n0.col(m);
      out[i * d + l] = std::move(v);
    }
  }
  return out;
}

const char* to_string(GaugeMode m) { return m == GaugeMode::Dt ? "dt" : "bracket"; }

GaugeMode gauge_mode_from_string(const std::string& s) {
  if (s == "dt") return GaugeMode::Dt;
  if (s == "bracket") return GaugeMode::Bracket;
  throw std::invalid_argument("gauge mode must be 'dt' or 'bracket', got '" + s + "'");
}

Vector gauge_weights(const Scene& s, const Matrix& base, const TimeGrid& grid, GaugeMode mode) {
  const long K = grid.steps();
  if (base.rows() != K + 1) throw ShapeError("gauge_weights: base path does not match the grid");
  Vector w(K);
  Matrix g;
  for (long k = 0; k < K; ++k) {
    if (mode == GaugeMode::Dt) {
      w(k) = grid.dt(k);
      continue;
    }
    const Vector dx = (base.row(k + 1) - base.row(k)).transpose();
    if (s.manifold.euclidean()) {
      w(k) = dx.squaredNorm();
    } else {
      s.metric(base.row(k).transpose(), g);
      w(k) = dx.dot(g * dx);
    }
  }
  return w;
}

GaugePath solve_gauge(const Scene& ep, const Field* phi, const Matrix& base, const TimeGrid& grid,
                      GaugeMode mode) {
  const long K = grid.steps();
  const int m = ep.rank();
  GaugePath out;
  out.e.assign(K + 1, Matrix::Identity(m, m));
  if (!phi) return out;
  if (phi->rows != m || phi->cols != m)
    throw ShapeError("solve_gauge: endomorphism field must be m x m on the fibres of E^p");
  const Vector w = gauge_weights(ep, base, grid, mode);
  Matrix ph;
  if (ep.bundle.flat()) {
    for (long k = 0; k < K; ++k) {
      phi->eval(base.row(k).transpose(), Vector(), ph);
      out.e[k + 1] = out.e[k] + w(k) * (out.e[k] * ph);
    }
    return out;
  }
  const std::vector<Matrix> frames = horizontal_frame_lift(ep, base, Matrix::Identity(m, m));
  Matrix tilde = Matrix::Identity(m, m);
  Eigen::PartialPivLU<Matrix> lu(frames[0]);
  for (long k = 0; k < K; ++k) {
    phi->eval(base.row(k).transpose(), Vector(), ph);
    tilde += w(k) * (tilde * lu.solve(ph * frames[k]));
    lu.compute(frames[k + 1]);
    out.e[k + 1] = frames[k + 1] * tilde * lu.inverse();
  }
  return out;
}

namespace {

constexpr std::size_t kMinSamples = 100;

double t_statistic(double m, double se) {
  if (se > 0.0) return m / se;
  if (m == 0.0) return 0.0;
  return std::copysign(std::numeric_limits<double>::infinity(), m);
}

}  // namespace

MartingaleStatistic martingale_statistic(const std::vector<double>& samples, double z_max) {
  if (samples.size() < kMinSamples)
    throw std::invalid_argument("martingale_statistic: need at least 100 samples");
  MartingaleStatistic st;
  st.samples = samples.size();
  st.mean = mean(samples);
  st.stderr_mean = standard_error(samples);
  st.z = t_statistic(st.mean, st.stderr_mean);
  st.verdict = std::abs(st.z) < z_max;
  return st;
}

MartingaleStatistic martingale_statistic(const Matrix& slices, const Vector& times, double z_max) {
  if (slices.cols() != times.size() || times.size() < 1)
    throw ShapeError("martingale_statistic: slice columns must match times");
  std::vector<double> terminal(slices.rows());
  for (Eigen::Index i = 0; i < slices.rows(); ++i) terminal[i] = slices(i, slices.cols() - 1);
  MartingaleStatistic st = martingale_statistic(terminal, z_max);
  if (times.size() >= 2) {
    const Vector tc = times.array() - times.mean();
    const double sxx = tc.squaredNorm();
    std::vector<double> slopes(slices.rows());
    for (Eigen::Index i = 0; i < slices.rows(); ++i) {
      const RowVector y = slices.row(i);
      slopes[i] = tc.dot((y.array() - y.mean()).matrix().transpose()) / sxx;
    }
    st.trend_t = t_statistic(mean(slopes), standard_error(slopes));
  }
  st.verdict = std::abs(st.z) < z_max && std::abs(st.trend_t) < z_max;
  return st;
}

ResidualParts lemma_parts(const Scene& s, const Scene& ep, const PFormSection& sigma,
                          const Field& theta, const Field* v_field, const Matrix& base,
                          const TimeGrid& grid, GaugeMode mode) {
  const long K = grid.steps();
  const int d = s.dim();
  const int m = ep.rank();
  if (theta.rows * theta.cols != m) throw ShapeError("lemma: θ must have one entry per E^p component");
  const Vector w = gauge_weights(s, base, grid, mode);
  const GaugePath gauge = solve_gauge(ep, v_field, base, grid, mode);

  BundlePath path;
  path.grid = grid;
  path.base = base;
  path.fiber.resize(K + 1, m);
  for (long k = 0; k <= K; ++k) {
    const Vector xk = base.row(k).transpose();
    ep.require_point(xk, k);
    path.fiber.row(k) = (gauge.e[k] * sigma.value(xk)).transpose();
  }
  ResidualParts parts;
  parts.lhs = covariant_ito(ep, theta, decompose(ep, path))(K);

  Matrix vval;
  for (long k = 0; k < K; ++k) {
    const Vector xk = base.row(k).transpose();
    const Vector dx = (base.row(k + 1) - base.row(k)).transpose();
    const Matrix jac = form_covariant_jacobian(s, sigma, xk, s.fd_step);
    const LeviCivitaValue lc = s.levi_civita(xk);
    Vector ito_dx = dx;
    for (int j = 0; j < d; ++j) ito_dx(j) += 0.5 * dx.dot(lc[j] * dx);
    Vector term = jac * ito_dx;
    const std::vector<Vector> second = form_second_covariant(s, sigma, xk);
    for (int i = 0; i < d; ++i)
      for (int l = 0; l < d; ++l) term += 0.5 * dx(i) * dx(l) * second[i * d + l];
    if (v_field) {
      v_field->eval(xk, Vector(), vval);
      term += w(k) * (vval * sigma.value(xk));
    }
    parts.rhs += theta.vec(xk).dot(gauge.e[k] * term);
  }
  return parts;
}

HarmonicReport harmonicity_check(const ScenePtr& s, const PFormSection& sigma_in, const Field& theta_in,
                                 const Field* phi, const Field* v_field, const HarmonicConfig& cfg) {
  require_degree(sigma_in.degree);
  const int d = s->dim();
  if (cfg.x0.size() != d) throw ShapeError("harmonicity_check: x0 has wrong dimension");
  const auto ep = form_bundle_scene(s, sigma_in.degree);
  const int m = ep->rank();
  PFormSection sigma = sigma_in;
  const Field theta = flat_field(theta_in);
  if (theta.rows != m) throw ShapeError("harmonicity_check: θ must have one entry per E^p component");
  if (sigma.field.rows * sigma.field.cols != m)
    throw ShapeError("harmonicity_check: σ has the wrong shape for its degree");

  const long K = std::lround(cfg.horizon / cfg.dt);
  const TimeGrid grid = TimeGrid::uniform(cfg.horizon, K);
  HarmonicReport rep;

  // (a) pointwise Δσ
  {
    std::mt19937_64 rng(splitmix64(cfg.seed));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int found = 0;
    for (int attempt = 0; found < cfg.sample_points && attempt < 20 * cfg.sample_points; ++attempt) {
      Vector y(d);
      for (int i = 0; i < d; ++i) {
        const auto& period = i < static_cast<int>(s->manifold.periods.size()) ? s->manifold.periods[i]
                                                                              : std::optional<double>();
        y(i) = period ? *period * unit(rng) : cfg.x0(i) + (unit(rng) - 0.5);
      }
      if (!s->contains(y)) continue;
      try {
        rep.max_laplacian = std::max(rep.max_laplacian, hodge_laplacian(*s, sigma, y).cwiseAbs().maxCoeff());
        ++found;
      } catch (const DomainError&) {
      }
    }
  }

  // (b) martingale test
  if (cfg.martingale) {
    const int slices = std::max(1, cfg.slices);
    Vector times(slices);
    std::vector<long> slice_index(slices);
    for (int j = 0; j < slices; ++j) {
      slice_index[j] = K * (j + 1) / slices;
      times(j) = grid.t(slice_index[j]);
    }
    Matrix values(cfg.paths, slices);
    std::vector<char> ok(cfg.paths, 0);
    parallel_for(static_cast<std::size_t>(cfg.paths), [&](std::size_t i) {
      const std::uint64_t seed = path_seed(cfg.seed, i);
      try {
        const WienerDriver driver = sample_wiener(grid, d, seed);
        BundlePath path;
        path.grid = grid;
        path.base = brownian_on_manifold(*s, cfg.x0, grid, driver);
        path.fiber.resize(K + 1, m);
        const GaugePath gauge = phi ? solve_gauge(*ep, phi, path.base, grid, cfg.mode) : GaugePath{};
        for (long k = 0; k <= K; ++k) {
          const Vector sv = sigma.value(path.base.row(k).transpose());
          if (phi)
            path.fiber.row(k) = (gauge.e[k] * sv).transpose();
          else
            path.fiber.row(k) = sv.transpose();
        }
        const Vector running = covariant_ito(*ep, theta, decompose(*ep, path));
        for (int j = 0; j < slices; ++j) values(i, j) = running(slice_index[j]);
        ok[i] = 1;
      } catch (const DomainError&) {
      } catch (const FrameDegeneracy&) {
      }
    }, cfg.threads);

    std::vector<Eigen::Index> kept;
    for (long i = 0; i < cfg.paths; ++i) {
      if (ok[i]) {
        kept.push_back(i);
        rep.path_ids.push_back(i);
        rep.terminals.push_back(values(i, slices - 1));
        rep.seeds.push_back(path_seed(cfg.seed, i));
      } else {
        ++rep.aborted;
      }
    }
    const Matrix kept_values = values(kept, Eigen::all);
    rep.stat = martingale_statistic(kept_values, times, cfg.z_max);
  }

  // (c) Lemma cross-check on nested grids
  if (cfg.lemma) {
    const TimeGrid fine_grid = TimeGrid::uniform(cfg.horizon, 2 * K);
    rep.lemma_gap_coarse.assign(cfg.lemma_paths, 0.0);
    rep.lemma_gap_fine.assign(cfg.lemma_paths, 0.0);
    parallel_for(static_cast<std::size_t>(cfg.lemma_paths), [&](std::size_t i) {
      const WienerDriver fine = sample_wiener(fine_grid, d, path_seed(cfg.seed ^ 0x4c454d4dULL, i));
      const WienerDriver coarse = coarsen(fine, 2);
      const Matrix base_fine = brownian_on_manifold(*s, cfg.x0, fine_grid, fine);
      const Matrix base_coarse = brownian_on_manifold(*s, cfg.x0, grid, coarse);
      rep.lemma_gap_coarse[i] =
          lemma_parts(*s, *ep, sigma, theta, v_field, base_coarse, grid, cfg.mode).residual();
      rep.lemma_gap_fine[i] =
          lemma_parts(*s, *ep, sigma, theta, v_field, base_fine, fine_grid, cfg.mode).residual();
    }, cfg.threads);
    rep.lemma_median_coarse = median(rep.lemma_gap_coarse);
    rep.lemma_median_fine = median(rep.lemma_gap_fine);
    rep.lemma_ratio = rep.lemma_median_coarse / rep.lemma_median_fine;
    rep.lemma_pass = rep.lemma_median_fine < cfg.floor || rep.lemma_ratio >= cfg.min_ratio;
  }

  rep.pass = (!cfg.martingale || rep.stat.verdict) && (!cfg.lemma || rep.lemma_pass);
  return rep;
}

}  // namespace vbc
