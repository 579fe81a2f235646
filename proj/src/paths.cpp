#include "vbcalc/paths.hpp"

#include <cmath>
#include <ostream>
#include <random>

namespace vbc {

TimeGrid TimeGrid::uniform(double horizon, long steps) {
  if (steps < 0 || !(horizon >= 0.0)) throw std::invalid_argument("TimeGrid::uniform: bad arguments");
  TimeGrid g;
  g.t.resize(steps + 1);
  for (long k = 0; k <= steps; ++k) g.t(k) = steps ? horizon * static_cast<double>(k) / steps : 0.0;
  return g;
}

bool TimeGrid::is_uniform(double tol) const {
  if (steps() < 2) return true;
  const double h = horizon() / steps();
  for (long k = 0; k < steps(); ++k)
    if (std::abs(dt(k) - h) > tol * std::max(1.0, h)) return false;
  return true;
}

Matrix WienerDriver::path() const {
  Matrix w = Matrix::Zero(increments.rows() + 1, dim);
  for (Eigen::Index k = 0; k < increments.rows(); ++k) w.row(k + 1) = w.row(k) + increments.row(k);
  return w;
}

WienerDriver sample_wiener(const TimeGrid& grid, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("sample_wiener: dim must be >= 1");
  WienerDriver w;
  w.dim = dim;
  w.seed = seed;
  w.increments.resize(grid.steps(), dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long k = 0; k < grid.steps(); ++k) {
    const double scale = std::sqrt(grid.dt(k));
    for (int j = 0; j < dim; ++j) w.increments(k, j) = scale * normal(rng);
  }
  return w;
}

WienerDriver coarsen(const WienerDriver& fine, long factor) {
  if (factor < 1 || fine.increments.rows() % factor != 0)
    throw std::invalid_argument("coarsen: step count not divisible by factor");
  WienerDriver c;
  c.dim = fine.dim;
  c.seed = fine.seed;
  const long coarse_steps = fine.increments.rows() / factor;
  c.increments = Matrix::Zero(coarse_steps, fine.dim);
  for (long k = 0; k < coarse_steps; ++k)
    for (long r = 0; r < factor; ++r) c.increments.row(k) += fine.increments.row(k * factor + r);
  return c;
}

TimeGrid coarsen(const TimeGrid& fine, long factor) {
  if (factor < 1 || fine.steps() % factor != 0)
    throw std::invalid_argument("coarsen: step count not divisible by factor");
  TimeGrid c;
  c.t.resize(fine.steps() / factor + 1);
  for (Eigen::Index k = 0; k < c.t.size(); ++k) c.t(k) = fine.t(k * factor);
  return c;
}

namespace {

/// Drift and diffusion of Brownian motion of g at x.
void brownian_coefficients(const Scene& s, const Vector& x, Vector& drift, Matrix& sigma) {
  const int d = s.dim();
  const Matrix g = s.metric(x);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0)
    throw DomainError("brownian_on_manifold: metric is not positive definite");
  const Vector inv_sqrt = eig.eigenvalues().cwiseSqrt().cwiseInverse();
  sigma = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  const Matrix ginv = sigma * sigma;
  const LeviCivitaValue lc = s.levi_civita(x);
  drift.resize(d);
  for (int i = 0; i < d; ++i) drift(i) = -0.5 * ginv.cwiseProduct(lc[i]).sum();
}

void check_driver(const WienerDriver& driver, const TimeGrid& grid, int min_dim, const char* who) {
  if (driver.increments.rows() != grid.steps())
    throw ShapeError(std::string(who) + ": driver length does not match the grid");
  if (driver.dim < min_dim) throw ShapeError(std::string(who) + ": driver dimension too small");
}

}  // namespace

Matrix brownian_on_manifold(const Scene& s, const Vector& x0, const TimeGrid& grid,
                            const WienerDriver& driver) {
  const int d = s.dim();
  check_driver(driver, grid, d, "brownian_on_manifold");
  if (x0.size() != d) throw ShapeError("brownian_on_manifold: x0 has wrong dimension");
  const long K = grid.steps();
  Matrix path(K + 1, d);
  path.row(0) = x0.transpose();
  s.require_point(x0, 0);

  if (s.manifold.euclidean()) {
    for (long k = 0; k < K; ++k) {
      path.row(k + 1) = path.row(k) + driver.increments.row(k).head(d);
      if (s.manifold.domain) s.require_point(path.row(k + 1).transpose(), k + 1);
    }
    return path;
  }

  Vector x = x0, drift;
  Matrix sigma;
  for (long k = 0; k < K; ++k) {
    brownian_coefficients(s, x, drift, sigma);
    x += drift * grid.dt(k) + sigma * driver.increments.row(k).head(d).transpose();
    s.require_point(x, k + 1);
    path.row(k + 1) = x.transpose();
  }
  return path;
}

Matrix transport_step(const Scene& s, const Vector& x, const Vector& dx, const Matrix& frame) {
  if (s.bundle.flat()) return frame;
  ConnectionValue gamma;
  s.connection(x, gamma);
  const Matrix g0 = contract(gamma, dx);
  const Matrix predictor = frame - g0 * frame;
  s.connection(x + dx, gamma);
  const Matrix g1 = contract(gamma, dx);
  return frame - 0.5 * (g0 * frame + g1 * predictor);
}

BundlePath simulate_bundle_semimartingale(const Scene& s, const SdeSpec& spec, const TimeGrid& grid,
                                          const WienerDriver& driver) {
  const int d = s.dim();
  const int n = s.rank();
  const long K = grid.steps();
  if (spec.x0.size() != d || spec.v0.size() != n)
    throw ShapeError("simulate_bundle_semimartingale: initial condition has wrong shape");
  if (driver.increments.rows() != K)
    throw ShapeError("simulate_bundle_semimartingale: driver length does not match the grid");

  BundlePath out;
  out.grid = grid;

  switch (spec.base.kind) {
    case BaseDynamics::Kind::Brownian:
      out.base = brownian_on_manifold(s, spec.x0, grid, driver);
      break;
    case BaseDynamics::Kind::Still:
      s.require_point(spec.x0, 0);
      out.base = spec.x0.transpose().replicate(K + 1, 1);
      break;
    case BaseDynamics::Kind::Drift: {
      const Field& b = s.field(spec.base.drift);
      const Field* sig = spec.base.diffusion.empty() ? nullptr : &s.field(spec.base.diffusion);
      if (b.rows * b.cols != d) throw ShapeError("base drift field must have d components");
      if (sig && (sig->rows != d || sig->cols != driver.dim))
        throw ShapeError("base diffusion field must be d x (driver dimension)");
      out.base.resize(K + 1, d);
      Vector x = spec.x0;
      s.require_point(x, 0);
      out.base.row(0) = x.transpose();
      Matrix bval, sval;
      for (long k = 0; k < K; ++k) {
        b.eval(x, Vector(), bval);
        Vector next = x + Eigen::Map<const Vector>(bval.data(), d) * grid.dt(k);
        if (sig) {
          sig->eval(x, Vector(), sval);
          next += sval * driver.increments.row(k).transpose();
        }
        x = next;
        s.require_point(x, k + 1);
        out.base.row(k + 1) = x.transpose();
      }
      break;
    }
  }

  out.fiber.resize(K + 1, n);
  out.fiber.row(0) = spec.v0.transpose();
  switch (spec.fiber.kind) {
    case FiberDynamics::Kind::Constant:
      out.fiber = spec.v0.transpose().replicate(K + 1, 1);
      break;
    case FiberDynamics::Kind::Parallel: {
      Vector v = spec.v0;
      for (long k = 0; k < K; ++k) {
        const Vector xk = out.x(k);
        v = transport_step(s, xk, out.x(k + 1) - xk, v);
        out.fiber.row(k + 1) = v.transpose();
      }
      break;
    }
    case FiberDynamics::Kind::Sde: {
      const Field& mu = s.field(spec.fiber.drift);
      const Field* sig = spec.fiber.diffusion.empty() ? nullptr : &s.field(spec.fiber.diffusion);
      if (mu.rows * mu.cols != n) throw ShapeError("fibre drift field must have n components");
      if (sig && (sig->rows != n || sig->cols != driver.dim))
        throw ShapeError("fibre diffusion field must be n x (driver dimension)");
      Vector v = spec.v0;
      Matrix mval, sval;
      for (long k = 0; k < K; ++k) {
        const Vector xk = out.x(k);
        mu.eval(xk, v, mval);
        Vector next = v + Eigen::Map<const Vector>(mval.data(), n) * grid.dt(k);
        if (sig) {
          sig->eval(xk, v, sval);
          next += sval * driver.increments.row(k).transpose();
        }
        v = next;
        if (!v.allFinite()) throw DomainError("fibre component diverged", k + 1);
        out.fiber.row(k + 1) = v.transpose();
      }
      break;
    }
  }
  return out;
}

void write_path_csv(std::ostream& os, const BundlePath& path) {
  const Eigen::Index d = path.base.cols();
  const Eigen::Index n = path.fiber.cols();
  os << "t";
  for (Eigen::Index i = 1; i <= d; ++i) os << ",x" << i;
  for (Eigen::Index i = 1; i <= n; ++i) os << ",v" << i;
  os << "\n";
  const auto old_precision = os.precision(17);
  for (Eigen::Index k = 0; k < path.grid.t.size(); ++k) {
    os << path.grid.t(k);
    for (Eigen::Index i = 0; i < d; ++i) os << "," << path.base(k, i);
    for (Eigen::Index i = 0; i < n; ++i) os << "," << path.fiber(k, i);
    os << "\n";
  }
  os.precision(old_precision);
}

}  // namespace vbc
