#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "vbcalc/paths.hpp"
#include "vbcalc/scenes.hpp"

using namespace vbc;

namespace {

Matrix transport_segment(const Scene& s, const Vector& a, const Vector& b, long steps, Matrix frame) {
  Vector dx = (b - a) / static_cast<double>(steps);
  Vector x = a;
  for (long k = 0; k < steps; ++k) {
    frame = transport_step(s, x, dx, frame);
    x += dx;
  }
  return frame;
}

}  // namespace

TEST_CASE("twisted-flat transport matches the matrix exponential") {
  const double lambda = 1.3;
  auto s = make_twisted_flat_scene(lambda);
  Matrix J(2, 2);
  J << 0, 1, -1, 0;
  Vector a(2), b(2);
  a << -0.4, 0.8;
  b << 0.9, 0.8;  // constant x2, so Γ(t) commutes with itself
  Matrix u = transport_segment(*s, a, b, 13000, Matrix::Identity(2, 2));
  Matrix oracle = (-(b(0) - a(0)) * lambda * a(1) * J).exp();
  CHECK((u - oracle).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("transport along x2 is trivial on twisted-flat") {
  auto s = make_twisted_flat_scene(1.0);
  Vector a(2), b(2);
  a << 0.5, -1.0;
  b << 0.5, 2.0;
  Matrix u = transport_segment(*s, a, b, 100, Matrix::Identity(2, 2));
  CHECK((u - Matrix::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("sphere holonomy follows Gauss-Bonnet") {
  auto s = make_sphere_stereo_scene();
  const double area = 0.1;
  const double rho = std::sqrt(area / (4.0 * M_PI - area));  // chart radius enclosing `area`
  const long steps = 20000;
  Matrix frame = Matrix::Identity(2, 2);
  for (long k = 0; k < steps; ++k) {
    double t0 = 2.0 * M_PI * k / steps, t1 = 2.0 * M_PI * (k + 1) / steps;
    Vector x(2), y(2);
    x << rho * std::cos(t0), rho * std::sin(t0);
    y << rho * std::cos(t1), rho * std::sin(t1);
    frame = transport_step(*s, x, y - x, frame);
  }
  // g is conformal, so chart angles at the base point are true angles.
  double angle = std::atan2(frame(1, 0), frame(0, 0));
  CHECK(std::abs(std::abs(angle) - area) < 0.05 * area);
  CHECK(std::abs(frame.col(0).norm() - 1.0) < 1e-6);
}

TEST_CASE("transport preserves the metric on the sphere") {
  auto s = make_sphere_stereo_scene();
  Vector a(2), b(2);
  a << 0.1, 0.2;
  b << 1.1, -0.7;
  Matrix u = transport_segment(*s, a, b, 4000, Matrix::Identity(2, 2));
  Matrix ga = s->metric(a), gb = s->metric(b);
  CHECK((u.transpose() * gb * u - ga).norm() < 1e-6);
}

TEST_CASE("wiener increments are seeded and nest under coarsening") {
  TimeGrid grid = TimeGrid::uniform(1.0, 1000);
  WienerDriver w1 = sample_wiener(grid, 2, 7);
  WienerDriver w2 = sample_wiener(grid, 2, 7);
  WienerDriver w3 = sample_wiener(grid, 2, 8);
  CHECK(w1.increments == w2.increments);
  CHECK(w1.increments != w3.increments);
  WienerDriver c = coarsen(w1, 4);
  REQUIRE(c.increments.rows() == 250);
  CHECK((c.path().row(250) - w1.path().row(1000)).norm() < 1e-12);
  CHECK(coarsen(grid, 4).steps() == 250);
}

TEST_CASE("realized quadratic variation of W approaches t") {
  TimeGrid grid = TimeGrid::uniform(1.0, 100000);
  WienerDriver w = sample_wiener(grid, 1, 3);
  Matrix p = w.path();
  Vector qv = quadratic_covariation(p.col(0), p.col(0));
  CHECK(std::abs(qv(qv.size() - 1) - 1.0) < 5.0 * std::sqrt(2.0 / 100000));
}

TEST_CASE("discrete sums on a deterministic path") {
  Vector t = Vector::LinSpaced(5, 0.0, 1.0);
  Matrix y = t.array().square().matrix();
  Matrix a = t;
  // Σ t_k Δ(t²) and Σ ½(t_k + t_{k+1}) Δ(t²)
  double ito = 0, strat = 0;
  for (int k = 0; k < 4; ++k) {
    ito += t(k) * (y(k + 1) - y(k));
    strat += 0.5 * (t(k) + t(k + 1)) * (y(k + 1) - y(k));
  }
  CHECK(ito_sum(a, y)(4) == Catch::Approx(ito));
  CHECK(stratonovich_sum(a, y)(4) == Catch::Approx(strat));
  CHECK_THROWS_AS(ito_sum(a, Matrix(y.topRows(3))), ShapeError);
}

TEST_CASE("mean exit time of a ball is r^2/d") {
  const int d = 2;
  const double r = 1.0;
  auto s = make_flat_scene(d, 1);
  TimeGrid grid = TimeGrid::uniform(4.0, 16000);
  const int paths = 1000;
  std::vector<double> tau;
  for (int i = 0; i < paths; ++i) {
    WienerDriver w = sample_wiener(grid, d, path_seed(99, i));
    Matrix base = brownian_on_manifold(*s, Vector::Zero(d), grid, w);
    double t = grid.horizon();
    for (long k = 0; k <= grid.steps(); ++k)
      if (base.row(k).norm() >= r) {
        t = grid.t(k);
        break;
      }
    tau.push_back(t);
  }
  // Discrete monitoring overshoots by roughly 0.58·r·√Δt / d.
  double bias = 0.5826 * r * std::sqrt(grid.dt(0)) / d;
  CHECK(std::abs(mean(tau) - r * r / d) < 4.0 * standard_error(tau) + bias);
}

TEST_CASE("path CSV has a header and one row per step") {
  auto s = make_flat_scene(2, 1);
  TimeGrid grid = TimeGrid::uniform(1.0, 4);
  SdeSpec spec;
  spec.x0 = Vector::Zero(2);
  spec.v0 = Vector::Ones(1);
  BundlePath p = simulate_bundle_semimartingale(*s, spec, grid, sample_wiener(grid, 2, 1));
  std::ostringstream os;
  write_path_csv(os, p);
  std::string text = os.str();
  CHECK(text.rfind("t,x1,x2,v1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}
