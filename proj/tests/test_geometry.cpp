#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vbcalc/geometry.hpp"
#include "vbcalc/scenes.hpp"

using namespace vbc;

namespace {

Matrix J() {
  Matrix j(2, 2);
  j << 0, 1, -1, 0;
  return j;
}

double gauss_curvature(const Scene& s, const Vector& x, double h) {
  CurvatureValue r = bundle_curvature(s, x, h);
  Matrix g = s.metric(x);
  Vector r_yy = r(0, 1).col(1);  // R(∂1, ∂2)∂2
  return (g * r_yy)(0) / g.determinant();
}

}  // namespace

TEST_CASE("twisted-flat curvature is -lambda J") {
  for (double lambda : {0.5, 1.0, 2.0}) {
    auto s = make_twisted_flat_scene(lambda);
    for (const Vector& x : {Vector(Vector::Zero(2)), Vector(Vector::Constant(2, 0.7))}) {
      CurvatureValue r = bundle_curvature(*s, x, 1e-4);
      CHECK((r(0, 1) - (-lambda * J())).norm() < 1e-6);
      CHECK(r(0, 0).norm() == 0.0);
      CHECK((r(0, 1) + r(1, 0)).norm() == 0.0);
    }
  }
}

TEST_CASE("sphere Gauss curvature is 1") {
  auto s = make_sphere_stereo_scene();
  for (double h : {1e-2, 3e-3}) {
    for (const Vector& x : {Vector(Vector::Zero(2)), Vector((Vector(2) << 0.4, -0.8).finished()),
                            Vector((Vector(2) << 1.5, 0.3).finished())}) {
      CHECK(std::abs(gauss_curvature(*s, x, h) - 1.0) < 10.0 * h * h);
    }
  }
}

TEST_CASE("curvature is antisymmetric in the form indices") {
  auto s = make_sphere_stereo_scene();
  Vector x(2);
  x << -0.3, 0.9;
  CurvatureValue r = bundle_curvature(*s, x, 1e-3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK((r(i, j) + r(j, i)).norm() == 0.0);
}

TEST_CASE("closed-form Levi-Civita symbols match metric differences") {
  auto s = make_sphere_stereo_scene();
  Vector x(2);
  x << 0.6, -0.2;
  LeviCivitaValue closed = s->levi_civita(x);
  LeviCivitaValue fd = levi_civita_christoffels(s->manifold, x, 1e-5);
  for (int i = 0; i < 2; ++i) CHECK((closed[i] - fd[i]).norm() < 1e-8);
  for (int i = 0; i < 2; ++i) CHECK((closed[i] - closed[i].transpose()).norm() < 1e-14);
}

TEST_CASE("flat scene has zero connection and curvature") {
  auto s = make_flat_scene(3, 2);
  Vector x = Vector::LinSpaced(3, -1.0, 1.0);
  for (const Matrix& g : s->connection(x)) CHECK(g.norm() == 0.0);
  CurvatureValue r = bundle_curvature(*s, x, 1e-3);
  for (const Matrix& c : r.components) CHECK(c.norm() == 0.0);
}

TEST_CASE("nabla of a covector subtracts the connection") {
  auto s = make_twisted_flat_scene(1.0);
  Field theta = make_expr_field(FieldKind::Covector, 2, 1, {"x1", "x2^2"}, 2, 2, {});
  Vector x(2);
  x << 0.5, 2.0;
  Matrix n = nabla_covector(*s, theta, x, 1e-5);
  // ∂θ = [[1, 0], [0, 2 x2]]; Γ_1 = x2 J, so row 0 loses (Γ_1^T θ)^T.
  Matrix expect(2, 2);
  expect << 1, 0, 0, 4;
  Vector th = theta.vec(x);
  expect.row(0) -= (2.0 * J().transpose() * th).transpose();
  CHECK((n - expect).norm() < 1e-8);
}

TEST_CASE("periodic coordinates are reduced") {
  auto s = make_flat_scene(2, 1, {2.0 * M_PI, std::nullopt});
  Vector x(2);
  x << 7.0, 7.0;
  Vector r = s->manifold.reduce(x);
  CHECK(r(0) == Catch::Approx(7.0 - 2.0 * M_PI));
  CHECK(r(1) == 7.0);
}

TEST_CASE("unknown fields are reported by name") {
  auto s = make_flat_scene(2, 2);
  CHECK_THROWS_AS(s->field("nope"), UnknownField);
}
