#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "vbcalc/covariant.hpp"

using namespace vbc;
using vbc::test::fielded_scene;
using vbc::test::sde_motion;
using vbc::test::smooth_path;

namespace {

BundlePath simulate(const Scene& s, const TimeGrid& grid, std::uint64_t seed) {
  return simulate_bundle_semimartingale(s, sde_motion(), grid, sample_wiener(grid, 2, seed));
}

Matrix theta_rows(const Field& theta, const BundlePath& p) {
  Matrix rows(p.steps() + 1, 2);
  for (long k = 0; k <= p.steps(); ++k) rows.row(k) = theta.vec(p.x(k)).transpose();
  return rows;
}

}  // namespace

TEST_CASE("flat bundle reduces to Euclidean sums") {
  auto s = fielded_scene("flat");
  const Field& theta = s->field("theta");
  TimeGrid grid = TimeGrid::uniform(1.0, 500);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    BundlePath p = simulate(*s, grid, seed);
    FramedPath fp = decompose(*s, p);
    Matrix th = theta_rows(theta, p);
    double mid = 0.0;
    for (long k = 0; k < p.steps(); ++k)
      mid += theta.vec(0.5 * (p.x(k) + p.x(k + 1))).dot(p.v(k + 1) - p.v(k));
    const long K = p.steps();
    CHECK(std::abs(covariant_stratonovich_frame(*s, theta, fp)(K) - stratonovich_sum(th, p.fiber)(K)) < 1e-12);
    CHECK(std::abs(covariant_ito(*s, theta, fp)(K) - ito_sum(th, p.fiber)(K)) < 1e-12);
    CHECK(std::abs(covariant_stratonovich_connector(*s, theta, p)(K) - mid) < 1e-12);
  }
}

TEST_CASE("decomposition reconstructs the fibre path") {
  auto s = fielded_scene("twisted-flat", 1.5);
  BundlePath p = simulate(*s, TimeGrid::uniform(1.0, 400), 4);
  FramedPath fp = decompose(*s, p);
  for (long k = 0; k <= p.steps(); k += 50)
    CHECK((fp.frames[k] * fp.antidev.row(k).transpose() - p.v(k)).norm() < 1e-12);
  CHECK((fp.frames[0] - Matrix::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("frame and connector routes agree to second order on smooth paths") {
  auto s = fielded_scene("twisted-flat", 1.0);
  const Field& theta = s->field("theta");
  std::vector<double> gaps;
  for (long steps : {100, 200, 400}) {
    BundlePath p = smooth_path(1.0, steps);
    FramedPath fp = decompose(*s, p);
    gaps.push_back(std::abs(covariant_stratonovich_frame(*s, theta, fp)(steps) -
                            covariant_stratonovich_connector(*s, theta, p)(steps)));
  }
  CHECK(gaps[0] / gaps[1] > 3.0);
  CHECK(gaps[1] / gaps[2] > 3.0);
}

TEST_CASE("Ito-Stratonovich conversion is exact for parallel covectors on flat bundles") {
  auto s = make_flat_scene(2, 2);
  Field theta = constant_field(FieldKind::Covector, (Matrix(2, 1) << 2.0, -0.5).finished());
  BundlePath p = smooth_path(1.0, 100);
  p.fiber.col(0) += Vector::LinSpaced(101, 0.0, 1.0).array().sin().matrix();
  CHECK(conversion_residual(*s, theta, decompose(*s, p)) < 1e-13);
}

TEST_CASE("conversion residual decays under refinement on twisted-flat") {
  auto s = fielded_scene("twisted-flat", 1.0);
  TimeGrid fine = TimeGrid::uniform(1.0, 2000);
  std::vector<double> coarse_res, fine_res;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    WienerDriver w = sample_wiener(fine, 2, path_seed(5, seed));
    for (long factor : {4L, 1L}) {
      TimeGrid g = coarsen(fine, factor);
      BundlePath p = simulate_bundle_semimartingale(*s, sde_motion(), g, coarsen(w, factor));
      (factor == 4 ? coarse_res : fine_res).push_back(conversion_residual(*s, s->field("theta"), decompose(*s, p)));
    }
  }
  CHECK(median(coarse_res) / median(fine_res) > 2.5);
}

TEST_CASE("identity bundle map residuals vanish") {
  auto s = fielded_scene("twisted-flat", 1.0);
  BundleMap id = identity_map(s);
  FramedPath fp = decompose(*s, smooth_path(1.0, 200));
  CHECK(bundle_map_strat_residual(id, s->field("theta"), fp) < 1e-10);
  CHECK(bundle_map_mixed_residual(id, s->field("b"), fp) < 1e-10);
  CHECK(bundle_map_ito_residual(id, s->field("theta"), fp) < 1e-10);
}

TEST_CASE("derivatives of a linear bundle map") {
  auto s = fielded_scene("flat");
  BundleMap F = expression_map(s, s, {"x1", "2*x2"}, {"v1 + x1*v2", "3*v2"});
  Vector x(2), v(2);
  x << 0.4, -0.1;
  v << 1.0, 2.0;
  Matrix dv(2, 2), dh(2, 2), db(2, 2);
  dv << 1, 0.4, 0, 3;
  dh << 2, 0, 0, 0;  // ∂_{x1}F = (v2, 0); the target is flat
  db << 1, 0, 0, 2;
  CHECK((vertical_jacobian(F, x, v) - dv).norm() < 1e-8);
  CHECK((horizontal_jacobian(F, x, v) - dh).norm() < 1e-8);
  CHECK((base_jacobian(F, x) - db).norm() < 1e-8);
}

TEST_CASE("commutation defect on a flat bundle vanishes under refinement") {
  auto s = fielded_scene("flat");
  SdeSpec spec = sde_motion();
  spec.base.kind = BaseDynamics::Kind::Drift;
  s->add_field("drift", make_expr_field(FieldKind::OneForm, 2, 1, {"1", "cos(x1)"}, 2, 2, {}));
  spec.base.drift = "drift";
  spec.fiber.diffusion.clear();
  Vector dx0(2), dv0(2);
  dx0 << 1.0, 0.5;
  dv0 << 0.0, 1.0;
  std::vector<double> defects;
  for (long steps : {100, 200}) {
    TimeGrid g = TimeGrid::uniform(1.0, steps);
    double da = 1e-2 * 100.0 / steps;
    FamilyOfPaths fam = make_family(*s, spec, g, sample_wiener(g, 2, 1), {-da, 0.0, da}, dx0, dv0);
    defects.push_back(std::abs(commutation_defect(*s, s->field("theta"), fam, 1).defect));
  }
  CHECK(defects[0] / defects[1] > 3.0);
}

TEST_CASE("commutation defect matches the curvature term on twisted-flat") {
  auto s = fielded_scene("twisted-flat", 1.0);
  SdeSpec spec = sde_motion();
  spec.base.kind = BaseDynamics::Kind::Drift;
  s->add_field("drift", make_expr_field(FieldKind::OneForm, 2, 1, {"1", "cos(x1)"}, 2, 2, {}));
  spec.base.drift = "drift";
  spec.fiber.diffusion.clear();
  TimeGrid g = TimeGrid::uniform(1.0, 1000);
  Vector dx0(2), dv0(2);
  dx0 << 0.0, 1.0;
  dv0 << 0.0, 0.0;
  FamilyOfPaths fam = make_family(*s, spec, g, sample_wiener(g, 2, 1), {-1e-2, 0.0, 1e-2}, dx0, dv0);
  CommutationResult r = commutation_defect(*s, s->field("theta"), fam, 1);
  REQUIRE(std::abs(r.curvature_term) > 1e-3);
  CHECK(std::abs(r.defect - r.curvature_term) < 0.1 * std::abs(r.curvature_term));
}

TEST_CASE("shape errors are reported") {
  auto s = fielded_scene("flat");
  BundlePath p = smooth_path(1.0, 10);
  CHECK_THROWS_AS(covariant_stratonovich_connector(*s, s->field("b"), p), ShapeError);
  FamilyOfPaths fam;
  CHECK_THROWS_AS(commutation_defect(*s, s->field("theta"), fam, 1), std::invalid_argument);
}
