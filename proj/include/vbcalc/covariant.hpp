#ifndef VBCALC_COVARIANT_HPP
#define VBCALC_COVARIANT_HPP

// Covariant stochastic integrals along discretised bundle-valued paths.
//
// Two routes compute ∫θ Dv:
//   frame route:     decompose v_k = u_k f_k with u the horizontal frame
//                    lift, then a trapezoidal sum of θ(x_k) u_k against f;
//   connector route: midpoint sums of θ applied to the connector
//                    𝒦(dx, dv) = dv + Γ_i dx^i v.
// The Itô integral ∫θ D^I v is the left-point sum of the frame route.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vbcalc/geometry.hpp"
#include "vbcalc/paths.hpp"

namespace vbc {

/// 𝒦 = dv + Σ_i dx^i Γ_i v.
template <typename DV, typename DX, typename DDV>
Vector connector(const ConnectionValue& gamma, const Eigen::MatrixBase<DV>& v,
                 const Eigen::MatrixBase<DX>& dx, const Eigen::MatrixBase<DDV>& dv) {
  Vector k = dv;
  for (std::size_t i = 0; i < gamma.size(); ++i) k.noalias() += dx(i) * (gamma[i] * v);
  return k;
}

Vector apply_connector(const Scene& s, const Vector& x, const Vector& v, const Vector& dx,
                       const Vector& dv);

/// Heun-stepped parallel frames along the base path; throws FrameDegeneracy
/// when the frame condition number exceeds 1e12.
std::vector<Matrix> horizontal_frame_lift(const Scene& s, const Matrix& base, const Matrix& u0);

FramedPath decompose(const Scene& s, const BundlePath& path, const Matrix& u0);
FramedPath decompose(const Scene& s, const BundlePath& path);  // u0 = I

Vector covariant_stratonovich_frame(const Scene& s, const Field& theta, const FramedPath& fp);
Vector covariant_stratonovich_connector(const Scene& s, const Field& theta, const BundlePath& path);
Vector covariant_ito(const Scene& s, const Field& theta, const FramedPath& fp);

/// ∫b(dx, Dv) = Σ_k b(x̄_k)(Δx_k, u_k Δf_k).
Vector mixed_cross_integral(const Scene& s, const Field& b, const FramedPath& fp);

/// |∫θDv − ∫θD^Iv − ½∫∇θ(dx, Dv)| at the terminal time.
double conversion_residual(const Scene& s, const Field& theta, const FramedPath& fp);

// ---------------------------------------------------------------------------
// Fibre-preserving bundle maps F: E → E′ over F̃: M → M′.

struct BundleMap {
  ScenePtr source;
  ScenePtr target;
  /// x ↦ F̃(x), d′ components.
  std::function<Vector(const Vector& x)> base_map;
  /// (x, v) ↦ F(x, v) in the fibre over F̃(x), n′ components.
  std::function<Vector(const Vector& x, const Vector& v)> fiber_map;
  /// Step for the finite differences defining D^v F, D^h F and F̃_*.
  double eps = 1e-5;

  Vector operator()(const Vector& x, const Vector& v) const { return fiber_map(x, v); }
};

/// Identity map of a scene onto itself.
BundleMap identity_map(const ScenePtr& s);

/// Map defined by expression strings in x1..xd, v1..vn of the source.
BundleMap expression_map(const ScenePtr& source, const ScenePtr& target,
                         const std::vector<std::string>& base_exprs,
                         const std::vector<std::string>& fiber_exprs);

/// D^vF(x, v)(w) = 𝒦′F_*(w^v), central difference along the vertical line.
Vector vertical_derivative(const BundleMap& F, const Vector& x, const Vector& v, const Vector& w);
/// D^hF(x, v)(Z) = 𝒦′F_*(Z^h): transport v along x ± εZ, apply F, correct with Γ′.
Vector horizontal_derivative(const BundleMap& F, const Vector& x, const Vector& v, const Vector& z);
/// Matrices of the three derivatives: n′×n, n′×d and d′×d.
Matrix vertical_jacobian(const BundleMap& F, const Vector& x, const Vector& v);
Matrix horizontal_jacobian(const BundleMap& F, const Vector& x, const Vector& v);
Matrix base_jacobian(const BundleMap& F, const Vector& x);

/// The image path (F̃(x_k), F(x_k, v_k)) in the target scene.
BundlePath push_forward(const BundleMap& F, const BundlePath& path);

struct ResidualParts {
  double lhs = 0.0;
  double rhs = 0.0;
  double residual() const { return std::abs(lhs - rhs); }
};

/// ∫θ′DF(v) against ∫(D^vF)*θ′Dv + ∫(D^hF)*θ′ ∘ d(πv).
ResidualParts bundle_map_strat_parts(const BundleMap& F, const Field& theta_target,
                                     const FramedPath& fp);
double bundle_map_strat_residual(const BundleMap& F, const Field& theta_target, const FramedPath& fp);

/// ∫b′(dπ′F(v), DF(v)) against the two pulled-back bracket integrals.
ResidualParts bundle_map_mixed_parts(const BundleMap& F, const Field& b_target, const FramedPath& fp);
double bundle_map_mixed_residual(const BundleMap& F, const Field& b_target, const FramedPath& fp);

/// Itô version: ∫(D^vF)*θ′D^Iv + ∫(D^hF)*θ′∘dπv + ½∫(∇η − (F̃_*⊗D^vF)*∇′θ′)(dπv, Dv)
/// − ½∫(F̃_*⊗D^hF)*∇′θ′(dπv, dπv) with η = (D^vF)*θ′. D^vF is evaluated at the current
/// fibre value and treated as a section of Hom(E, E′) (exact for fibrewise
/// affine maps, which is where the identity holds).
ResidualParts bundle_map_ito_parts(const BundleMap& F, const Field& theta_target, const FramedPath& fp);
double bundle_map_ito_residual(const BundleMap& F, const Field& theta_target, const FramedPath& fp);

// ---------------------------------------------------------------------------
// Commutation of covariant integration with ∇_a along a family of paths.

struct FamilyOfPaths {
  std::vector<double> params;
  std::vector<BundlePath> paths;
};

/// Members share grid and driver; member i starts at (x0 + a_i dx0, v0 + a_i dv0).
FamilyOfPaths make_family(const Scene& s, const SdeSpec& spec, const TimeGrid& grid,
                          const WienerDriver& driver, const std::vector<double>& params,
                          const Vector& dx0, const Vector& dv0);

struct CommutationResult {
  double defect = 0.0;
  double curvature_term = 0.0;
  double lhs = 0.0;          // ∫θ D(∇_a J)
  double d_integral = 0.0;   // ∂_a ∫θ DJ
  double leibniz = 0.0;      // ∫(∇_{∂_a x}θ)(DJ)
};

/// `index` selects the member at which ∂_a is taken (needs neighbours on
/// both sides). defect = ∫θD(∇_aJ) − ∫θ∇_aDJ, with θ(∇_a DJ) realised as
/// ∂_a(θ DJ) − (∇_aθ)(DJ); curvature_term = ∫θ R^E(∘dx, ∂_a x)J.
CommutationResult commutation_defect(const Scene& s, const Field& theta, const FamilyOfPaths& fam,
                                     std::size_t index);

/// ∫α d^{∇M}x = ∫α ∘dx − ½∫∇^Mα(dx, dx) for a 1-form on M.
Vector ito_form_integral(const Scene& s, const Field& alpha, const Matrix& base);

}  // namespace vbc

#endif  // VBCALC_COVARIANT_HPP
