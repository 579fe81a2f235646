#ifndef VBCALC_PATHS_HPP
#define VBCALC_PATHS_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vbcalc/geometry.hpp"

namespace vbc {

struct TimeGrid {
  Vector t;  // K+1 strictly increasing times, t(0) = 0

  static TimeGrid uniform(double horizon, long steps);
  long steps() const { return static_cast<long>(t.size()) - 1; }
  double horizon() const { return t.size() ? t(t.size() - 1) : 0.0; }
  double dt(long k) const { return t(k + 1) - t(k); }
  bool is_uniform(double tol = 1e-12) const;
};

struct WienerDriver {
  int dim = 0;
  Matrix increments;  // K×m, ΔW
  std::uint64_t seed = 0;

  /// Cumulative path W_k, (K+1)×m with W_0 = 0.
  Matrix path() const;
};

/// A discretised semimartingale in E: base points and fibre components in
/// the coordinate frame δ_α on a shared grid.
struct BundlePath {
  TimeGrid grid;
  Matrix base;   // (K+1)×d
  Matrix fiber;  // (K+1)×n

  long steps() const { return grid.steps(); }
  Vector x(long k) const { return base.row(k).transpose(); }
  Vector v(long k) const { return fiber.row(k).transpose(); }
};

/// v_k = u_k f_k with u_k the horizontal frame over x_k. Frame columns are
/// the frame vectors u e_γ expressed in δ, i.e. frames[k](β, γ) = u_k^{γβ}.
struct FramedPath {
  BundlePath path;
  std::vector<Matrix> frames;
  Matrix antidev;  // (K+1)×n, f_k
};

WienerDriver sample_wiener(const TimeGrid& grid, int dim, std::uint64_t seed);

/// Sum consecutive blocks of `factor` increments (nested refinement).
WienerDriver coarsen(const WienerDriver& fine, long factor);
TimeGrid coarsen(const TimeGrid& fine, long factor);

// Discrete integrals. Rows index time (K+1 rows), columns the m components
// that are dotted together.

/// S_j = Σ_{k<j} a_k · (y_{k+1} − y_k)
template <typename DA, typename DY>
Vector ito_sum(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DY>& y) {
  if (a.rows() != y.rows() || a.cols() != y.cols()) throw ShapeError("ito_sum: shape mismatch");
  const Eigen::Index rows = a.rows();
  Vector s = Vector::Zero(rows);
  for (Eigen::Index k = 0; k + 1 < rows; ++k)
    s(k + 1) = s(k) + a.row(k).dot(y.row(k + 1) - y.row(k));
  return s;
}

/// S_j = Σ_{k<j} ½(a_k + a_{k+1}) · (y_{k+1} − y_k)
template <typename DA, typename DY>
Vector stratonovich_sum(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DY>& y) {
  if (a.rows() != y.rows() || a.cols() != y.cols())
    throw ShapeError("stratonovich_sum: shape mismatch");
  const Eigen::Index rows = a.rows();
  Vector s = Vector::Zero(rows);
  for (Eigen::Index k = 0; k + 1 < rows; ++k)
    s(k + 1) = s(k) + 0.5 * (a.row(k) + a.row(k + 1)).dot(y.row(k + 1) - y.row(k));
  return s;
}

/// ⟨p, q⟩_j = Σ_{k<j} (p_{k+1} − p_k)(q_{k+1} − q_k)
template <typename DP, typename DQ>
Vector quadratic_covariation(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DQ>& q) {
  if (p.size() != q.size()) throw ShapeError("quadratic_covariation: length mismatch");
  const Eigen::Index n = p.size();
  Vector s = Vector::Zero(n);
  for (Eigen::Index k = 0; k + 1 < n; ++k)
    s(k + 1) = s(k) + (p(k + 1) - p(k)) * (q(k + 1) - q(k));
  return s;
}

/// Euler–Maruyama for Brownian motion of g: drift −½ g^{jk} Γ^i_{jk},
/// diffusion (g⁻¹)^{1/2}. Periodic coordinates are kept on the covering
/// space (increments stay local); reduce() them for occupation statistics.
Matrix brownian_on_manifold(const Scene& s, const Vector& x0, const TimeGrid& grid,
                            const WienerDriver& driver);

struct BaseDynamics {
  enum class Kind { Brownian, Drift, Still };
  Kind kind = Kind::Brownian;
  std::string drift;      // one-form-shaped d×1 field: dx = b dt + σ dW
  std::string diffusion;  // d×m field, optional
};

struct FiberDynamics {
  enum class Kind { Constant, Parallel, Sde };
  Kind kind = Kind::Constant;
  std::string drift;      // n×1, may read v
  std::string diffusion;  // n×m, may read v; optional
};

struct SdeSpec {
  Vector x0;
  Vector v0;
  BaseDynamics base;
  FiberDynamics fiber;
};

/// Joint stepping of (x_k, v_k). Base: Brownian motion of g, an Itô SDE
/// with field coefficients, or at rest. Fibre: constant, parallel (Heun on
/// dv = −Γ_j v ∘dx^j), or an Itô SDE with field coefficients (Euler–Maruyama).
BundlePath simulate_bundle_semimartingale(const Scene& s, const SdeSpec& spec,
                                          const TimeGrid& grid, const WienerDriver& driver);

/// One Heun step of parallel transport of the columns of `frame` from x to
/// x + dx along the straight chart segment.
Matrix transport_step(const Scene& s, const Vector& x, const Vector& dx, const Matrix& frame);

/// CSV with header t,x1..xd,v1..vn.
void write_path_csv(std::ostream& os, const BundlePath& path);

}  // namespace vbc

#endif  // VBCALC_PATHS_HPP
