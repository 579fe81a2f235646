#ifndef VBCALC_GEOMETRY_HPP
#define VBCALC_GEOMETRY_HPP

// Chart-level description of a base manifold M, a vector bundle E over it
// with a connection, and the fields living on them.
//
// Index conventions used throughout the library:
//   * Bundle connection: gamma[i](beta, alpha) = Γ_{iα}^β, i.e. gamma[i] is the
//     n×n matrix acting on fibre components, ∇_i s = ∂_i s + gamma[i] s.
//   * Levi-Civita symbols of M: lc[i](j, k) = Γ^i_{jk}.
//   * Curvature: r(i, j) = ∂_i Γ_j − ∂_j Γ_i + [Γ_i, Γ_j] = R^E(∂_i, ∂_j).
//   * Mixed sections b ∈ Γ(T*M ⊗ E*) and bundle-valued 1-forms are d×n
//     arrays with row = base index, column = fibre index.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vbcalc/core.hpp"

namespace vbc {

using ConnectionValue = std::vector<Matrix>;
using LeviCivitaValue = std::vector<Matrix>;

struct ChartManifold {
  int dim = 0;
  /// Empty means the whole of R^d.
  std::function<bool(const Vector&)> domain;
  /// Empty means the Euclidean metric g = I.
  std::function<void(const Vector&, Matrix&)> metric;
  /// Optional closed-form Levi-Civita symbols; otherwise finite differences.
  std::function<void(const Vector&, LeviCivitaValue&)> levi_civita;
  std::vector<std::optional<double>> periods;

  bool euclidean() const { return !metric; }
  bool periodic() const;
  /// Reduce periodic coordinates into [0, period).
  Vector reduce(const Vector& x) const;
  void reduce_in_place(Vector& x) const;
  bool contains(const Vector& x) const;
};

struct VectorBundle {
  int rank = 0;
  /// Empty means the trivial flat connection Γ ≡ 0.
  std::function<void(const Vector&, ConnectionValue&)> christoffel;

  bool flat() const { return !christoffel; }
};

enum class FieldKind {
  Scalar,        // 1×1
  Section,       // n×1, s ∈ Γ(E)
  Covector,      // n×1, θ ∈ Γ(E*)
  Mixed,         // d×n, b ∈ Γ(T*M ⊗ E*)
  OneForm,       // d×1, α ∈ Γ(T*M)
  Form1,         // d×n, σ ∈ Γ(T*M ⊗ V)
  Endomorphism,  // m×m
  Matrix         // free shape (SDE coefficients)
};

const char* to_string(FieldKind k);
std::optional<FieldKind> field_kind_from_string(const std::string& s);

/// An evaluable field. Fibre-dependent fields (SDE coefficients, bundle map
/// components) read `v`; all others ignore it.
struct Field {
  FieldKind kind = FieldKind::Matrix;
  int rows = 0;
  int cols = 0;
  bool fiber_dependent = false;
  std::function<void(const Vector& x, const Vector& v, vbc::Matrix& out)> fn;

  void eval(const Vector& x, const Vector& v, vbc::Matrix& out) const {
    out.resize(rows, cols);
    fn(x, v, out);
  }
  vbc::Matrix operator()(const Vector& x, const Vector& v = Vector()) const {
    vbc::Matrix out(rows, cols);
    fn(x, v, out);
    return out;
  }
  /// Column vector view of an n×1 (or 1×n) field value.
  Vector vec(const Vector& x, const Vector& v = Vector()) const;
};

Field constant_field(FieldKind kind, const vbc::Matrix& value);

class Scene {
 public:
  std::string name;
  std::string description;
  ChartManifold manifold;
  VectorBundle bundle;
  std::map<std::string, double> params;
  /// Central-difference step for first derivatives.
  double fd_step = 1e-5;
  /// Outer step for nested (second-derivative) finite differences.
  double fd_step2 = 1e-4;

  int dim() const { return manifold.dim; }
  int rank() const { return bundle.rank; }

  bool contains(const Vector& x) const { return manifold.contains(x); }
  void require_point(const Vector& x, long step = -1) const;

  void metric(const Vector& x, vbc::Matrix& g) const;
  vbc::Matrix metric(const Vector& x) const;
  void connection(const Vector& x, ConnectionValue& gamma) const;
  ConnectionValue connection(const Vector& x) const;
  /// Closed form when the manifold provides one, otherwise central
  /// differences of the metric with step fd_step.
  LeviCivitaValue levi_civita(const Vector& x) const;

  bool has_field(const std::string& name) const { return fields_.count(name) != 0; }
  const Field& field(const std::string& name) const;
  void add_field(const std::string& name, Field f);
  const std::map<std::string, Field>& fields() const { return fields_; }

 private:
  std::map<std::string, Field> fields_;
};

using ScenePtr = std::shared_ptr<const Scene>;

class UnknownField : public std::out_of_range {
 public:
  explicit UnknownField(const std::string& name)
      : std::out_of_range("unknown field '" + name + "'"), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

/// Curvature R^E at a point, r(i, j) n×n.
struct CurvatureValue {
  int dim = 0;
  int rank = 0;
  std::vector<vbc::Matrix> components;  // row-major over (i, j)

  const vbc::Matrix& operator()(int i, int j) const { return components[i * dim + j]; }
  vbc::Matrix& operator()(int i, int j) { return components[i * dim + j]; }
};

/// Σ_i dx^i Γ_i.
template <typename Derived>
vbc::Matrix contract(const ConnectionValue& gamma, const Eigen::MatrixBase<Derived>& dx) {
  vbc::Matrix out = vbc::Matrix::Zero(gamma.empty() ? 0 : gamma[0].rows(),
                                      gamma.empty() ? 0 : gamma[0].cols());
  for (std::size_t i = 0; i < gamma.size(); ++i) out.noalias() += dx(i) * gamma[i];
  return out;
}

/// Levi-Civita symbols Γ^i_{jk} by central differences of the metric.
LeviCivitaValue levi_civita_christoffels(const ChartManifold& m, const Vector& x, double h);

CurvatureValue bundle_curvature(const Scene& s, const Vector& x, double h);

vbc::Matrix eval_field(const Scene& s, const std::string& name, const Vector& x);

/// (∇θ)_{jα} = ∂_j θ^α − Γ_{jα}^β θ^β, d×n.
vbc::Matrix nabla_covector(const Scene& s, const Field& theta, const Vector& x, double h);
vbc::Matrix nabla_covector(const Scene& s, const std::string& theta, const Vector& x, double h);

/// ∇θ packaged as a mixed-section field (step = scene fd_step).
Field nabla_covector_field(const ScenePtr& s, const Field& theta);

/// (∇α)_{jk} = ∂_j α_k − Γ^m_{jk} α_m for a 1-form on M.
vbc::Matrix nabla_one_form(const Scene& s, const Field& alpha, const Vector& x, double h);

}  // namespace vbc

#endif  // VBCALC_GEOMETRY_HPP
