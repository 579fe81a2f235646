#include "vbcalc/geometry.hpp"

#include <cmath>

namespace vbc {

namespace {

struct KindName {
  FieldKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {FieldKind::Scalar, "scalar"},     {FieldKind::Section, "section"},
    {FieldKind::Covector, "covector"}, {FieldKind::Mixed, "mixed"},
    {FieldKind::OneForm, "one-form"},  {FieldKind::Form1, "form1"},
    {FieldKind::Endomorphism, "endomorphism"}, {FieldKind::Matrix, "matrix"}};

}  // namespace

const char* to_string(FieldKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

std::optional<FieldKind> field_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  return std::nullopt;
}

Vector Field::vec(const Vector& x, const Vector& v) const {
  vbc::Matrix m(rows, cols);
  fn(x, v, m);
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Field constant_field(FieldKind kind, const vbc::Matrix& value) {
  Field f;
  f.kind = kind;
  f.rows = static_cast<int>(value.rows());
  f.cols = static_cast<int>(value.cols());
  f.fn = [value](const Vector&, const Vector&, vbc::Matrix& out) { out = value; };
  return f;
}

bool ChartManifold::periodic() const {
  for (const auto& p : periods)
    if (p) return true;
  return false;
}

Vector ChartManifold::reduce(const Vector& x) const {
  Vector y = x;
  reduce_in_place(y);
  return y;
}

void ChartManifold::reduce_in_place(Vector& y) const {
  for (std::size_t i = 0; i < periods.size() && i < static_cast<std::size_t>(y.size()); ++i) {
    if (periods[i]) {
      const double p = *periods[i];
      y(i) -= p * std::floor(y(i) / p);
    }
  }
}

bool ChartManifold::contains(const Vector& x) const {
  if (x.size() != dim || !x.allFinite()) return false;
  return !domain || domain(reduce(x));
}

void Scene::require_point(const Vector& x, long step) const {
  if (!contains(x)) {
    std::string where = step >= 0 ? " at step " + std::to_string(step) : std::string();
    throw DomainError("point outside the chart domain of scene '" + name + "'" + where, step);
  }
}

void Scene::metric(const Vector& x, vbc::Matrix& g) const {
  if (manifold.euclidean()) {
    g.setIdentity(dim(), dim());
    return;
  }
  g.resize(dim(), dim());
  manifold.metric(manifold.reduce(x), g);
}

vbc::Matrix Scene::metric(const Vector& x) const {
  vbc::Matrix g;
  metric(x, g);
  return g;
}

void Scene::connection(const Vector& x, ConnectionValue& gamma) const {
  gamma.resize(dim());
  for (auto& m : gamma) m.resize(rank(), rank());
  if (bundle.flat()) {
    for (auto& m : gamma) m.setZero();
    return;
  }
  bundle.christoffel(manifold.reduce(x), gamma);
}

ConnectionValue Scene::connection(const Vector& x) const {
  ConnectionValue gamma;
  connection(x, gamma);
  return gamma;
}

LeviCivitaValue Scene::levi_civita(const Vector& x) const {
  if (manifold.euclidean()) return LeviCivitaValue(dim(), vbc::Matrix::Zero(dim(), dim()));
  if (manifold.levi_civita) {
    LeviCivitaValue lc(dim(), vbc::Matrix(dim(), dim()));
    manifold.levi_civita(manifold.reduce(x), lc);
    return lc;
  }
  return levi_civita_christoffels(manifold, x, fd_step);
}

const Field& Scene::field(const std::string& field_name) const {
  auto it = fields_.find(field_name);
  if (it == fields_.end()) throw UnknownField(field_name);
  return it->second;
}

void Scene::add_field(const std::string& field_name, Field f) {
  if (manifold.periodic()) {
    // fields are only ever evaluated in the fundamental domain
    auto inner = std::move(f.fn);
    f.fn = [m = manifold, inner](const Vector& x, const Vector& v, Matrix& out) {
      thread_local Vector reduced;
      reduced = x;
      m.reduce_in_place(reduced);
      inner(reduced, v, out);
    };
  }
  fields_[field_name] = std::move(f);
}

LeviCivitaValue levi_civita_christoffels(const ChartManifold& m, const Vector& x, double h) {
  const int d = m.dim;
  if (!m.contains(x)) throw DomainError("levi_civita_christoffels: point outside chart domain");
  if (m.euclidean()) return LeviCivitaValue(d, Matrix::Zero(d, d));

  auto g_at = [&](const Vector& y) {
    if (!m.contains(y)) throw DomainError("levi_civita_christoffels: stencil leaves chart domain");
    Matrix g(d, d);
    m.metric(m.reduce(y), g);
    return g;
  };

  // dg[l](i, j) = ∂_l g_ij
  std::vector<Matrix> dg(d);
  for (int l = 0; l < d; ++l) {
    Vector xp = x, xm = x;
    xp(l) += h;
    xm(l) -= h;
    dg[l] = (g_at(xp) - g_at(xm)) / (2.0 * h);
  }

  Eigen::LLT<Matrix> llt(g_at(x));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("levi_civita_christoffels: metric is not positive definite");
  const Matrix ginv = llt.solve(Matrix::Identity(d, d));

  LeviCivitaValue lc(d, Matrix::Zero(d, d));
  for (int j = 0; j < d; ++j) {
    for (int k = j; k < d; ++k) {
      // first kind: Γ_{l,jk} = ½(∂_j g_lk + ∂_k g_lj − ∂_l g_jk)
      Vector first(d);
      for (int l = 0; l < d; ++l) first(l) = 0.5 * (dg[j](l, k) + dg[k](l, j) - dg[l](j, k));
      Vector second = ginv * first;
      for (int i = 0; i < d; ++i) {
        lc[i](j, k) = second(i);
        lc[i](k, j) = second(i);
      }
    }
  }
  return lc;
}

CurvatureValue bundle_curvature(const Scene& s, const Vector& x, double h) {
  const int d = s.dim();
  const int n = s.rank();
  s.require_point(x);

  CurvatureValue r;
  r.dim = d;
  r.rank = n;
  r.components.assign(d * d, Matrix::Zero(n, n));
  if (s.bundle.flat()) return r;

  // dgamma[l][i] = ∂_l Γ_i
  std::vector<ConnectionValue> dgamma(d);
  ConnectionValue plus, minus;
  for (int l = 0; l < d; ++l) {
    Vector xp = x, xm = x;
    xp(l) += h;
    xm(l) -= h;
    s.require_point(xp);
    s.require_point(xm);
    s.connection(xp, plus);
    s.connection(xm, minus);
    dgamma[l].resize(d);
    for (int i = 0; i < d; ++i) dgamma[l][i] = (plus[i] - minus[i]) / (2.0 * h);
  }
  const ConnectionValue gamma = s.connection(x);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      Matrix rij = dgamma[i][j] - dgamma[j][i] + gamma[i] * gamma[j] - gamma[j] * gamma[i];
      r(i, j) = rij;
      r(j, i) = -rij;
    }
  }
  return r;
}

Matrix eval_field(const Scene& s, const std::string& name, const Vector& x) {
  const Field& f = s.field(name);
  s.require_point(x);
  Matrix out = f(s.manifold.reduce(x));
  if (!out.allFinite())
    throw std::runtime_error("field '" + name + "' is not finite at the requested point");
  return out;
}

Matrix nabla_covector(const Scene& s, const Field& theta, const Vector& x, double h) {
  const int d = s.dim();
  const int n = s.rank();
  s.require_point(x);
  const ConnectionValue gamma = s.connection(x);
  const Vector th = theta.vec(x);
  Matrix out(d, n);
  for (int j = 0; j < d; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    s.require_point(xp);
    s.require_point(xm);
    Vector dtheta = (theta.vec(xp) - theta.vec(xm)) / (2.0 * h);
    out.row(j) = (dtheta - gamma[j].transpose() * th).transpose();
  }
  return out;
}

Matrix nabla_covector(const Scene& s, const std::string& theta, const Vector& x, double h) {
  return nabla_covector(s, s.field(theta), x, h);
}

Field nabla_covector_field(const ScenePtr& s, const Field& theta) {
  Field f;
  f.kind = FieldKind::Mixed;
  f.rows = s->dim();
  f.cols = s->rank();
  f.fn = [s, theta](const Vector& x, const Vector&, Matrix& out) {
    out = nabla_covector(*s, theta, x, s->fd_step);
  };
  return f;
}

Matrix nabla_one_form(const Scene& s, const Field& alpha, const Vector& x, double h) {
  const int d = s.dim();
  s.require_point(x);
  const Vector a = alpha.vec(x);
  const LeviCivitaValue lc = s.levi_civita(x);
  Matrix out(d, d);
  for (int j = 0; j < d; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    Vector da = (alpha.vec(xp) - alpha.vec(xm)) / (2.0 * h);
    for (int k = 0; k < d; ++k) {
      double corr = 0.0;
      for (int m = 0; m < d; ++m) corr += lc[m](j, k) * a(m);
      out(j, k) = da(k) - corr;
    }
  }
  return out;
}

}  // namespace vbc
