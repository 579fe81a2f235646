#include "vbcalc/covariant.hpp"

#include <cmath>

#include "vbcalc/scenes.hpp"

namespace vbc {

namespace {

constexpr double kMaxFrameCondition = 1e12;

Vector midpoint(const Matrix& rows, long k) {
  return 0.5 * (rows.row(k) + rows.row(k + 1)).transpose();
}

Vector row(const Matrix& rows, long k) { return rows.row(k).transpose(); }

/// Δx^T B w for a d×n array B.
double bilinear(const Matrix& b, const Vector& dx, const Vector& w) { return dx.dot(b * w); }

/// u_k Δf_k: the covariant increment of the framed path at step k.
Vector frame_increment(const FramedPath& fp, long k) {
  return fp.frames[k] * (fp.antidev.row(k + 1) - fp.antidev.row(k)).transpose();
}

}  // namespace

Vector apply_connector(const Scene& s, const Vector& x, const Vector& v, const Vector& dx,
                       const Vector& dv) {
  s.require_point(x);
  if (v.size() != s.rank() || dv.size() != s.rank() || dx.size() != s.dim())
    throw ShapeError("apply_connector: shape mismatch");
  return connector(s.connection(x), v, dx, dv);
}

std::vector<Matrix> horizontal_frame_lift(const Scene& s, const Matrix& base, const Matrix& u0) {
  const long K = static_cast<long>(base.rows()) - 1;
  const int n = s.rank();
  if (u0.rows() != n || u0.cols() != n) throw ShapeError("horizontal_frame_lift: u0 must be n x n");
  Eigen::PartialPivLU<Matrix> lu(u0);
  if (!(std::abs(lu.determinant()) > 0.0) || lu.rcond() < 1.0 / kMaxFrameCondition)
    throw FrameDegeneracy("horizontal_frame_lift: initial frame is not invertible", 0);

  std::vector<Matrix> frames(K + 1, u0);
  if (s.bundle.flat()) return frames;

  ConnectionValue g_here, g_next;
  s.connection(row(base, 0), g_here);
  Matrix p = u0, predictor(n, n), g0(n, n), g1(n, n);
  for (long k = 0; k < K; ++k) {
    const Vector dx = (base.row(k + 1) - base.row(k)).transpose();
    s.connection(row(base, k + 1), g_next);
    g0.setZero();
    g1.setZero();
    for (int i = 0; i < s.dim(); ++i) {
      g0.noalias() += dx(i) * g_here[i];
      g1.noalias() += dx(i) * g_next[i];
    }
    predictor = p;
    predictor.noalias() -= g0 * p;
    Matrix next = p;
    next.noalias() -= 0.5 * (g0 * p);
    next.noalias() -= 0.5 * (g1 * predictor);
    p = std::move(next);
    if (!p.allFinite()) throw FrameDegeneracy("horizontal_frame_lift: frame diverged", k + 1);
    lu.compute(p);
    if (lu.rcond() < 1.0 / kMaxFrameCondition)
      throw FrameDegeneracy("horizontal_frame_lift: frame condition number above 1e12", k + 1);
    frames[k + 1] = p;
    std::swap(g_here, g_next);
  }
  return frames;
}

FramedPath decompose(const Scene& s, const BundlePath& path, const Matrix& u0) {
  FramedPath fp;
  fp.path = path;
  fp.frames = horizontal_frame_lift(s, path.base, u0);
  const long K = path.steps();
  fp.antidev.resize(K + 1, s.rank());
  if (s.bundle.flat() && u0.isIdentity(0.0)) {
    fp.antidev = path.fiber;
    return fp;
  }
  Eigen::PartialPivLU<Matrix> lu;
  for (long k = 0; k <= K; ++k) {
    lu.compute(fp.frames[k]);
    fp.antidev.row(k) = lu.solve(path.fiber.row(k).transpose()).transpose();
  }
  return fp;
}

FramedPath decompose(const Scene& s, const BundlePath& path) {
  return decompose(s, path, Matrix::Identity(s.rank(), s.rank()));
}

namespace {

/// Rows a_k = θ(x_k)^T u_k: the integrand of the frame route.
Matrix frame_integrand(const Scene& s, const Field& theta, const FramedPath& fp) {
  const long K = fp.path.steps();
  const int n = s.rank();
  Matrix a(K + 1, n);
  Matrix th(theta.rows, theta.cols);
  Vector x(fp.path.base.cols()), v(n);
  for (long k = 0; k <= K; ++k) {
    x = fp.path.base.row(k).transpose();
    v = fp.path.fiber.row(k).transpose();
    theta.fn(x, v, th);
    a.row(k).noalias() = Eigen::Map<const Vector>(th.data(), n).transpose() * fp.frames[k];
  }
  return a;
}

void require_covector(const Scene& s, const Field& theta, const char* who) {
  if (theta.rows * theta.cols != s.rank())
    throw ShapeError(std::string(who) + ": covector field must have n components");
}

}  // namespace

Vector covariant_stratonovich_frame(const Scene& s, const Field& theta, const FramedPath& fp) {
  require_covector(s, theta, "covariant_stratonovich_frame");
  return stratonovich_sum(frame_integrand(s, theta, fp), fp.antidev);
}

Vector covariant_ito(const Scene& s, const Field& theta, const FramedPath& fp) {
  require_covector(s, theta, "covariant_ito");
  return ito_sum(frame_integrand(s, theta, fp), fp.antidev);
}

Vector covariant_stratonovich_connector(const Scene& s, const Field& theta, const BundlePath& path) {
  require_covector(s, theta, "covariant_stratonovich_connector");
  const long K = path.steps();
  const int n = s.rank();
  Vector out = Vector::Zero(K + 1);
  ConnectionValue gamma;
  Matrix th;
  for (long k = 0; k < K; ++k) {
    const Vector xm = midpoint(path.base, k);
    const Vector vm = midpoint(path.fiber, k);
    s.require_point(xm, k);
    s.connection(xm, gamma);
    theta.eval(xm, vm, th);
    const Vector dx = (path.base.row(k + 1) - path.base.row(k)).transpose();
    const Vector dv = (path.fiber.row(k + 1) - path.fiber.row(k)).transpose();
    out(k + 1) = out(k) + Eigen::Map<const Vector>(th.data(), n).dot(connector(gamma, vm, dx, dv));
  }
  return out;
}

Vector mixed_cross_integral(const Scene& s, const Field& b, const FramedPath& fp) {
  if (b.rows != s.dim() || b.cols != s.rank())
    throw ShapeError("mixed_cross_integral: mixed section must be d x n");
  const long K = fp.path.steps();
  Vector out = Vector::Zero(K + 1);
  Matrix bval;
  for (long k = 0; k < K; ++k) {
    const Vector xm = midpoint(fp.path.base, k);
    b.eval(xm, midpoint(fp.path.fiber, k), bval);
    const Vector dx = (fp.path.base.row(k + 1) - fp.path.base.row(k)).transpose();
    out(k + 1) = out(k) + bilinear(bval, dx, frame_increment(fp, k));
  }
  return out;
}

double conversion_residual(const Scene& s, const Field& theta, const FramedPath& fp) {
  const long K = fp.path.steps();
  const double strat = covariant_stratonovich_frame(s, theta, fp)(K);
  const double ito = covariant_ito(s, theta, fp)(K);
  Field nabla_theta;
  nabla_theta.kind = FieldKind::Mixed;
  nabla_theta.rows = s.dim();
  nabla_theta.cols = s.rank();
  nabla_theta.fn = [&s, &theta](const Vector& x, const Vector&, Matrix& out) {
    out = nabla_covector(s, theta, x, s.fd_step);
  };
  const double mixed = mixed_cross_integral(s, nabla_theta, fp)(K);
  return std::abs(strat - ito - 0.5 * mixed);
}

// ---------------------------------------------------------------------------

BundleMap identity_map(const ScenePtr& s) {
  BundleMap F;
  F.source = s;
  F.target = s;
  F.base_map = [](const Vector& x) { return x; };
  F.fiber_map = [](const Vector&, const Vector& v) { return v; };
  return F;
}

BundleMap expression_map(const ScenePtr& source, const ScenePtr& target,
                         const std::vector<std::string>& base_exprs,
                         const std::vector<std::string>& fiber_exprs) {
  const int d = source->dim();
  const int n = source->rank();
  if (static_cast<int>(base_exprs.size()) != target->dim())
    throw SceneConfigError("bundle map: base map needs one expression per target coordinate");
  if (static_cast<int>(fiber_exprs.size()) != target->rank())
    throw SceneConfigError("bundle map: fibre map needs one expression per target fibre component");
  auto constants = source->params;
  for (const auto& [k, v] : target->params) constants.emplace(k, v);
  Field base = make_expr_field(FieldKind::Matrix, target->dim(), 1, base_exprs, d, 0, constants);
  Field fiber = make_expr_field(FieldKind::Matrix, target->rank(), 1, fiber_exprs, d, n, constants);
  BundleMap F;
  F.source = source;
  F.target = target;
  F.base_map = [base](const Vector& x) { return base.vec(x); };
  F.fiber_map = [fiber](const Vector& x, const Vector& v) { return fiber.vec(x, v); };
  return F;
}

Vector vertical_derivative(const BundleMap& F, const Vector& x, const Vector& v, const Vector& w) {
  F.source->require_point(x);
  const double norm = w.norm();
  if (norm == 0.0) return Vector::Zero(F.target->rank());
  const Vector dir = w / norm;
  const double eps = F.eps;
  return norm * (F(x, v + eps * dir) - F(x, v - eps * dir)) / (2.0 * eps);
}

Vector horizontal_derivative(const BundleMap& F, const Vector& x, const Vector& v, const Vector& z) {
  const Scene& src = *F.source;
  const Scene& dst = *F.target;
  src.require_point(x);
  const double norm = z.norm();
  if (norm == 0.0) return Vector::Zero(dst.rank());
  const double eps = F.eps;
  const Vector step = eps * (z / norm);
  const Vector xp = x + step;
  const Vector xm = x - step;
  src.require_point(xp);
  src.require_point(xm);
  const Vector ep = transport_step(src, x, step, v);
  const Vector em = transport_step(src, x, -step, v);
  const Vector along_curve = (F(xp, ep) - F(xm, em)) / (2.0 * eps);
  const Vector base_velocity = (F.base_map(xp) - F.base_map(xm)) / (2.0 * eps);
  const Vector image_base = F.base_map(x);
  dst.require_point(image_base);
  const Vector correction = connector(dst.connection(image_base), F(x, v), base_velocity,
                                      Vector::Zero(dst.rank()));
  return norm * (along_curve + correction);
}

Matrix vertical_jacobian(const BundleMap& F, const Vector& x, const Vector& v) {
  const int n = F.source->rank();
  Matrix jac(F.target->rank(), n);
  for (int b = 0; b < n; ++b) jac.col(b) = vertical_derivative(F, x, v, Vector::Unit(n, b));
  return jac;
}

Matrix horizontal_jacobian(const BundleMap& F, const Vector& x, const Vector& v) {
  const int d = F.source->dim();
  Matrix jac(F.target->rank(), d);
  for (int i = 0; i < d; ++i) jac.col(i) = horizontal_derivative(F, x, v, Vector::Unit(d, i));
  return jac;
}

Matrix base_jacobian(const BundleMap& F, const Vector& x) {
  const int d = F.source->dim();
  Matrix jac(F.target->dim(), d);
  for (int i = 0; i < d; ++i) {
    Vector xp = x, xm = x;
    xp(i) += F.eps;
    xm(i) -= F.eps;
    jac.col(i) = (F.base_map(xp) - F.base_map(xm)) / (2.0 * F.eps);
  }
  return jac;
}

BundlePath push_forward(const BundleMap& F, const BundlePath& path) {
  const long K = path.steps();
  BundlePath image;
  image.grid = path.grid;
  image.base.resize(K + 1, F.target->dim());
  image.fiber.resize(K + 1, F.target->rank());
  for (long k = 0; k <= K; ++k) {
    const Vector x = row(path.base, k);
    const Vector xi = F.base_map(x);
    F.target->require_point(xi, k);
    image.base.row(k) = xi.transpose();
    image.fiber.row(k) = F(x, row(path.fiber, k)).transpose();
  }
  return image;
}

namespace {

Vector covector_at(const Field& theta, const Vector& x) {
  Matrix th = theta(x);
  return Eigen::Map<const Vector>(th.data(), th.size());
}

}  // namespace

ResidualParts bundle_map_strat_parts(const BundleMap& F, const Field& theta_target, const FramedPath& fp) {
  const Scene& src = *F.source;
  const Scene& dst = *F.target;
  require_covector(dst, theta_target, "bundle_map_strat_residual");
  const BundlePath& path = fp.path;
  const long K = path.steps();

  ResidualParts parts;
  parts.lhs = covariant_stratonovich_connector(dst, theta_target, push_forward(F, path))(K);

  ConnectionValue gamma;
  for (long k = 0; k < K; ++k) {
    const Vector xm = midpoint(path.base, k);
    const Vector vm = midpoint(path.fiber, k);
    src.require_point(xm, k);
    src.connection(xm, gamma);
    const Vector dx = (path.base.row(k + 1) - path.base.row(k)).transpose();
    const Vector dv = (path.fiber.row(k + 1) - path.fiber.row(k)).transpose();
    const Vector kv = connector(gamma, vm, dx, dv);
    const Vector th = covector_at(theta_target, F.base_map(xm));
    parts.rhs += th.dot(vertical_jacobian(F, xm, vm) * kv) + th.dot(horizontal_jacobian(F, xm, vm) * dx);
  }
  return parts;
}

double bundle_map_strat_residual(const BundleMap& F, const Field& theta_target, const FramedPath& fp) {
  return bundle_map_strat_parts(F, theta_target, fp).residual();
}

ResidualParts bundle_map_mixed_parts(const BundleMap& F, const Field& b_target, const FramedPath& fp) {
  const Scene& dst = *F.target;
  if (b_target.rows != dst.dim() || b_target.cols != dst.rank())
    throw ShapeError("bundle_map_mixed_residual: mixed section must be d' x n'");
  const BundlePath& path = fp.path;
  const long K = path.steps();

  ResidualParts parts;
  const FramedPath image = decompose(dst, push_forward(F, path));
  parts.lhs = mixed_cross_integral(dst, b_target, image)(K);

  for (long k = 0; k < K; ++k) {
    const Vector xm = midpoint(path.base, k);
    const Vector vm = midpoint(path.fiber, k);
    const Vector dx = (path.base.row(k + 1) - path.base.row(k)).transpose();
    const Vector pushed_dx = base_jacobian(F, xm) * dx;
    const Matrix b = b_target(F.base_map(xm));
    const Vector vertical = vertical_jacobian(F, xm, vm) * frame_increment(fp, k);
    const Vector horizontal = horizontal_jacobian(F, xm, vm) * dx;
    parts.rhs += bilinear(b, pushed_dx, vertical) + bilinear(b, pushed_dx, horizontal);
  }
  return parts;
}

double bundle_map_mixed_residual(const BundleMap& F, const Field& b_target, const FramedPath& fp) {
  return bundle_map_mixed_parts(F, b_target, fp).residual();
}

ResidualParts bundle_map_ito_parts(const BundleMap& F, const Field& theta_target, const FramedPath& fp) {
  const Scene& src = *F.source;
  const Scene& dst = *F.target;
  require_covector(dst, theta_target, "bundle_map_ito_residual");
  const BundlePath& path = fp.path;
  const long K = path.steps();
  const int d = src.dim();
  const double h = src.fd_step;

  ResidualParts parts;
  const FramedPath image = decompose(dst, push_forward(F, path));
  parts.lhs = covariant_ito(dst, theta_target, image)(K);

  // η = (D^vF)^* θ′ at fixed fibre value v.
  auto pulled_back = [&](const Vector& x, const Vector& v) -> Vector {
    return vertical_jacobian(F, x, v).transpose() * covector_at(theta_target, F.base_map(x));
  };

  ConnectionValue gamma;
  for (long k = 0; k < K; ++k) {
    const Vector xk = row(path.base, k);
    const Vector vk = row(path.fiber, k);
    const Vector xm = midpoint(path.base, k);
    const Vector vm = midpoint(path.fiber, k);
    const Vector dx = (path.base.row(k + 1) - path.base.row(k)).transpose();
    const Vector w = frame_increment(fp, k);

    // ∫(D^vF)^*θ′ D^I v
    const double ito_term = pulled_back(xk, vk).dot(w);

    // ∫(D^hF)^*θ′ ∘ dπv
    const Vector image_xm = F.base_map(xm);
    const Vector th = covector_at(theta_target, image_xm);
    const Matrix dh = horizontal_jacobian(F, xm, vm);
    const double strat_term = th.dot(dh * dx);

    // ½∫(∇η − (F̃_* ⊗ D^vF)^*∇′θ′)(dπv, Dv)
    src.require_point(xm, k);
    src.connection(xm, gamma);
    const Vector eta = pulled_back(xm, vm);
    Matrix nabla_eta(d, src.rank());
    for (int j = 0; j < d; ++j) {
      Vector xp = xm, xq = xm;
      xp(j) += h;
      xq(j) -= h;
      const Vector deta = (pulled_back(xp, vm) - pulled_back(xq, vm)) / (2.0 * h);
      nabla_eta.row(j) = (deta - gamma[j].transpose() * eta).transpose();
    }
    const Matrix fstar = base_jacobian(F, xm);
    const Matrix nabla_theta = nabla_covector(dst, theta_target, image_xm, dst.fd_step);
    const Matrix pulled_nabla = fstar.transpose() * nabla_theta * vertical_jacobian(F, xm, vm);
    const double mixed_term = 0.5 * bilinear(nabla_eta - pulled_nabla, dx, w);

    // −½∫(F̃_* ⊗ D^hF)^*∇′θ′(dπv, dπv): the bracket of the image path splits
    // into a vertical and a horizontal part, and both carry the same sign.
    const double bracket_term = -0.5 * bilinear(nabla_theta, fstar * dx, dh * dx);

    parts.rhs += ito_term + strat_term + mixed_term + bracket_term;
  }
  return parts;
}

double bundle_map_ito_residual(const BundleMap& F, const Field& theta_target, const FramedPath& fp) {
  return bundle_map_ito_parts(F, theta_target, fp).residual();
}

// ---------------------------------------------------------------------------

FamilyOfPaths make_family(const Scene& s, const SdeSpec& spec, const TimeGrid& grid,
                          const WienerDriver& driver, const std::vector<double>& params,
                          const Vector& dx0, const Vector& dv0) {
  FamilyOfPaths fam;
  fam.params = params;
  for (double a : params) {
    SdeSpec member = spec;
    member.x0 = spec.x0 + a * dx0;
    member.v0 = spec.v0 + a * dv0;
    fam.paths.push_back(simulate_bundle_semimartingale(s, member, grid, driver));
  }
  return fam;
}

CommutationResult commutation_defect(const Scene& s, const Field& theta, const FamilyOfPaths& fam,
                                     std::size_t index) {
  if (fam.paths.size() < 3 || fam.params.size() != fam.paths.size())
    throw std::invalid_argument("commutation_defect: family needs at least 3 members");
  if (index == 0 || index + 1 >= fam.paths.size())
    throw std::invalid_argument("commutation_defect: index needs a neighbour on each side");
  require_covector(s, theta, "commutation_defect");

  const BundlePath& centre = fam.paths[index];
  const BundlePath& lo = fam.paths[index - 1];
  const BundlePath& hi = fam.paths[index + 1];
  const double da = fam.params[index + 1] - fam.params[index - 1];
  const long K = centre.steps();
  const int d = s.dim();
  const int n = s.rank();

  const Matrix dxa = (hi.base - lo.base) / da;
  const Matrix dva = (hi.fiber - lo.fiber) / da;

  // ∇_a J as a path in E over the central base path.
  BundlePath nabla_a;
  nabla_a.grid = centre.grid;
  nabla_a.base = centre.base;
  nabla_a.fiber.resize(K + 1, n);
  ConnectionValue gamma;
  for (long k = 0; k <= K; ++k) {
    s.connection(row(centre.base, k), gamma);
    nabla_a.fiber.row(k) = connector(gamma, row(centre.fiber, k), row(dxa, k), row(dva, k)).transpose();
  }

  CommutationResult r;
  r.lhs = covariant_stratonovich_connector(s, theta, nabla_a)(K);
  r.d_integral = (covariant_stratonovich_connector(s, theta, hi)(K) -
                  covariant_stratonovich_connector(s, theta, lo)(K)) / da;

  Matrix th;
  for (long k = 0; k < K; ++k) {
    const Vector xm = midpoint(centre.base, k);
    const Vector vm = midpoint(centre.fiber, k);
    const Vector dx = (centre.base.row(k + 1) - centre.base.row(k)).transpose();
    const Vector dv = (centre.fiber.row(k + 1) - centre.fiber.row(k)).transpose();
    const Vector da_x = midpoint(dxa, k);
    s.connection(xm, gamma);
    const Vector kv = connector(gamma, vm, dx, dv);
    r.leibniz += da_x.dot(nabla_covector(s, theta, xm, s.fd_step) * kv);

    // θ R(∘dx, ∂_a x) J: the sign that makes the defect equal this term.
    const CurvatureValue curv = bundle_curvature(s, xm, s.fd_step);
    Matrix rc = Matrix::Zero(n, n);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) rc.noalias() += dx(i) * da_x(j) * curv(i, j);
    theta.eval(xm, vm, th);
    r.curvature_term += Eigen::Map<const Vector>(th.data(), n).dot(rc * vm);
  }
  r.defect = r.lhs - (r.d_integral - r.leibniz);
  return r;
}

Vector ito_form_integral(const Scene& s, const Field& alpha, const Matrix& base) {
  const int d = s.dim();
  if (alpha.rows * alpha.cols != d) throw ShapeError("ito_form_integral: 1-form must have d components");
  const long K = static_cast<long>(base.rows()) - 1;
  Vector out = Vector::Zero(K + 1);
  for (long k = 0; k < K; ++k) {
    const Vector xm = midpoint(base, k);
    s.require_point(xm, k);
    const Vector dx = (base.row(k + 1) - base.row(k)).transpose();
    const double strat = alpha.vec(xm).dot(dx);
    const double correction = dx.dot(nabla_one_form(s, alpha, xm, s.fd_step) * dx);
    out(k + 1) = out(k) + strat - 0.5 * correction;
  }
  return out;
}

}  // namespace vbc
