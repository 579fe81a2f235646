#include "vbcalc/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "vbcalc/fieldexpr.hpp"

namespace vbc {

using nlohmann::json;

namespace {

constexpr int kMaxSlots = 64;

std::vector<std::string> slot_names(int d, int n) {
  std::vector<std::string> names;
  for (int i = 1; i <= d; ++i) names.push_back("x" + std::to_string(i));
  for (int i = 1; i <= n; ++i) names.push_back("v" + std::to_string(i));
  return names;
}

std::map<std::string, double> with_pi(std::map<std::string, double> constants) {
  constants.emplace("pi", std::numbers::pi);
  return constants;
}

std::vector<std::optional<double>> parse_periods(const json& j, int d) {
  std::vector<std::optional<double>> periods(d);
  if (j.is_null()) return periods;
  if (j.is_number()) {
    for (auto& p : periods) p = j.get<double>();
  } else if (j.is_array()) {
    if (static_cast<int>(j.size()) != d) throw SceneConfigError("scene: 'periods' must have dim entries");
    for (int i = 0; i < d; ++i)
      if (!j[i].is_null()) periods[i] = j[i].get<double>();
  } else {
    throw SceneConfigError("scene: 'periods' must be a number, an array or null");
  }
  for (const auto& p : periods)
    if (p && !(*p > 0.0)) throw SceneConfigError("scene: periods must be positive");
  return periods;
}

std::string expr_string(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number()) return json(j.get<double>()).dump();
  throw SceneConfigError("field expression must be a string or a number");
}

/// Flatten a scalar / list / list-of-lists into row-major strings.
std::vector<std::string> flatten_exprs(const json& j, int& rows, int& cols) {
  std::vector<std::string> out;
  if (!j.is_array()) {
    rows = cols = 1;
    out.push_back(expr_string(j));
    return out;
  }
  rows = static_cast<int>(j.size());
  if (rows > 0 && j[0].is_array()) {
    cols = static_cast<int>(j[0].size());
    for (const auto& row : j) {
      if (!row.is_array() || static_cast<int>(row.size()) != cols)
        throw SceneConfigError("field expression matrix rows must have equal length");
      for (const auto& e : row) out.push_back(expr_string(e));
    }
  } else {
    cols = 1;
    for (const auto& e : j) out.push_back(expr_string(e));
  }
  return out;
}

}  // namespace

Field make_expr_field(FieldKind kind, int rows, int cols, const std::vector<std::string>& exprs,
                      int d, int n, const std::map<std::string, double>& constants) {
  if (static_cast<int>(exprs.size()) != rows * cols)
    throw SceneConfigError("field expression count does not match its shape");
  if (d + n > kMaxSlots) throw SceneConfigError("too many field variables");
  const auto slots = slot_names(d, n);
  const auto consts = with_pi(constants);
  std::vector<expr::Program> programs;
  bool fiber = false;
  for (const auto& src : exprs) {
    expr::ExprPtr e;
    try {
      e = expr::parse(src);
    } catch (const expr::ParseError& err) {
      throw SceneConfigError("in expression \"" + src + "\": " + err.what());
    }
    for (const auto& name : expr::free_variables(*e))
      if (name.size() > 1 && name[0] == 'v' && std::find(slots.begin(), slots.end(), name) != slots.end())
        fiber = true;
    try {
      programs.push_back(expr::compile(*e, slots, consts));
    } catch (const expr::UnboundVariable& err) {
      throw SceneConfigError("in expression \"" + src + "\": " + err.what());
    }
  }

  Field f;
  f.kind = kind;
  f.rows = rows;
  f.cols = cols;
  f.fiber_dependent = fiber;
  f.fn = [programs = std::move(programs), d, n, rows, cols, fiber](const Vector& x, const Vector& v,
                                                                     Matrix& out) {
    std::array<double, kMaxSlots> buf;
    for (int i = 0; i < d; ++i) buf[i] = x(i);
    if (fiber) {
      if (v.size() < n) throw std::invalid_argument("fibre-dependent field evaluated without fibre value");
      for (int i = 0; i < n; ++i) buf[d + i] = v(i);
    }
    std::span<const double> slots_view(buf.data(), d + n);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out(r, c) = programs[r * cols + c](slots_view);
  };
  return f;
}

std::shared_ptr<Scene> make_flat_scene(int d, int n, std::vector<std::optional<double>> periods) {
  if (d < 1 || n < 1) throw SceneConfigError("flat scene needs d >= 1 and n >= 1");
  auto s = std::make_shared<Scene>();
  s->name = "flat";
  s->manifold.dim = d;
  periods.resize(d);
  s->manifold.periods = std::move(periods);
  s->description = s->manifold.periodic() ? "flat torus, g = I, trivial connection"
                                          : "Euclidean space, g = I, trivial connection";
  s->bundle.rank = n;
  s->params["d"] = d;
  s->params["n"] = n;
  return s;
}

std::shared_ptr<Scene> make_twisted_flat_scene(double lambda) {
  auto s = std::make_shared<Scene>();
  s->name = "twisted-flat";
  s->description = "R^2, g = I, rank 2, Gamma_1 = lambda x2 J, Gamma_2 = 0 (curvature -lambda J)";
  s->manifold.dim = 2;
  s->manifold.periods.resize(2);
  s->bundle.rank = 2;
  s->bundle.christoffel = [lambda](const Vector& x, ConnectionValue& gamma) {
    gamma[0] << 0.0, lambda * x(1), -lambda * x(1), 0.0;
    gamma[1].setZero();
  };
  s->params["lambda"] = lambda;
  return s;
}

std::shared_ptr<Scene> make_sphere_stereo_scene() {
  auto s = std::make_shared<Scene>();
  s->name = "sphere-stereo";
  s->description = "unit sphere minus a point, stereographic chart, E = TM, Levi-Civita";
  s->manifold.dim = 2;
  s->manifold.periods.resize(2);
  s->manifold.metric = [](const Vector& x, Matrix& g) {
    const double c = 2.0 / (1.0 + x.squaredNorm());
    g.setIdentity(2, 2);
    g *= c * c;
  };
  // conformal metric λ² δ: Γ^i_{jk} = δ_ij ∂_k φ + δ_ik ∂_j φ − δ_jk ∂_i φ, φ = log λ
  auto lc = [](const Vector& x, LeviCivitaValue& out) {
    const double q = 1.0 + x.squaredNorm();
    const Vector dphi = -2.0 * x / q;
    for (int i = 0; i < 2; ++i) {
      out[i].setZero(2, 2);
      for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 2; ++k) {
          double v = 0.0;
          if (i == j) v += dphi(k);
          if (i == k) v += dphi(j);
          if (j == k) v -= dphi(i);
          out[i](j, k) = v;
        }
      }
    }
  };
  s->manifold.levi_civita = lc;
  s->bundle.rank = 2;
  s->bundle.christoffel = [lc](const Vector& x, ConnectionValue& gamma) {
    LeviCivitaValue sym(2, Matrix(2, 2));
    lc(x, sym);
    // Γ_{iα}^β = Γ^β_{iα}
    for (int i = 0; i < 2; ++i)
      for (int beta = 0; beta < 2; ++beta)
        for (int alpha = 0; alpha < 2; ++alpha) gamma[i](beta, alpha) = sym[beta](i, alpha);
  };
  return s;
}

std::vector<SceneInfo> builtin_scenes() {
  return {{"flat", "R^d or T^d (params: d, n, periods), g = I, Gamma = 0"},
          {"twisted-flat", "R^2, rank 2, Gamma_1 = lambda x2 J, Gamma_2 = 0 (param: lambda)"},
          {"sphere-stereo", "S^2 minus a point, stereographic chart, E = TM, Levi-Civita"},
          {"custom", "metric, connection and domain given as expressions (params: dim, rank)"}};
}

Field field_from_json(const json& j, const Scene& scene) {
  if (!j.is_object() || !j.contains("kind") || !j.contains("expr"))
    throw SceneConfigError("field needs 'kind' and 'expr'");
  const auto kind = field_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw SceneConfigError("unknown field kind '" + j.at("kind").get<std::string>() + "'");
  int rows = 0, cols = 0;
  auto exprs = flatten_exprs(j.at("expr"), rows, cols);
  const int d = scene.dim();
  const int n = scene.rank();
  auto require = [&](int r, int c) {
    if (rows != r || cols != c)
      throw SceneConfigError(std::string("field of kind '") + to_string(*kind) + "' must have shape " +
                             std::to_string(r) + "x" + std::to_string(c));
  };
  switch (*kind) {
    case FieldKind::Scalar: require(1, 1); break;
    case FieldKind::Section:
    case FieldKind::Covector: require(n, 1); break;
    case FieldKind::Mixed:
    case FieldKind::Form1: require(d, n); break;
    case FieldKind::OneForm: require(d, 1); break;
    case FieldKind::Endomorphism:
      if (rows != cols) throw SceneConfigError("endomorphism field must be square");
      break;
    case FieldKind::Matrix: break;
  }
  return make_expr_field(*kind, rows, cols, exprs, d, n, scene.params);
}

std::shared_ptr<Scene> scene_from_json(const json& j) {
  if (!j.is_object() || !j.contains("name")) throw SceneConfigError("scene needs a 'name'");
  const std::string name = j.at("name").get<std::string>();
  const json params = j.value("params", json::object());
  auto num = [&](const char* key, double fallback) {
    if (params.contains(key)) return params.at(key).get<double>();
    if (j.contains(key)) return j.at(key).get<double>();
    return fallback;
  };
  auto periods_json = [&] {
    if (params.contains("periods")) return params.at("periods");
    return j.value("periods", json());
  };

  std::shared_ptr<Scene> s;
  if (name == "flat") {
    const int d = static_cast<int>(num("d", 2));
    const int n = static_cast<int>(num("n", 1));
    s = make_flat_scene(d, n, parse_periods(periods_json(), d));
  } else if (name == "twisted-flat") {
    s = make_twisted_flat_scene(num("lambda", 1.0));
  } else if (name == "sphere-stereo") {
    s = make_sphere_stereo_scene();
  } else if (name == "custom") {
    const int d = static_cast<int>(num("dim", 0));
    const int n = static_cast<int>(num("rank", 0));
    if (d < 1 || n < 1) throw SceneConfigError("custom scene needs params dim >= 1 and rank >= 1");
    s = std::make_shared<Scene>();
    s->name = "custom";
    s->description = j.value("description", std::string("custom scene"));
    s->manifold.dim = d;
    s->manifold.periods = parse_periods(periods_json(), d);
    s->bundle.rank = n;
    for (auto it = params.begin(); it != params.end(); ++it)
      if (it.value().is_number()) s->params[it.key()] = it.value().get<double>();
    if (j.contains("metric")) {
      int r = 0, c = 0;
      auto exprs = flatten_exprs(j.at("metric"), r, c);
      if (r != d || c != d) throw SceneConfigError("custom metric must be dim x dim");
      Field g = make_expr_field(FieldKind::Matrix, d, d, exprs, d, 0, s->params);
      s->manifold.metric = [g](const Vector& x, Matrix& out) { g.eval(x, Vector(), out); };
    }
    if (j.contains("connection")) {
      const json& conn = j.at("connection");
      if (!conn.is_array() || static_cast<int>(conn.size()) != d)
        throw SceneConfigError("custom connection must list dim matrices (rank x rank each)");
      std::vector<Field> parts;
      for (const auto& m : conn) {
        int r = 0, c = 0;
        auto exprs = flatten_exprs(m, r, c);
        if (r != n || c != n) throw SceneConfigError("custom connection matrices must be rank x rank");
        parts.push_back(make_expr_field(FieldKind::Matrix, n, n, exprs, d, 0, s->params));
      }
      s->bundle.christoffel = [parts](const Vector& x, ConnectionValue& gamma) {
        for (std::size_t i = 0; i < parts.size(); ++i) parts[i].eval(x, Vector(), gamma[i]);
      };
    }
    if (j.contains("domain")) {
      Field dom = make_expr_field(FieldKind::Scalar, 1, 1, {expr_string(j.at("domain"))}, d, 0, s->params);
      s->manifold.domain = [dom](const Vector& x) {
        Matrix v(1, 1);
        dom.eval(x, Vector(), v);
        return v(0, 0) > 0.0;
      };
    }
  } else {
    throw SceneConfigError("unknown scene '" + name + "'");
  }

  for (auto it = params.begin(); it != params.end(); ++it)
    if (it.value().is_number()) s->params[it.key()] = it.value().get<double>();
  if (params.contains("h")) s->fd_step = params.at("h").get<double>();
  if (params.contains("h2")) s->fd_step2 = params.at("h2").get<double>();
  if (j.contains("description") && name != "custom") s->description = j.at("description").get<std::string>();

  if (j.contains("fields")) {
    for (auto it = j.at("fields").begin(); it != j.at("fields").end(); ++it) {
      try {
        s->add_field(it.key(), field_from_json(it.value(), *s));
      } catch (const SceneConfigError& e) {
        throw SceneConfigError("field '" + it.key() + "': " + e.what());
      }
    }
  }
  return s;
}

}  // namespace vbc
