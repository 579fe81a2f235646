#ifndef VBCALC_SCENES_HPP
#define VBCALC_SCENES_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vbcalc/geometry.hpp"

namespace vbc {

/// R^d (or T^d when periods are given), g = I, Γ = 0, rank n.
std::shared_ptr<Scene> make_flat_scene(int d, int n,
                                       std::vector<std::optional<double>> periods = {});

/// R², g = I, rank 2, Γ_1 = λ x² J with J = [[0, 1], [−1, 0]], Γ_2 = 0.
/// Curvature R_12 = −λ J everywhere.
std::shared_ptr<Scene> make_twisted_flat_scene(double lambda);

/// Unit sphere minus a point in the stereographic chart, g = 4 δ / (1 + |x|²)²,
/// E = TM with its Levi-Civita connection (closed form).
std::shared_ptr<Scene> make_sphere_stereo_scene();

struct SceneInfo {
  std::string name;
  std::string description;
};
std::vector<SceneInfo> builtin_scenes();

class SceneConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compile expression strings (row-major, rows×cols) into a field over a
/// scene with base dimension d and fibre-variable count n. Variables x1..xd
/// and v1..vn are runtime slots; `constants` (plus pi) are folded in.
Field make_expr_field(FieldKind kind, int rows, int cols, const std::vector<std::string>& exprs,
                      int d, int n, const std::map<std::string, double>& constants);

/// Parse a field description {"kind": ..., "expr": ...} against a scene.
Field field_from_json(const nlohmann::json& j, const Scene& scene);

/// Build a scene from its configuration object:
///   {"name": "twisted-flat", "params": {"lambda": 1}, "fields": {...}}
/// Built-in names: flat, twisted-flat, sphere-stereo, custom.
std::shared_ptr<Scene> scene_from_json(const nlohmann::json& j);

}  // namespace vbc

#endif  // VBCALC_SCENES_HPP
