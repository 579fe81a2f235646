#ifndef VBCALC_TESTS_SUPPORT_HPP
#define VBCALC_TESTS_SUPPORT_HPP

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vbcalc/paths.hpp"
#include "vbcalc/scenes.hpp"

namespace vbc::test {

inline std::string source_path(const std::string& rel) {
  return std::string(VBCALC_SOURCE_DIR) + "/" + rel;
}

inline nlohmann::json read_json(const std::string& rel) {
  std::ifstream in(source_path(rel));
  return nlohmann::json::parse(in);
}

inline std::string slurp(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// twisted-flat (or flat when lambda is null) with the drift/diffusion/θ
/// fields used by the shipped configurations.
inline std::shared_ptr<Scene> fielded_scene(const char* name, double lambda = 1.0) {
  nlohmann::json j = {
      {"name", name},
      {"fields",
       {{"mu", {{"kind", "section"}, {"expr", {"-0.5*v1+sin(x1)", "-0.3*v2"}}}},
        {"sig", {{"kind", "matrix"}, {"expr", nlohmann::json::array({nlohmann::json::array({"0.5", "0.2*v1"}), nlohmann::json::array({"0.1", "0.4"})})}}},
        {"theta", {{"kind", "covector"}, {"expr", {"cos(x2)", "sin(x1)+1"}}}},
        {"b", {{"kind", "mixed"}, {"expr", nlohmann::json::array({nlohmann::json::array({"x2", "1"}), nlohmann::json::array({"0.5", "cos(x1)"})})}}}}}};
  if (std::string(name) == "twisted-flat") j["params"] = {{"lambda", lambda}};
  else j["params"] = {{"d", 2}, {"n", 2}};
  return scene_from_json(j);
}

inline SdeSpec sde_motion() {
  SdeSpec spec;
  spec.x0 = (Vector(2) << 0.3, 0.2).finished();
  spec.v0 = Vector::Ones(2);
  spec.base.kind = BaseDynamics::Kind::Brownian;
  spec.fiber.kind = FiberDynamics::Kind::Sde;
  spec.fiber.drift = "mu";
  spec.fiber.diffusion = "sig";
  return spec;
}

/// Smooth deterministic path: x = (0.3 + 0.5 sin t, 0.2 + 0.4 t), v = (cos 2t, 1 + t²).
inline BundlePath smooth_path(double horizon, long steps) {
  BundlePath p;
  p.grid = TimeGrid::uniform(horizon, steps);
  p.base.resize(steps + 1, 2);
  p.fiber.resize(steps + 1, 2);
  for (long k = 0; k <= steps; ++k) {
    double t = p.grid.t(k);
    p.base.row(k) << 0.3 + 0.5 * std::sin(t), 0.2 + 0.4 * t;
    p.fiber.row(k) << std::cos(2.0 * t), 1.0 + t * t;
  }
  return p;
}

}  // namespace vbc::test

#endif  // VBCALC_TESTS_SUPPORT_HPP
