#ifndef VBCALC_HARNESS_HPP
#define VBCALC_HARNESS_HPP

// Experiment configuration, Monte Carlo orchestration and reporting.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbcalc/covariant.hpp"
#include "vbcalc/harmonic.hpp"
#include "vbcalc/paths.hpp"
#include "vbcalc/thresholds.hpp"

namespace vbc {

inline constexpr const char* kVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  enum class Kind { Io, Parse, UnknownScene, UnknownField, UnknownCheck, Invariant };
  ConfigError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const std::vector<std::string>& known_checks();

struct ExperimentConfig {
  nlohmann::json json;  // effective configuration (after overrides)
  std::string check;    // base check id
  bool convergence = false;
  std::vector<double> steps;  // convergence ladder

  std::shared_ptr<Scene> scene;
  long paths = 100;
  double horizon = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  std::string output = "out";

  SdeSpec motion;
  int driver_dim = 0;

  std::string theta;
  std::string b;
  std::string sigma;
  std::string phi;
  std::string v_field;

  std::optional<BundleMap> map;  // prop24–26

  Vector family_dx0;  // commutation
  Vector family_dv0;
  double family_da = 1e-2;

  int degree = 1;  // harmonic
  GaugeMode mode = GaugeMode::Dt;
  bool martingale = true;
  bool lemma = false;
  long lemma_paths = 100;
  int sample_points = 64;
  int slices = 10;

  Thresholds thresholds;

  long steps_count() const;
  std::string hash() const;  // FNV-1a of the effective JSON, hex
};

struct Overrides {
  std::optional<long> paths;
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::vector<double>> steps;
};

/// Throws ConfigError with a distinct kind per failure class.
ExperimentConfig load_config(const std::string& path, const Overrides& overrides = {});
ExperimentConfig config_from_json(nlohmann::json j, const Overrides& overrides = {});

struct Aggregate {
  double median = 0.0;
  double iqr = 0.0;
  double mean = 0.0;
  double stderr_mean = 0.0;
};
Aggregate aggregate(const std::vector<double>& values);

struct PathRow {
  long id = 0;
  std::uint64_t seed = 0;
  std::vector<double> values;
};

struct ConvergenceRow {
  double dt = 0.0;
  double median_residual = 0.0;
  double order = 0.0;  // local order against the previous (coarser) level; NaN on the first
};

struct ExperimentReport {
  std::string check;
  std::string config_hash;
  std::uint64_t seed = 0;
  long paths = 0;
  long aborted = 0;

  std::vector<std::string> columns;
  std::vector<PathRow> rows;
  /// Ordered summary statistics (name, value).
  std::vector<std::pair<std::string, double>> summary;

  std::vector<ConvergenceRow> convergence;
  double slope = 0.0;
  bool exact = false;

  std::optional<MartingaleStatistic> martingale;
  std::vector<PathRow> lemma_rows;

  bool pass = false;
  int exit_code = 1;  // 0 pass, 1 statistical failure, 3 abort budget exceeded
  std::vector<std::string> notes;

  double value(const std::string& name) const;
};

ExperimentReport run_check(const ExperimentConfig& cfg);
ExperimentReport convergence_study(const ExperimentConfig& cfg, const std::vector<double>& steps);

/// Writes paths.csv, summary.txt and, when present, convergence.csv and lemma.csv.
void write_report(const ExperimentReport& rep, const std::string& dir);
void write_paths_csv(std::ostream& os, const ExperimentReport& rep);
void write_summary(std::ostream& os, const ExperimentReport& rep);
void write_convergence_csv(std::ostream& os, const ExperimentReport& rep);

}  // namespace vbc

#endif  // VBCALC_HARNESS_HPP
