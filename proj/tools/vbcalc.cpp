#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vbcalc/harness.hpp"
#include "vbcalc/scenes.hpp"

namespace {

constexpr int kConfigError = 2;

std::vector<double> parse_steps(const std::string& text) {
  std::vector<double> steps;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad step '" + item + "'");
    steps.push_back(v);
  }
  return steps;
}

int report_and_exit(const vbc::ExperimentReport& rep, const std::string& dir) {
  vbc::write_report(rep, dir);
  vbc::write_summary(std::cout, rep);
  std::cout << "output       " << dir << "\n";
  return rep.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vbcalc: covariant stochastic calculus in vector bundles"};
  app.require_subcommand(1);

  std::string config;
  vbc::Overrides over;
  long paths = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string steps_text;

  auto* run = app.add_subcommand("run", "run the check named in a configuration file");
  run->add_option("--config", config, "configuration file (JSON)")->required();
  auto* paths_opt = run->add_option("--paths", paths, "number of paths");
  auto* dt_opt = run->add_option("--dt", dt, "time step");
  auto* seed_opt = run->add_option("--seed", seed, "run seed");
  run->add_option("--out", out, "output directory");

  auto* conv = app.add_subcommand("convergence", "self-convergence study over nested step sizes");
  conv->add_option("--config", config, "configuration file (JSON)")->required();
  conv->add_option("--steps", steps_text, "comma-separated step sizes, coarsest first")->required();
  auto* conv_paths = conv->add_option("--paths", paths, "number of paths");
  auto* conv_seed = conv->add_option("--seed", seed, "run seed");
  conv->add_option("--out", out, "output directory");

  auto* scenes = app.add_subcommand("scenes", "list built-in scenes");
  auto* validate = app.add_subcommand("validate", "check a configuration file without running it");
  validate->add_option("--config", config, "configuration file (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  if (scenes->parsed()) {
    for (const auto& s : vbc::builtin_scenes()) std::cout << s.name << "\t" << s.description << "\n";
    return 0;
  }

  try {
    if (*paths_opt || *conv_paths) over.paths = paths;
    if (*dt_opt) over.dt = dt;
    if (*seed_opt || *conv_seed) over.seed = seed;
    if (!out.empty()) over.out = out;
    if (conv->parsed()) over.steps = parse_steps(steps_text);

    const vbc::ExperimentConfig cfg = vbc::load_config(config, over);
    if (validate->parsed()) {
      std::cout << "valid: check " << (cfg.convergence ? "convergence:" : "") << cfg.check << " on scene '"
                << cfg.scene->name << "', " << cfg.paths << " paths, T = " << cfg.horizon << ", dt = " << cfg.dt
                << ", config hash " << cfg.hash() << "\n";
      return 0;
    }
    if (conv->parsed()) return report_and_exit(vbc::convergence_study(cfg, *over.steps), cfg.output);
    return report_and_exit(vbc::run_check(cfg), cfg.output);
  } catch (const vbc::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
