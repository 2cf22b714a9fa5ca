#include "covloc_cli/cli.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "covloc/bench.hpp"
#include "covloc/config.hpp"
#include "covloc/crb.hpp"
#include "covloc/errors.hpp"

namespace covloc::cli {

namespace {

using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format;
  std::optional<std::size_t> trials;
  bool verbose = false;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

json point(const Position& p) { return json::array({p.x(), p.y(), p.z()}); }

json truth_json(const Scenario& s) {
  json a = json::array();
  for (const auto& e : s.emitters) a.push_back({{"position_m", point(e.position)}, {"power", e.power}});
  return a;
}

void emit(const Options& opt, const std::string& text, std::ostream& out) {
  if (opt.out.empty()) {
    out << text;
    return;
  }
  std::ofstream file(opt.out, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + opt.out);
  file << text;
}

RunConfig load(const Options& opt) {
  if (opt.config.empty()) throw ConfigError("--config", "a config file is required");
  return load_config(opt.config);
}

Scenario scenario_from(const RunConfig& cfg, const Options& opt) {
  return cfg.experiment.base_scenario.instantiate(opt.seed.value_or(cfg.scenario_seed));
}

std::string simulate(const Options& opt, std::ostream& err) {
  const RunConfig cfg = load(opt);
  const ExperimentSpec& spec = cfg.experiment;
  const Scenario scenario = scenario_from(cfg, opt);
  const SnapshotBlock block = synthesize(scenario);
  const CovarianceMeasurement meas = measure(scenario, block);
  const ArrayModel model{scenario.trajectory, scenario.propagation};

  const auto start = std::chrono::steady_clock::now();
  const LocalizationResult off = solve_off_grid(meas, model, spec.solver);
  if (opt.verbose) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    err << "off-grid: " << off.positions.size() << " targets, " << off.iterations << " iterations, " << dt.count()
        << " s\n";
  }
  std::optional<LocalizationResult> on;
  if (spec.on_grid_spacing) {
    GridSpec grid = spec.solver.grid;
    grid.spacing = *spec.on_grid_spacing;
    on = solve_on_grid(meas, model, CandidateSet(grid.points()), spec.on_grid, *spec.on_grid_spacing);
  }

  const TrialOutcome scored = score(off.positions, scenario.emitter_positions(), spec.detection_radius_m);
  if (opt.format == "csv") {
    std::string s = "x_m,y_m,z_m,power\n";
    for (std::size_t i = 0; i < off.positions.size(); ++i) {
      const Position& p = off.positions[i];
      s += fmt(p.x()) + "," + fmt(p.y()) + "," + fmt(p.z()) + "," + fmt(off.powers[i]) + "\n";
    }
    return s;
  }
  json doc = {{"seed", scenario.seed},
              {"truth", truth_json(scenario)},
              {"noise_variance", scenario.noise_variance},
              {"result", off},
              {"recovered", scored.recovered},
              {"max_error_m", scored.max_error}};
  if (on) doc["on_grid"] = *on;
  return doc.dump(2) + "\n";
}

std::string sweep(const Options& opt, std::ostream& err) {
  RunConfig cfg = load(opt);
  ExperimentSpec& spec = cfg.experiment;
  if (opt.trials) spec.trials = *opt.trials;
  if (opt.seed) spec.base_seed = *opt.seed;
  spec.validate();
  const auto start = std::chrono::steady_clock::now();
  const RmseTable table = run_experiment(spec);
  if (opt.verbose) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    err << "sweep over " << to_string(spec.sweep_axis) << ": " << spec.sweep_values.size() << " points x "
        << spec.trials << " trials in " << dt.count() << " s\n";
  }
  return opt.format == "json" ? table.to_json().dump(2) + "\n" : table.to_csv();
}

std::string crb(const Options& opt, std::ostream& err) {
  const RunConfig cfg = load(opt);
  const Scenario scenario = scenario_from(cfg, opt);
  const SnapshotBlock block = synthesize(scenario);
  const CrbResult bound = compute_crb(scenario, block.emitter_signals, cfg.experiment.crb_dims);
  if (opt.verbose) err << "FIM condition number " << bound.fim_condition << "\n";
  if (opt.format == "csv") {
    std::string s = "target,x_m,y_m,z_m,crb_m\n";
    for (std::size_t k = 0; k < scenario.emitters.size(); ++k) {
      const Position& p = scenario.emitters[k].position;
      s += std::to_string(k) + "," + fmt(p.x()) + "," + fmt(p.y()) + "," + fmt(p.z()) + "," +
           fmt(bound.per_target_rmse_bound[k]) + "\n";
    }
    return s;
  }
  json targets = json::array();
  for (std::size_t k = 0; k < scenario.emitters.size(); ++k) {
    targets.push_back({{"position_m", point(scenario.emitters[k].position)},
                       {"crb_m", bound.per_target_rmse_bound[k]}});
  }
  json matrix = json::array();
  for (Eigen::Index i = 0; i < bound.matrix.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < bound.matrix.cols(); ++j) row.push_back(bound.matrix(i, j));
    matrix.push_back(row);
  }
  const json doc = {{"seed", scenario.seed},
                    {"dims", cfg.experiment.crb_dims},
                    {"noise_variance", scenario.noise_variance},
                    {"fim_condition", bound.fim_condition},
                    {"targets", targets},
                    {"matrix_m2", matrix}};
  return doc.dump(2) + "\n";
}

std::string oracle_check(const Options& opt, std::ostream& err) {
  OracleCheckSpec spec;
  if (opt.seed) spec.seed = *opt.seed;
  if (opt.trials) spec.instances = *opt.trials;
  const OracleCheckReport report = run_oracle_check(spec);
  if (opt.verbose) {
    for (const auto& row : report.rows) {
      err << "delta = " << row.delta_factor << " |r|_inf: " << row.matches << "/" << row.instances << "\n";
    }
  }
  return opt.format == "json" ? report.to_json().dump(2) + "\n" : report.to_csv();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Direct multi-emitter localization from a moving array by sparse covariance fitting"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&opt](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--seed", opt.seed, "Override the seed");
    sub->add_option("--out", opt.out, "Write output here instead of stdout");
    sub->add_option("--format", opt.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--trials", opt.trials, "Override the number of trials")->check(CLI::PositiveNumber);
    sub->add_flag("--verbose,-v", opt.verbose, "Progress on stderr");
  };

  std::string (*action)(const Options&, std::ostream&) = nullptr;
  auto* sim = app.add_subcommand("simulate", "Solve one scenario and print the result with the truth");
  add_common(sim, true);
  sim->callback([&] { action = simulate; });
  auto* sw = app.add_subcommand("sweep", "Monte-Carlo RMSE sweep");
  add_common(sw, true);
  sw->callback([&] { action = sweep; });
  auto* cr = app.add_subcommand("crb", "Cramer-Rao bound for one scenario");
  add_common(cr, true);
  cr->callback([&] { action = crb; });
  auto* oc = app.add_subcommand("oracle-check", "Compare atan-MM supports against exhaustive l0");
  add_common(oc, false);
  oc->callback([&] { action = oracle_check; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  // Tables default to CSV, single results to JSON.
  if (opt.format.empty()) opt.format = (sw->parsed() || oc->parsed()) ? "csv" : "json";

  try {
    emit(opt, action(opt, err), out);
  } catch (const ConfigError& e) {
    err << "config error at " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace covloc::cli
