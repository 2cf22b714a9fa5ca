#include "covloc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "covloc/covariance.hpp"
#include "covloc/crb.hpp"
#include "covloc/errors.hpp"

namespace covloc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t as_count(double value, const char* what) {
  if (!(value >= 1.0) || value != std::floor(value) || value > 1e9) {
    throw std::invalid_argument(std::string(what) + " sweep values must be positive integers");
  }
  return static_cast<std::size_t>(value);
}

double max_pairwise_distance(const std::vector<Position>& points) {
  double extent = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) extent = std::max(extent, (points[i] - points[j]).norm());
  }
  return extent;
}

}  // namespace

// ---------------------------------------------------------------------------
// scenario template

void ScenarioTemplate::validate() const {
  if (!(propagation.frequency_hz > 0.0)) throw std::invalid_argument("carrier frequency must be > 0");
  if (!(propagation.speed_mps > 0.0)) throw std::invalid_argument("propagation speed must be > 0");
  if (element_offsets) {
    if (element_offsets->cols() < 1) throw std::invalid_argument("array needs at least one element");
  } else {
    if (elements < 1) throw std::invalid_argument("array needs at least one element");
    if (elements > 1 && !(array_aperture_m > 0.0)) throw std::invalid_argument("array aperture must be > 0");
  }
  if (reference_positions) {
    if (reference_positions->empty()) throw std::invalid_argument("trajectory needs at least one observing position");
  } else {
    if (observing_points < 1) throw std::invalid_argument("trajectory needs at least one observing point");
    if (!(virtual_aperture_m >= 0.0)) throw std::invalid_argument("virtual aperture must be >= 0");
    if (!(track_direction.norm() > 0.0)) throw std::invalid_argument("track direction must be non-zero");
  }
  if (emitters.empty()) throw std::invalid_argument("at least one emitter is required");
  if (active_emitters && (*active_emitters < 1 || *active_emitters > emitters.size())) {
    throw std::invalid_argument("active emitter count must be in [1, " + std::to_string(emitters.size()) + "]");
  }
  for (const auto& e : emitters) {
    if (!(e.power > 0.0)) throw std::invalid_argument("emitter powers must be > 0");
  }
  if (noise_variance && !(*noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  if (!std::isfinite(snr_db)) throw std::invalid_argument("snr_db must be finite");
  if (snapshots < 1) throw std::invalid_argument("snapshots must be >= 1");
}

Eigen::Matrix3Xd ScenarioTemplate::offsets() const {
  if (element_offsets) return *element_offsets;
  return random_linear_array(elements, array_aperture_m, array_seed);
}

ArrayTrajectory ScenarioTemplate::trajectory() const {
  const Eigen::Matrix3Xd layout = offsets();
  if (reference_positions) {
    std::vector<double> instants;
    std::vector<Eigen::Matrix3Xd> rows;
    for (std::size_t m = 0; m < reference_positions->size(); ++m) {
      instants.push_back(static_cast<double>(m));
      rows.emplace_back(layout.colwise() + (*reference_positions)[m]);
    }
    return ArrayTrajectory(std::move(instants), std::move(rows));
  }
  const Eigen::Vector3d half = 0.5 * virtual_aperture_m * track_direction.normalized();
  return linear_pass(track_centre - half, track_centre + half, observing_points, layout);
}

double ScenarioTemplate::resolved_noise_variance() const {
  if (noise_variance) return *noise_variance;
  const std::size_t k = active_emitters.value_or(emitters.size());
  double mean_power = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean_power += emitters[i].power;
  mean_power /= static_cast<double>(k);
  return mean_power / std::pow(10.0, snr_db / 10.0);
}

Scenario ScenarioTemplate::instantiate(std::uint64_t seed) const {
  validate();
  Scenario s;
  s.trajectory = trajectory();
  s.emitters.assign(emitters.begin(), emitters.begin() + static_cast<std::ptrdiff_t>(active_emitters.value_or(emitters.size())));
  s.propagation = propagation;
  s.noise_variance = resolved_noise_variance();
  s.snapshots = snapshots;
  s.seed = seed;
  s.validate();
  return s;
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Snr: return "snr";
    case SweepAxis::Aperture: return "aperture";
    case SweepAxis::ObservingPoints: return "observing_points";
    case SweepAxis::Antennas: return "antennas";
    case SweepAxis::Targets: return "targets";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (auto axis : {SweepAxis::Snr, SweepAxis::Aperture, SweepAxis::ObservingPoints, SweepAxis::Antennas,
                    SweepAxis::Targets}) {
    if (name == to_string(axis)) return axis;
  }
  throw std::invalid_argument("unknown sweep axis '" + name +
                              "' (expected snr, aperture, observing_points, antennas or targets)");
}

ScenarioTemplate apply_sweep(const ScenarioTemplate& base, SweepAxis axis, double value) {
  ScenarioTemplate t = base;
  switch (axis) {
    case SweepAxis::Snr:
      if (!std::isfinite(value)) throw std::invalid_argument("snr sweep values must be finite");
      t.snr_db = value;
      t.noise_variance.reset();
      break;
    case SweepAxis::Aperture:
      if (!(value > 0.0)) throw std::invalid_argument("aperture sweep values must be > 0");
      if (t.reference_positions) {
        auto& refs = *t.reference_positions;
        const double extent = max_pairwise_distance(refs);
        if (!(extent > 0.0)) throw std::invalid_argument("cannot rescale a trajectory with a single position");
        Position centroid = Position::Zero();
        for (const auto& p : refs) centroid += p;
        centroid /= static_cast<double>(refs.size());
        for (auto& p : refs) p = centroid + (p - centroid) * (value / extent);
      } else {
        t.virtual_aperture_m = value;
      }
      break;
    case SweepAxis::ObservingPoints:
      if (t.reference_positions) throw std::invalid_argument("observing_points sweep needs a generated trajectory");
      t.observing_points = as_count(value, "observing_points");
      break;
    case SweepAxis::Antennas:
      if (t.element_offsets) throw std::invalid_argument("antennas sweep needs a generated array");
      t.elements = as_count(value, "antennas");
      break;
    case SweepAxis::Targets:
      t.active_emitters = as_count(value, "targets");
      if (*t.active_emitters > t.emitters.size()) {
        throw std::invalid_argument("targets sweep value exceeds the emitter pool (" + std::to_string(t.emitters.size()) + ")");
      }
      break;
  }
  return t;
}

void ExperimentSpec::validate() const {
  base_scenario.validate();
  if (trials < 1) throw std::invalid_argument("experiment needs at least one trial");
  if (sweep_values.empty()) throw std::invalid_argument("experiment needs at least one sweep value");
  if (!std::is_sorted(sweep_values.begin(), sweep_values.end())) throw std::invalid_argument("sweep values must be sorted");
  for (double v : sweep_values) apply_sweep(base_scenario, sweep_axis, v).validate();
  solver.validate();
  if (on_grid_spacing) {
    if (!(*on_grid_spacing > 0.0)) throw std::invalid_argument("on-grid spacing must be > 0");
    on_grid.validate();
  }
  if (crb_dims != 2 && crb_dims != 3) throw std::invalid_argument("crb_dims must be 2 or 3");
  if (!(detection_radius_m > 0.0)) throw std::invalid_argument("detection radius must be > 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

// ---------------------------------------------------------------------------
// scoring

std::vector<std::size_t> match_positions(const std::vector<Position>& estimates, const std::vector<Position>& truths) {
  const std::size_t n = estimates.size();
  const std::size_t m = truths.size();
  if (n > m) throw std::invalid_argument("more estimates than truths");
  if (n == 0) return {};
  // Hungarian algorithm with potentials, 1-based rows/columns.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  auto cost = [&](std::size_t i, std::size_t j) { return (estimates[i - 1] - truths[j - 1]).squaredNorm(); };
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  }
  return assignment;
}

TrialOutcome score(const std::vector<Position>& estimates, const std::vector<Position>& truth, double radius) {
  TrialOutcome out;
  out.positions = estimates;
  out.correct_count = estimates.size() == truth.size();
  if (!out.correct_count) return out;
  const auto assignment = match_positions(estimates, truth);
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const double err = (estimates[i] - truth[assignment[i]]).norm();
    out.squared_error += err * err;
    out.max_error = std::max(out.max_error, err);
  }
  out.recovered = out.max_error <= radius;
  return out;
}

double rmse(const std::vector<std::vector<Position>>& estimates, const std::vector<Position>& truths) {
  if (estimates.empty()) throw std::invalid_argument("rmse needs at least one trial");
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& trial : estimates) {
    if (trial.size() != truths.size()) continue;
    total += score(trial, truths, std::numeric_limits<double>::infinity()).squared_error;
    ++used;
  }
  if (used == 0 || truths.empty()) return kNaN;
  return std::sqrt(total / (static_cast<double>(truths.size()) * static_cast<double>(used)));
}

// ---------------------------------------------------------------------------
// experiment

CovarianceMeasurement measure(const Scenario& scenario, const SnapshotBlock& block) {
  std::vector<Eigen::MatrixXcd> covs;
  covs.reserve(block.received.size());
  for (const auto& x : block.received) covs.push_back(estimate_covariance(x));
  return stack_measurement(std::move(covs), scenario.noise_variance);
}

TrialRecord run_trial(const ExperimentSpec& spec, double sweep_value, std::size_t trial) {
  const ScenarioTemplate tmpl = apply_sweep(spec.base_scenario, spec.sweep_axis, sweep_value);
  TrialRecord rec;
  rec.sweep_value = sweep_value;
  rec.trial = trial;
  rec.seed = spec.base_seed + trial;
  const Scenario scenario = tmpl.instantiate(rec.seed);
  rec.truth = scenario.emitter_positions();

  const SnapshotBlock block = synthesize(scenario);
  const CovarianceMeasurement meas = measure(scenario, block);
  const ArrayModel model{scenario.trajectory, scenario.propagation};

  const LocalizationResult off = solve_off_grid(meas, model, spec.solver);
  rec.off_grid = score(off.positions, rec.truth, spec.detection_radius_m);
  rec.iterations = off.iterations;
  rec.converged = off.converged;

  if (spec.on_grid_spacing) {
    GridSpec grid = spec.solver.grid;
    grid.spacing = *spec.on_grid_spacing;
    const LocalizationResult on =
        solve_on_grid(meas, model, CandidateSet(grid.points()), spec.on_grid, *spec.on_grid_spacing);
    rec.on_grid = score(on.positions, rec.truth, spec.detection_radius_m);
  }

  try {
    rec.crb_trace = compute_crb(scenario, block.emitter_signals, spec.crb_dims).matrix.trace();
  } catch (const NumericalError&) {
    rec.crb_trace = kNaN;
  }
  return rec;
}

namespace {

struct ErrorStats {
  double rmse = kNaN;
  double se = kNaN;
  std::size_t used = 0;
};

// Per-trial mean squared errors -> RMSE and its delta-method standard error.
ErrorStats error_stats(const std::vector<double>& mse) {
  ErrorStats s;
  s.used = mse.size();
  if (mse.empty()) return s;
  const double n = static_cast<double>(mse.size());
  const double mean = std::accumulate(mse.begin(), mse.end(), 0.0) / n;
  s.rmse = std::sqrt(mean);
  if (mse.size() < 2 || !(s.rmse > 0.0)) {
    s.se = 0.0;
    return s;
  }
  double var = 0.0;
  for (double e : mse) var += (e - mean) * (e - mean);
  var /= (n - 1.0);
  s.se = std::sqrt(var / n) / (2.0 * s.rmse);
  return s;
}

RmseRow summarize(double value, const std::vector<TrialRecord>& records) {
  RmseRow row;
  row.sweep_value = value;
  std::vector<double> off, on, crb;
  std::size_t recovered = 0;
  bool any_on = false;
  for (const auto& r : records) {
    const double k = static_cast<double>(r.truth.size());
    if (r.off_grid.correct_count) {
      off.push_back(r.off_grid.squared_error / k);
    } else {
      ++row.failures;
    }
    if (r.off_grid.recovered) ++recovered;
    if (r.on_grid) {
      any_on = true;
      if (r.on_grid->correct_count) {
        on.push_back(r.on_grid->squared_error / k);
      } else {
        ++row.ongrid_failures;
      }
    }
    if (std::isfinite(r.crb_trace)) crb.push_back(r.crb_trace / k);
  }
  const auto off_stats = error_stats(off);
  row.rmse_offgrid_m = off_stats.rmse;
  row.se_offgrid_m = off_stats.se;
  row.trials = off_stats.used;
  if (any_on) {
    const auto on_stats = error_stats(on);
    row.rmse_ongrid_m = on_stats.rmse;
    row.se_ongrid_m = on_stats.se;
  }
  if (crb.size() == records.size() && !crb.empty()) {
    row.crb_m = std::sqrt(std::accumulate(crb.begin(), crb.end(), 0.0) / static_cast<double>(crb.size()));
  }
  row.recovery_rate = static_cast<double>(recovered) / static_cast<double>(records.size());
  return row;
}

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

nlohmann::json position_json(const Position& p) { return nlohmann::json::array({p.x(), p.y(), p.z()}); }

nlohmann::json positions_json(const std::vector<Position>& ps) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : ps) out.push_back(position_json(p));
  return out;
}

nlohmann::json outcome_json(const TrialOutcome& o) {
  return {{"positions_m", positions_json(o.positions)},
          {"correct_count", o.correct_count},
          {"recovered", o.recovered},
          {"squared_error_m2", o.squared_error},
          {"max_error_m", o.max_error}};
}

}  // namespace

RmseTable run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const std::size_t per_value = spec.trials;
  const std::size_t total = per_value * spec.sweep_values.size();
  std::vector<TrialRecord> records(total);
  std::vector<std::exception_ptr> errors(total);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t task = next++; task < total; task = next++) {
      try {
        records[task] = run_trial(spec, spec.sweep_values[task / per_value], task % per_value);
      } catch (...) {
        errors[task] = std::current_exception();
      }
    }
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(spec.threads, total));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RmseTable table;
  table.axis = spec.sweep_axis;
  for (std::size_t v = 0; v < spec.sweep_values.size(); ++v) {
    const std::vector<TrialRecord> slice(records.begin() + static_cast<std::ptrdiff_t>(v * per_value),
                                         records.begin() + static_cast<std::ptrdiff_t>((v + 1) * per_value));
    table.rows.push_back(summarize(spec.sweep_values[v], slice));
  }
  table.records = std::move(records);
  return table;
}

std::string RmseTable::to_csv() const {
  std::string out = "sweep,rmse_offgrid_m,rmse_ongrid_m,crb_m,trials,failures\n";
  for (const auto& r : rows) {
    out += format_g(r.sweep_value) + "," + format_g(r.rmse_offgrid_m) + "," + format_g(r.rmse_ongrid_m) + "," +
           format_g(r.crb_m) + "," + std::to_string(r.trials) + "," + std::to_string(r.failures) + "\n";
  }
  return out;
}

nlohmann::json RmseTable::to_json() const {
  nlohmann::json j;
  j["sweep_axis"] = to_string(axis);
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"sweep", r.sweep_value},
                         {"rmse_offgrid_m", r.rmse_offgrid_m},
                         {"se_offgrid_m", r.se_offgrid_m},
                         {"rmse_ongrid_m", r.rmse_ongrid_m},
                         {"se_ongrid_m", r.se_ongrid_m},
                         {"crb_m", r.crb_m},
                         {"trials", r.trials},
                         {"failures", r.failures},
                         {"ongrid_failures", r.ongrid_failures},
                         {"recovery_rate", r.recovery_rate}});
  }
  j["trials"] = nlohmann::json::array();
  for (const auto& t : records) {
    nlohmann::json rec = {{"sweep", t.sweep_value},
                          {"trial", t.trial},
                          {"seed", t.seed},
                          {"truth_m", positions_json(t.truth)},
                          {"off_grid", outcome_json(t.off_grid)},
                          {"iterations", t.iterations},
                          {"converged", t.converged},
                          {"crb_trace_m2", t.crb_trace}};
    if (t.on_grid) rec["on_grid"] = outcome_json(*t.on_grid);
    j["trials"].push_back(std::move(rec));
  }
  return j;
}

void to_json(nlohmann::json& j, const LocalizationResult& r) {
  j = {{"positions_m", positions_json(r.positions)},
       {"powers", r.powers},
       {"iterations", r.iterations},
       {"final_objective", r.final_objective},
       {"converged", r.converged},
       {"lambda", r.lambda},
       {"delta", r.delta},
       {"prune_threshold", r.prune_threshold},
       {"objective_history", r.objective_history}};
}

// ---------------------------------------------------------------------------
// oracle check

OracleCheckReport run_oracle_check(const OracleCheckSpec& spec) {
  if (spec.instances < 1 || spec.rows < 1 || spec.atoms < 1) throw std::invalid_argument("oracle check sizes must be >= 1");
  if (spec.max_sparsity < 1 || spec.max_sparsity > spec.atoms) throw std::invalid_argument("max_sparsity out of range");
  if (!(spec.lambda_l0 > 0.0) || !(spec.noise_std >= 0.0)) throw std::invalid_argument("oracle check weights out of range");
  const auto rows = static_cast<Eigen::Index>(spec.rows);
  const auto atoms = static_cast<Eigen::Index>(spec.atoms);
  const std::size_t k_max = std::min<std::size_t>(4, spec.atoms);
  const double lambda_atan = spec.lambda_l0 / (std::numbers::pi / 2.0);

  OracleCheckReport report;
  for (double f : spec.delta_factors) {
    if (!(f > 0.0)) throw std::invalid_argument("delta factors must be > 0");
    report.rows.push_back({f, 0, spec.instances});
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, std::numbers::sqrt2 / 2.0);
  std::uniform_real_distribution<double> amplitude(1.0, 2.0);
  auto complex_draw = [&] {
    const double re = gauss(rng);
    const double im = gauss(rng);
    return Complex(re, im);
  };

  for (std::size_t inst = 0; inst < spec.instances; ++inst) {
    Eigen::MatrixXcd psi(rows, atoms);
    for (Eigen::Index c = 0; c < atoms; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) psi(r, c) = complex_draw();
      psi.col(c).normalize();
    }
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, spec.max_sparsity)(rng);
    std::vector<std::size_t> order(spec.atoms);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(order[i], order[std::uniform_int_distribution<std::size_t>(i, spec.atoms - 1)(rng)]);
    }
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(atoms);
    for (std::size_t i = 0; i < k; ++i) rho(static_cast<Eigen::Index>(order[i])) = amplitude(rng);
    Eigen::VectorXcd r = psi * rho.cast<Complex>();
    for (Eigen::Index i = 0; i < rows; ++i) r(i) += spec.noise_std * complex_draw();

    const L0Solution oracle = l0_oracle(r, psi, spec.lambda_l0, k_max);
    const double r_inf = r.cwiseAbs().maxCoeff();
    const double delta_start = spec.continuation ? *std::max_element(spec.delta_factors.begin(), spec.delta_factors.end()) * r_inf : 0.0;
    for (auto& row : report.rows) {
      const double delta = row.delta_factor * r_inf;
      const auto mm = solve_fixed_dictionary(r, psi, lambda_atan, delta, 1e-3 * delta, 500, 1e-12, 1e-12, delta_start);
      if (mm.support == oracle.support) ++row.matches;
    }
  }
  return report;
}

std::string OracleCheckReport::to_csv() const {
  std::string out = "delta_factor,matches,instances\n";
  for (const auto& r : rows) out += format_g(r.delta_factor) + "," + std::to_string(r.matches) + "," + std::to_string(r.instances) + "\n";
  return out;
}

nlohmann::json OracleCheckReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"delta_factor", r.delta_factor}, {"matches", r.matches}, {"instances", r.instances}});
  return {{"oracle_check", j}};
}

}  // namespace covloc
