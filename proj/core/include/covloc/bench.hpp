#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "covloc/scene.hpp"
#include "covloc/solver.hpp"

namespace covloc {

/// Generative description of a scene, so sweeps can vary one parameter and
/// rebuild the rest.
struct ScenarioTemplate {
  Propagation propagation{6e9, kSpeedOfLight};

  // Array layout: explicit offsets relative to the reference element, or a
  // random non-uniform linear array along x.
  std::optional<Eigen::Matrix3Xd> element_offsets;
  std::size_t elements = 11;
  double array_aperture_m = 4.0;
  std::uint64_t array_seed = 0;

  // Trajectory: explicit reference positions, or M points evenly spaced on a
  // straight pass of length `virtual_aperture_m` centred on `track_centre`.
  std::optional<std::vector<Position>> reference_positions;
  Position track_centre = Position::Zero();
  Eigen::Vector3d track_direction = Eigen::Vector3d::UnitX();
  double virtual_aperture_m = 60e3;
  std::size_t observing_points = 10;

  /// Emitter pool; a target-count sweep uses the first K.
  std::vector<Emitter> emitters;
  std::optional<std::size_t> active_emitters;

  /// Noise from SNR = 10 log10(mean sigma_p^2 / sigma_n^2) unless an explicit
  /// variance is set.
  double snr_db = 10.0;
  std::optional<double> noise_variance;
  std::size_t snapshots = 1000;

  void validate() const;
  Eigen::Matrix3Xd offsets() const;
  ArrayTrajectory trajectory() const;
  double resolved_noise_variance() const;
  Scenario instantiate(std::uint64_t seed) const;
};

enum class SweepAxis { Snr, Aperture, ObservingPoints, Antennas, Targets };

const char* to_string(SweepAxis axis);
/// Throws std::invalid_argument for unknown names.
SweepAxis parse_sweep_axis(const std::string& name);

/// Copy of `base` with the swept parameter set to `value`.
ScenarioTemplate apply_sweep(const ScenarioTemplate& base, SweepAxis axis, double value);

struct ExperimentSpec {
  ScenarioTemplate base_scenario;
  SweepAxis sweep_axis = SweepAxis::Snr;
  std::vector<double> sweep_values;
  std::size_t trials = 1;
  std::uint64_t base_seed = 0;
  SolverConfig solver;
  /// On-grid baseline spacing over the solver grid's bounds; unset disables it.
  std::optional<double> on_grid_spacing;
  OnGridConfig on_grid;
  int crb_dims = 2;
  /// A trial "recovers" the scene if it returns K positions each matched
  /// within this radius.
  double detection_radius_m = 100.0;
  /// Worker threads for trials; output does not depend on it.
  unsigned threads = 1;

  void validate() const;
};

/// Minimum-cost assignment of estimates to truths on squared distance.
/// Returns, for each estimate, the index of its truth. Requires
/// estimates.size() <= truths.size().
std::vector<std::size_t> match_positions(const std::vector<Position>& estimates, const std::vector<Position>& truths);

/// sqrt( sum of matched squared errors / (K * trials used) ). Trials whose
/// estimate count differs from K are skipped; NaN if none remain. Throws
/// std::invalid_argument on zero trials.
double rmse(const std::vector<std::vector<Position>>& estimates, const std::vector<Position>& truths);

struct TrialOutcome {
  std::vector<Position> positions;
  bool correct_count = false;
  bool recovered = false;
  double squared_error = 0.0;  ///< sum over matched targets; valid if correct_count
  double max_error = 0.0;
};

struct TrialRecord {
  double sweep_value = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::vector<Position> truth;
  TrialOutcome off_grid;
  std::optional<TrialOutcome> on_grid;
  int iterations = 0;
  bool converged = false;
  double crb_trace = std::numeric_limits<double>::quiet_NaN();  ///< NaN if undefined
};

struct RmseRow {
  double sweep_value = 0.0;
  double rmse_offgrid_m = 0.0;
  double rmse_ongrid_m = std::numeric_limits<double>::quiet_NaN();
  double crb_m = std::numeric_limits<double>::quiet_NaN();
  std::size_t trials = 0;    ///< trials used for the off-grid RMSE
  std::size_t failures = 0;  ///< off-grid trials with the wrong target count
  double se_offgrid_m = 0.0;  ///< Monte-Carlo standard error (delta method)
  double se_ongrid_m = std::numeric_limits<double>::quiet_NaN();
  std::size_t ongrid_failures = 0;
  double recovery_rate = 0.0;
};

struct RmseTable {
  SweepAxis axis = SweepAxis::Snr;
  std::vector<RmseRow> rows;
  std::vector<TrialRecord> records;

  /// Header `sweep,rmse_offgrid_m,rmse_ongrid_m,crb_m,trials,failures`, %.6g.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Scores a set of estimates against the truth.
TrialOutcome score(const std::vector<Position>& estimates, const std::vector<Position>& truth, double radius);

/// Covariance measurement from synthesized snapshots with the known noise floor removed.
CovarianceMeasurement measure(const Scenario& scenario, const SnapshotBlock& block);

/// One Monte-Carlo trial at a sweep value, seeded with base_seed + trial.
TrialRecord run_trial(const ExperimentSpec& spec, double sweep_value, std::size_t trial);

RmseTable run_experiment(const ExperimentSpec& spec);

// -- l0 equivalence check -------------------------------------------------

struct OracleCheckSpec {
  std::size_t instances = 100;
  std::size_t rows = 16;
  std::size_t atoms = 6;
  std::size_t max_sparsity = 2;
  double noise_std = 0.05;
  /// l0 weight; the atan problem uses lambda_l0 / (pi/2).
  double lambda_l0 = 0.25;
  /// delta values as fractions of |r|_inf.
  std::vector<double> delta_factors{1e-2, 1e-3, 1e-4};
  /// Warm-start smaller delta values from the largest one (delta continuation).
  bool continuation = true;
  std::uint64_t seed = 2024;
};

struct OracleCheckRow {
  double delta_factor = 0.0;
  std::size_t matches = 0;
  std::size_t instances = 0;
};

struct OracleCheckReport {
  std::vector<OracleCheckRow> rows;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Random complex Gaussian instances; counts how often the atan-MM support
/// equals the exhaustive l0 support.
OracleCheckReport run_oracle_check(const OracleCheckSpec& spec);

void to_json(nlohmann::json& j, const LocalizationResult& r);

}  // namespace covloc
