#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "covloc/covariance.hpp"
#include "covloc/dictionary.hpp"
#include "covloc/scene.hpp"

namespace covloc {

/// Trajectory plus carrier: everything needed to evaluate atoms.
struct ArrayModel {
  ArrayTrajectory trajectory;
  Propagation propagation;
};

/// Rectangular coarse grid in the z = `z` plane (or a box when z_max > z_min).
struct GridSpec {
  double x_min = 0.0, x_max = 0.0;
  double y_min = 0.0, y_max = 0.0;
  double z_min = 0.0, z_max = 0.0;
  double spacing = 0.0;

  void validate() const;
  /// Points ordered x fastest, then y, then z.
  std::vector<Position> points() const;
};

struct LineSearch {
  /// Length in meters of the first trial displacement along -grad. Zero means
  /// "one coarse grid spacing".
  double initial_step_m = 0.0;
  double shrink = 0.5;
  int max_halvings = 20;
};

struct SolverConfig {
  /// Regularization weight. Default 0.1 * |r|^2 / P0.
  std::optional<double> lambda;
  /// atan scale. Default 1e-3 * max(rho after the first update).
  std::optional<double> delta;
  /// Stop when |rho_new - rho_old| <= epsilon_stop * |rho_new| on the common support.
  double epsilon_stop = 1e-9;
  int max_iterations = 200;
  /// Hard pruning threshold in linear power. Default 1e-3 * max(rho after the first update).
  std::optional<double> prune_threshold;
  double rho_floor = 1e-12;
  /// Candidates closer than this are tentatively merged into one at their
  /// power-weighted mean; the merge is kept only if G does not increase.
  /// Default half a grid spacing; zero disables merging.
  std::optional<double> merge_radius_m;
  LineSearch line_search;
  GridSpec grid;

  void validate() const;
};

/// Iteration state of the off-grid algorithm. b_diag is diag(B) = beta / 2.
struct SolverState {
  CandidateSet candidates;
  Eigen::VectorXd rho;
  Eigen::VectorXd b_diag;
  std::vector<double> objective_history;
  int iteration = 0;
};

struct LocalizationResult {
  std::vector<Position> positions;
  std::vector<double> powers;
  int iterations = 0;
  double final_objective = 0.0;
  bool converged = false;
  std::vector<double> objective_history;
  double lambda = 0.0;
  double delta = 0.0;
  double prune_threshold = 0.0;
};

// -- penalty and surrogate ------------------------------------------------

/// lambda * sum atan(|rho_p| / delta) + |r - Psi rho|^2.
double objective(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi, const Eigen::VectorXd& rho,
                 double lambda, double delta);

/// beta_p = delta / (max(|rho_p|, floor) (delta^2 + rho_p^2)).
Eigen::VectorXd surrogate_weights(const Eigen::VectorXd& rho, double delta, double rho_floor);

/// (Re(Psi^H Psi) + lambda diag(b))^{-1} Re(Psi^H r), negatives clamped to zero.
Eigen::VectorXd update_rho(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi, const Eigen::VectorXd& b_diag,
                           double lambda);

// -- position refinement --------------------------------------------------

/// Concentrated cost L(S) = -2 Re(r^H Psi) (Re(Psi^H Psi) + lambda B)^{-1} Re(Psi^H r).
double concentrated_cost(const ArrayModel& model, const CandidateSet& candidates, const Eigen::VectorXcd& r_hat,
                         const Eigen::VectorXd& b_diag, double lambda);

/// Analytic dL/dp for candidate `index`, assembled from the one non-zero
/// column of dPsi/dx_p with u = 2 Re(Psi^H r) and V = 2 (Re(Psi^H Psi) + lambda B).
Eigen::Vector3d position_gradient(const ArrayModel& model, const CandidateSet& candidates,
                                  const Eigen::VectorXcd& r_hat, const Eigen::VectorXd& b_diag, double lambda,
                                  std::size_t index);

/// One sequential gradient sweep over the candidates with backtracking. A
/// move is kept only if it raises neither L(S) nor |r - Psi rho|^2 at the
/// current rho. Candidates with rho below `prune_threshold` are left alone.
CandidateSet refine_positions(const SolverState& state, const Eigen::VectorXcd& r_hat, const ArrayModel& model,
                              const SolverConfig& cfg, double lambda, double prune_threshold);

/// Drops every index with rho < tau from S, rho and B together. An empty
/// candidate set in the result means nothing survived.
SolverState prune(const SolverState& state, double tau);

// -- solvers --------------------------------------------------------------

LocalizationResult solve_off_grid(const CovarianceMeasurement& measurement, const ArrayModel& model,
                                  const SolverConfig& cfg);

struct OnGridConfig {
  /// l1 weight. Default 0.05 * 2 max_p Re(psi_p^H r).
  std::optional<double> lambda;
  /// Relative to the largest recovered power.
  double relative_threshold = 1e-2;
  int max_iterations = 5000;
  /// KKT violation tolerance, relative to the largest correlation.
  double tolerance = 1e-10;
  /// Active grid points closer than this many spacings are reported as one
  /// emitter at the strongest point. Zero disables clustering.
  double cluster_spacings = 1.5;

  void validate() const;
};

/// Nonnegative l1 recovery on a fixed grid by an active-set solver over a
/// working set grown from KKT violations on the full grid.
LocalizationResult solve_on_grid(const CovarianceMeasurement& measurement, const ArrayModel& model,
                                 const CandidateSet& grid, const OnGridConfig& cfg, double grid_spacing = 0.0);

// -- l0 reference ---------------------------------------------------------

struct L0Solution {
  std::vector<std::size_t> support;
  Eigen::VectorXd rho;  ///< full length P, zero off the support
  double objective = 0.0;
};

/// Exhaustive min lambda |S| + |r - Psi_S x|^2 over supports of size <= k_max
/// (real least squares per support). Requires P <= 12 and k_max <= 4.
L0Solution l0_oracle(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi, double lambda, std::size_t k_max);

struct FixedDictionaryResult {
  std::vector<std::size_t> support;
  Eigen::VectorXd rho;  ///< full length P
  std::vector<double> objective_history;
  int iterations = 0;
  bool converged = false;
};

/// The rho half of the reweighted MM iteration on a fixed dictionary. With
/// delta_start > delta, MM is first run at delta_start, delta_start / 10, ...
/// and each stage warm-starts the next; the last stage uses delta and is the
/// one whose objective_history is returned.
FixedDictionaryResult solve_fixed_dictionary(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi,
                                             double lambda, double delta, double prune_threshold,
                                             int max_iterations = 500, double epsilon_stop = 1e-12,
                                             double rho_floor = 1e-12, double delta_start = 0.0);

}  // namespace covloc
