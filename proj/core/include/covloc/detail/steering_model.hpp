#pragma once

// Fast path used by the solvers. Psi is never materialized: with
// psi_p = vec(alpha_p alpha_p^H) per instant,
//   psi_p^H psi_q = sum_m |alpha_p^H alpha_q|^2   and   psi_p^H r = sum_m alpha_p^H R_m alpha_p,
// where R_m is block m of r_hat reshaped to L x L.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "covloc/solver.hpp"

namespace covloc::detail {

/// |r - Psi rho|^2 = r_norm2 - 2 corr^T rho + rho^T gram rho, for real rho.
struct QuadraticFit {
  Eigen::MatrixXd gram;  ///< Re(Psi^H Psi)
  Eigen::VectorXd corr;  ///< Re(Psi^H r)
  double r_norm2 = 0.0;

  static QuadraticFit from_dictionary(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi);

  double residual(const Eigen::VectorXd& rho) const;
  QuadraticFit subset(std::span<const std::size_t> keep) const;
};

/// sum_p atan(|rho_p| / delta)
double atan_penalty(const Eigen::VectorXd& rho, double delta);

/// Unconstrained minimizer of lambda rho^T B rho + |r - Psi rho|^2.
Eigen::VectorXd weighted_ridge(const QuadraticFit& fit, const Eigen::VectorXd& b_diag, double lambda);

/// Clamped weighted ridge. When `previous` is given (and B majorizes the
/// penalty there) the step is guaranteed not to raise the atan objective:
/// if clamping does, nonnegative coordinate descent on the surrogate takes over.
Eigen::VectorXd mm_rho_step(const QuadraticFit& fit, const Eigen::VectorXd& b_diag, double lambda, double delta,
                            const Eigen::VectorXd* previous);

/// Candidate set with cached per-instant steering matrices, Gram and correlations.
class SteeringModel {
 public:
  SteeringModel(const ArrayModel& model, std::vector<Position> positions, const Eigen::VectorXcd& r_hat);

  std::size_t size() const { return positions_.size(); }
  const std::vector<Position>& positions() const { return positions_; }
  const QuadraticFit& fit() const { return fit_; }
  const ArrayModel& array() const { return model_; }

  /// Steering columns, Gram column and correlation for `q` replacing candidate `slot`.
  struct Trial {
    Position position;
    std::vector<Eigen::VectorXcd> alpha;  ///< per instant
    Eigen::VectorXd gram_col;             ///< entry `slot` is |psi(q)|^2
    double corr = 0.0;
  };
  Trial evaluate(const Position& q, std::size_t slot) const;
  void replace(std::size_t slot, Trial trial);

  /// Re[(Psi rho - r)^H dpsi_p/dx] for x, y, z.
  Eigen::Vector3d residual_slope(std::size_t p, const Eigen::VectorXd& rho) const;

  void keep(std::span<const std::size_t> indices);

 private:
  ArrayModel model_;
  std::vector<Position> positions_;
  std::vector<Eigen::MatrixXcd> steer_;  ///< per instant, L x P
  std::vector<Eigen::MatrixXcd> data_;   ///< per instant R_m, L x L
  QuadraticFit fit_;
};

/// Sequential backtracking sweep; returns the number of candidates moved.
std::size_t refine_sweep(SteeringModel& model, const Eigen::VectorXd& rho, const Eigen::VectorXd& b_diag,
                         double lambda, double prune_threshold, const LineSearch& search, double initial_step);

}  // namespace covloc::detail
