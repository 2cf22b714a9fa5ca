#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "covloc/scene.hpp"

namespace covloc {

/// Deterministic CRB on emitter coordinates. Parameters are ordered
/// x1, y1, [z1,] x2, y2, ... (d per emitter).
struct CrbResult {
  Eigen::MatrixXd matrix;             ///< dK x dK, m^2
  std::vector<double> per_target_rmse_bound;  ///< sqrt of each emitter's diagonal block trace, m
  double fim_condition = 0.0;
};

/// CRB = (sigma_n^2 / 2) [sum_m sum_n Re(G_mn^H P_m G_mn)]^{-1}, where
/// P_m = I - A_m (A_m^H A_m)^{-1} A_m^H and column (p, axis) of G_mn is
/// d alpha_p(t_m)/d axis * s_p(t_mn). `signal_draws[m]` is K x N.
/// Throws BoundUndefinedError if K > L and RankDeficiencyError if the
/// information matrix has condition number above 1e12.
CrbResult compute_crb(const Scenario& scenario, std::span<const Eigen::MatrixXcd> signal_draws, int d = 2);

}  // namespace covloc
