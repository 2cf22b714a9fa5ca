#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace covloc {

/// Per-instant sample covariances and the stacked, noise-floor-subtracted
/// covariance vector r_hat (length L^2 M, column-major vec per instant).
struct CovarianceMeasurement {
  std::vector<Eigen::MatrixXcd> per_instant;
  Eigen::VectorXcd stacked;
  double noise_variance_used = 0.0;

  std::size_t num_instants() const { return per_instant.size(); }
  std::size_t num_antennas() const {
    return per_instant.empty() ? 0 : static_cast<std::size_t>(per_instant.front().rows());
  }
};

/// Block-diagonal error covariance of r_hat; block m = R^T(t_m) (x) R(t_m) / N.
struct NoiseCovariance {
  std::vector<Eigen::MatrixXcd> block_diagonal;
};

/// (1/N) sum_n x_n x_n^H over the columns of `block`, symmetrized.
Eigen::MatrixXcd estimate_covariance(const Eigen::MatrixXcd& block);

/// Column-major vec of each R_hat minus noise_variance * vec(I), stacked in
/// instant order.
CovarianceMeasurement stack_measurement(std::vector<Eigen::MatrixXcd> per_instant, double noise_variance);

NoiseCovariance noise_covariance(const std::vector<Eigen::MatrixXcd>& per_instant, std::size_t snapshots);

/// Mean of the L - k_max smallest eigenvalues of R_hat.
double estimate_noise_floor(const Eigen::MatrixXcd& covariance, std::size_t k_max);

/// Column-major vec of a square matrix.
Eigen::VectorXcd vec(const Eigen::MatrixXcd& m);

void to_json(nlohmann::json& j, const CovarianceMeasurement& m);
void from_json(const nlohmann::json& j, CovarianceMeasurement& m);

}  // namespace covloc
