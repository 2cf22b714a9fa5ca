#include "covloc/covariance.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "covloc/errors.hpp"

namespace covloc {

Eigen::MatrixXcd estimate_covariance(const Eigen::MatrixXcd& block) {
  if (block.cols() < 1 || block.rows() < 1) throw std::invalid_argument("covariance estimate needs a non-empty block");
  Eigen::MatrixXcd r = block * block.adjoint() / static_cast<double>(block.cols());
  return 0.5 * (r + r.adjoint()).eval();
}

Eigen::VectorXcd vec(const Eigen::MatrixXcd& m) {
  return Eigen::Map<const Eigen::VectorXcd>(m.data(), m.size());
}

CovarianceMeasurement stack_measurement(std::vector<Eigen::MatrixXcd> per_instant, double noise_variance) {
  if (per_instant.empty()) throw std::invalid_argument("stack_measurement needs at least one instant");
  if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  const Eigen::Index L = per_instant.front().rows();
  for (std::size_t m = 0; m < per_instant.size(); ++m) {
    if (per_instant[m].rows() != L || per_instant[m].cols() != L) {
      throw std::invalid_argument("covariance " + std::to_string(m) + " is " + std::to_string(per_instant[m].rows()) +
                                  "x" + std::to_string(per_instant[m].cols()) + ", expected " + std::to_string(L) +
                                  "x" + std::to_string(L));
    }
  }
  const Eigen::Index block = L * L;
  CovarianceMeasurement out;
  out.stacked.resize(block * static_cast<Eigen::Index>(per_instant.size()));
  for (std::size_t m = 0; m < per_instant.size(); ++m) {
    Eigen::MatrixXcd shifted = per_instant[m];
    shifted.diagonal().array() -= noise_variance;
    out.stacked.segment(static_cast<Eigen::Index>(m) * block, block) = vec(shifted);
  }
  out.per_instant = std::move(per_instant);
  out.noise_variance_used = noise_variance;
  return out;
}

NoiseCovariance noise_covariance(const std::vector<Eigen::MatrixXcd>& per_instant, std::size_t snapshots) {
  if (snapshots == 0) throw std::invalid_argument("noise covariance needs N >= 1");
  NoiseCovariance out;
  out.block_diagonal.reserve(per_instant.size());
  const double scale = 1.0 / static_cast<double>(snapshots);
  for (const auto& r : per_instant) {
    const Eigen::Index L = r.rows();
    const Eigen::MatrixXcd rt = r.transpose();
    Eigen::MatrixXcd block(L * L, L * L);
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index j = 0; j < L; ++j) {
        block.block(i * L, j * L, L, L) = scale * rt(i, j) * r;
      }
    }
    out.block_diagonal.push_back(std::move(block));
  }
  return out;
}

double estimate_noise_floor(const Eigen::MatrixXcd& covariance, std::size_t k_max) {
  const auto L = static_cast<std::size_t>(covariance.rows());
  if (k_max >= L) {
    throw std::invalid_argument("noise floor needs k_max < L (k_max=" + std::to_string(k_max) + ", L=" + std::to_string(L) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(covariance, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("eigen-decomposition failed in noise floor estimate");
  // Ascending order.
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  return lambda.head(static_cast<Eigen::Index>(L - k_max)).mean();
}

namespace {

nlohmann::json complex_matrix_json(const Eigen::MatrixXcd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXcd complex_matrix_from_json(const nlohmann::json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto cols = n == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.at(0).size());
  Eigen::MatrixXcd m(n, cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw std::invalid_argument("ragged complex matrix");
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto& z = row.at(static_cast<std::size_t>(j));
      m(i, j) = {z.at(0).get<double>(), z.at(1).get<double>()};
    }
  }
  return m;
}

}  // namespace

void to_json(nlohmann::json& j, const CovarianceMeasurement& m) {
  nlohmann::json instants = nlohmann::json::array();
  for (const auto& r : m.per_instant) instants.push_back(complex_matrix_json(r));
  j = nlohmann::json{{"noise_variance_used", m.noise_variance_used}, {"per_instant", std::move(instants)}};
}

void from_json(const nlohmann::json& j, CovarianceMeasurement& m) {
  std::vector<Eigen::MatrixXcd> per_instant;
  for (const auto& r : j.at("per_instant")) per_instant.push_back(complex_matrix_from_json(r));
  m = stack_measurement(std::move(per_instant), j.at("noise_variance_used").get<double>());
}

}  // namespace covloc
