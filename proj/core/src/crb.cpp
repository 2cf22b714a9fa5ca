#include "covloc/crb.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "covloc/errors.hpp"

namespace covloc {

namespace {

constexpr double kMaxCondition = 1e12;

std::string describe_null_direction(const Eigen::VectorXd& v, int d) {
  static const char* kAxis[] = {"x", "y", "z"};
  std::ostringstream os;
  bool first = true;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) < 0.1) continue;
    os << (first ? "" : " ") << (v(i) < 0 ? "-" : "+") << std::abs(v(i)) << "*" << kAxis[i % d] << (i / d + 1);
    first = false;
  }
  return os.str();
}

}  // namespace

CrbResult compute_crb(const Scenario& scenario, std::span<const Eigen::MatrixXcd> signal_draws, int d) {
  scenario.validate();
  if (d != 2 && d != 3) throw std::invalid_argument("crb: d must be 2 or 3");
  const auto& traj = scenario.trajectory;
  const auto L = static_cast<Eigen::Index>(traj.num_antennas());
  const auto K = static_cast<Eigen::Index>(scenario.emitters.size());
  const auto M = traj.num_instants();
  if (K > L) {
    throw BoundUndefinedError("crb: " + std::to_string(K) + " emitters exceed " + std::to_string(L) +
                              " antennas; A^H A is singular");
  }
  if (signal_draws.size() != M) throw std::invalid_argument("crb: need one signal block per observing instant");
  const auto positions = scenario.emitter_positions();
  const Eigen::Index dim = d * K;

  Eigen::MatrixXd fim = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t m = 0; m < M; ++m) {
    const auto& s = signal_draws[m];
    if (s.rows() != K || s.cols() < 1) throw std::invalid_argument("crb: signal block must be K x N with N >= 1");
    const auto& ant = traj.antennas(m);
    const Eigen::MatrixXcd a = steering_matrix(ant, positions, scenario.propagation);
    Eigen::MatrixXcd deriv(L, dim);
    for (Eigen::Index p = 0; p < K; ++p) {
      for (int axis = 0; axis < d; ++axis) {
        deriv.col(p * d + axis) =
            steering_derivative(ant, positions[static_cast<std::size_t>(p)], static_cast<Axis>(axis), scenario.propagation);
      }
    }
    Eigen::LDLT<Eigen::MatrixXcd> gram(a.adjoint() * a);
    if (gram.info() != Eigen::Success) throw RankDeficiencyError("crb: A^H A is singular at instant " + std::to_string(m));
    const Eigen::MatrixXcd projected = deriv - a * gram.solve(a.adjoint() * deriv);
    const Eigen::MatrixXcd q = deriv.adjoint() * projected;
    // sum_n conj(s_p(n)) s_q(n)
    const Eigen::MatrixXcd power = s.conjugate() * s.transpose();
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) fim(i, j) += (q(i, j) * power(i / d, j / d)).real();
    }
  }
  fim = 0.5 * (fim + fim.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fim);
  const double largest = eig.eigenvalues().maxCoeff();
  const double smallest = eig.eigenvalues().minCoeff();
  CrbResult out;
  out.fim_condition = smallest > 0.0 ? largest / smallest : std::numeric_limits<double>::infinity();
  if (!(largest > 0.0) || out.fim_condition > kMaxCondition) {
    std::string dirs;
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (eig.eigenvalues()(i) <= largest / kMaxCondition) {
        dirs += (dirs.empty() ? "" : "; ") + describe_null_direction(eig.eigenvectors().col(i), d);
      }
    }
    throw RankDeficiencyError("crb: Fisher information is rank deficient along " + dirs);
  }
  const Eigen::VectorXd inv_eig = eig.eigenvalues().cwiseInverse();
  out.matrix = 0.5 * scenario.noise_variance * eig.eigenvectors() * inv_eig.asDiagonal() * eig.eigenvectors().transpose();
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  for (Eigen::Index p = 0; p < K; ++p) {
    out.per_target_rmse_bound.push_back(std::sqrt(out.matrix.diagonal().segment(p * d, d).sum()));
  }
  return out;
}

}  // namespace covloc
