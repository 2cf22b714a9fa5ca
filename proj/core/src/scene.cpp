#include "covloc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "covloc/errors.hpp"

namespace covloc {

namespace {

// Distance below which an emitter is considered to sit on an antenna.
constexpr double kCoincidenceTol = 1e-9;

void check_distance(double r) {
  if (!(r > kCoincidenceTol)) {
    throw GeometryError("emitter coincides with an antenna (distance " + std::to_string(r) + " m)");
  }
}

// |a_l - p| - |a_1 - p| without cancellation: (|u|^2 - |v|^2) / (|u| + |v|).
double range_difference(const Position& a_l, const Position& a_ref, const Position& p, double r_l, double r_ref) {
  const double num = (a_l - a_ref).dot(a_l + a_ref - 2.0 * p);
  return num / (r_l + r_ref);
}

}  // namespace

double Propagation::wavenumber() const { return 2.0 * std::numbers::pi * frequency_hz / speed_mps; }

ArrayTrajectory::ArrayTrajectory(std::vector<double> instants, std::vector<Eigen::Matrix3Xd> antennas)
    : instants_(std::move(instants)), antennas_(std::move(antennas)) {
  if (antennas_.empty()) throw std::invalid_argument("trajectory needs at least one instant");
  if (instants_.size() != antennas_.size()) {
    throw std::invalid_argument("trajectory: " + std::to_string(instants_.size()) + " instant labels for " +
                                std::to_string(antennas_.size()) + " antenna rows");
  }
  const Eigen::Index L = antennas_.front().cols();
  if (L < 1) throw std::invalid_argument("trajectory needs at least one antenna");
  for (std::size_t m = 0; m < antennas_.size(); ++m) {
    const auto& a = antennas_[m];
    if (a.cols() != L) {
      throw std::invalid_argument("trajectory row " + std::to_string(m) + " has " + std::to_string(a.cols()) +
                                  " antennas, expected " + std::to_string(L));
    }
    if (!a.allFinite()) throw std::invalid_argument("trajectory row " + std::to_string(m) + " is not finite");
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index j = i + 1; j < L; ++j) {
        if ((a.col(i) - a.col(j)).norm() <= kCoincidenceTol) {
          throw std::invalid_argument("trajectory row " + std::to_string(m) + ": antennas " + std::to_string(i) +
                                      " and " + std::to_string(j) + " coincide");
        }
      }
    }
  }
}

ArrayTrajectory ArrayTrajectory::with_instant(double instant, const Eigen::Matrix3Xd& antennas) const {
  auto instants = instants_;
  auto rows = antennas_;
  instants.push_back(instant);
  rows.push_back(antennas);
  return ArrayTrajectory(std::move(instants), std::move(rows));
}

Eigen::Matrix3Xd random_linear_array(std::size_t elements, double aperture_m, std::uint64_t seed) {
  if (elements == 0) throw std::invalid_argument("array needs at least one element");
  if (elements > 1 && !(aperture_m > 0.0)) throw std::invalid_argument("array aperture must be positive");
  std::vector<double> xs{0.0};
  if (elements > 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, aperture_m);
    std::vector<double> inner;
    while (inner.size() < elements - 2) {
      const double x = uni(rng);
      const bool clash = x <= 0.0 || x >= aperture_m ||
                         std::any_of(inner.begin(), inner.end(), [&](double y) { return std::abs(x - y) < 1e-6; });
      if (!clash) inner.push_back(x);
    }
    std::sort(inner.begin(), inner.end());
    xs.insert(xs.end(), inner.begin(), inner.end());
    xs.push_back(aperture_m);
  }
  Eigen::Matrix3Xd offsets = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(elements));
  for (std::size_t l = 0; l < elements; ++l) offsets(0, static_cast<Eigen::Index>(l)) = xs[l];
  return offsets;
}

ArrayTrajectory linear_pass(const Position& start, const Position& end, std::size_t observing_points,
                            const Eigen::Matrix3Xd& element_offsets) {
  if (observing_points == 0) throw std::invalid_argument("linear pass needs at least one observing point");
  std::vector<double> instants;
  std::vector<Eigen::Matrix3Xd> rows;
  for (std::size_t m = 0; m < observing_points; ++m) {
    const double t = observing_points == 1 ? 0.5 : static_cast<double>(m) / static_cast<double>(observing_points - 1);
    const Position ref = start + t * (end - start);
    rows.emplace_back(element_offsets.colwise() + ref);
    instants.push_back(static_cast<double>(m));
  }
  return ArrayTrajectory(std::move(instants), std::move(rows));
}

void Scenario::validate() const {
  if (trajectory.num_instants() == 0) throw std::invalid_argument("scenario has no trajectory");
  if (emitters.empty()) throw std::invalid_argument("scenario needs at least one emitter");
  for (std::size_t k = 0; k < emitters.size(); ++k) {
    if (!emitters[k].position.allFinite()) throw std::invalid_argument("emitter " + std::to_string(k) + " position is not finite");
    if (!(emitters[k].power > 0.0)) throw std::invalid_argument("emitter " + std::to_string(k) + " power must be > 0");
  }
  if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  if (snapshots < 1) throw std::invalid_argument("snapshots per instant must be >= 1");
  if (!(propagation.frequency_hz > 0.0)) throw std::invalid_argument("carrier frequency must be > 0");
  if (!(propagation.speed_mps > 0.0)) throw std::invalid_argument("propagation speed must be > 0");
}

std::vector<Position> Scenario::emitter_positions() const {
  std::vector<Position> out;
  out.reserve(emitters.size());
  for (const auto& e : emitters) out.push_back(e.position);
  return out;
}

Eigen::VectorXcd steering_vector(const Eigen::Matrix3Xd& antennas, const Position& emitter, const Propagation& prop) {
  const Eigen::Index L = antennas.cols();
  if (L < 1) throw std::invalid_argument("steering vector needs at least one antenna");
  const double k = prop.wavenumber();
  const Position a_ref = antennas.col(0);
  const double r_ref = (a_ref - emitter).norm();
  check_distance(r_ref);
  Eigen::VectorXcd alpha(L);
  alpha(0) = Complex(1.0, 0.0);
  for (Eigen::Index l = 1; l < L; ++l) {
    const Position a_l = antennas.col(l);
    const double r_l = (a_l - emitter).norm();
    check_distance(r_l);
    alpha(l) = std::polar(1.0, -k * range_difference(a_l, a_ref, emitter, r_l, r_ref));
  }
  return alpha;
}

Eigen::VectorXcd steering_derivative(const Eigen::Matrix3Xd& antennas, const Position& emitter, Axis axis,
                                     const Propagation& prop) {
  const auto i = static_cast<Eigen::Index>(axis);
  const double k = prop.wavenumber();
  const Eigen::VectorXcd alpha = steering_vector(antennas, emitter, prop);
  const double r_ref = (antennas.col(0) - emitter).norm();
  const double g_ref = (emitter(i) - antennas(i, 0)) / r_ref;
  Eigen::VectorXcd d(alpha.size());
  for (Eigen::Index l = 0; l < alpha.size(); ++l) {
    const double r_l = (antennas.col(l) - emitter).norm();
    const double g_l = (emitter(i) - antennas(i, l)) / r_l;
    d(l) = Complex(0.0, -k) * alpha(l) * (g_l - g_ref);
  }
  d(0) = Complex(0.0, 0.0);
  return d;
}

Eigen::MatrixXcd steering_matrix(const Eigen::Matrix3Xd& antennas, std::span<const Position> emitters,
                                 const Propagation& prop) {
  Eigen::MatrixXcd A(antennas.cols(), static_cast<Eigen::Index>(emitters.size()));
  for (std::size_t p = 0; p < emitters.size(); ++p) {
    A.col(static_cast<Eigen::Index>(p)) = steering_vector(antennas, emitters[p], prop);
  }
  return A;
}

SnapshotBlock synthesize(const Scenario& scenario) {
  scenario.validate();
  const auto L = static_cast<Eigen::Index>(scenario.trajectory.num_antennas());
  const auto K = static_cast<Eigen::Index>(scenario.emitters.size());
  const auto N = static_cast<Eigen::Index>(scenario.snapshots);
  const auto positions = scenario.emitter_positions();

  std::mt19937_64 rng(scenario.seed);
  std::normal_distribution<double> gauss(0.0, std::numbers::sqrt2 / 2.0);
  auto unit_draws = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXcd z(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        z(r, c) = Complex(re, im);
      }
    }
    return z;
  };

  Eigen::VectorXd amplitude(K);
  for (Eigen::Index k = 0; k < K; ++k) amplitude(k) = std::sqrt(scenario.emitters[static_cast<std::size_t>(k)].power);
  const double noise_amplitude = std::sqrt(scenario.noise_variance);

  SnapshotBlock out;
  out.received.reserve(scenario.trajectory.num_instants());
  out.emitter_signals.reserve(scenario.trajectory.num_instants());
  for (std::size_t m = 0; m < scenario.trajectory.num_instants(); ++m) {
    const Eigen::MatrixXcd A = steering_matrix(scenario.trajectory.antennas(m), positions, scenario.propagation);
    Eigen::MatrixXcd s = amplitude.asDiagonal() * unit_draws(K, N);
    Eigen::MatrixXcd noise = unit_draws(L, N) * noise_amplitude;
    out.received.emplace_back(A * s + noise);
    out.emitter_signals.emplace_back(std::move(s));
  }
  return out;
}

}  // namespace covloc
