#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace covloc {

using Complex = std::complex<double>;
using Position = Eigen::Vector3d;

inline constexpr double kSpeedOfLight = 299792458.0;

enum class Axis { X = 0, Y = 1, Z = 2 };

/// Narrowband carrier and propagation speed.
struct Propagation {
  double frequency_hz = 0.0;
  double speed_mps = kSpeedOfLight;

  /// 2*pi*f/c in rad/m.
  double wavenumber() const;
  double wavelength() const { return speed_mps / frequency_hz; }
};

/// Antenna positions of a moving array at M slow-time instants. Column l of
/// antennas(m) is a_ml; column 0 is the phase reference.
class ArrayTrajectory {
 public:
  ArrayTrajectory() = default;
  ArrayTrajectory(std::vector<double> instants, std::vector<Eigen::Matrix3Xd> antennas);

  std::size_t num_instants() const { return antennas_.size(); }
  std::size_t num_antennas() const { return antennas_.empty() ? 0 : static_cast<std::size_t>(antennas_.front().cols()); }

  const std::vector<double>& instants() const { return instants_; }
  const Eigen::Matrix3Xd& antennas(std::size_t m) const { return antennas_.at(m); }
  const std::vector<Eigen::Matrix3Xd>& all_antennas() const { return antennas_; }

  /// Same trajectory with an extra instant appended.
  ArrayTrajectory with_instant(double instant, const Eigen::Matrix3Xd& antennas) const;

 private:
  std::vector<double> instants_;
  std::vector<Eigen::Matrix3Xd> antennas_;
};

/// Non-uniform linear array: L offsets along x in [0, aperture], the first at
/// 0 (reference) and the last at `aperture`, the rest uniform in between.
Eigen::Matrix3Xd random_linear_array(std::size_t elements, double aperture_m, std::uint64_t seed);

/// M reference positions uniformly spaced from `start` to `end` with the same
/// rigid element layout (offsets relative to the reference) at every instant.
ArrayTrajectory linear_pass(const Position& start, const Position& end, std::size_t observing_points,
                            const Eigen::Matrix3Xd& element_offsets);

struct Emitter {
  Position position = Position::Zero();
  double power = 1.0;  ///< sigma_p^2, linear
};

/// Full simulation truth.
struct Scenario {
  ArrayTrajectory trajectory;
  std::vector<Emitter> emitters;
  Propagation propagation;
  double noise_variance = 0.0;  ///< sigma_n^2 per antenna, linear
  std::size_t snapshots = 1;    ///< N per instant
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;

  std::vector<Position> emitter_positions() const;
};

/// Received samples per instant (L x N) and the emitter envelopes that
/// produced them (K x N). The latter feed the deterministic CRB.
struct SnapshotBlock {
  std::vector<Eigen::MatrixXcd> received;
  std::vector<Eigen::MatrixXcd> emitter_signals;
};

/// alpha(p) at one instant: entry l = exp(-j k (|a_l - p| - |a_1 - p|)).
/// Throws GeometryError if p coincides with an antenna.
Eigen::VectorXcd steering_vector(const Eigen::Matrix3Xd& antennas, const Position& emitter, const Propagation& prop);

/// d alpha / d coordinate at one instant (entries beta_l1).
Eigen::VectorXcd steering_derivative(const Eigen::Matrix3Xd& antennas, const Position& emitter, Axis axis,
                                     const Propagation& prop);

/// L x K steering matrix A(t_m) for a list of emitter positions.
Eigen::MatrixXcd steering_matrix(const Eigen::Matrix3Xd& antennas, std::span<const Position> emitters,
                                 const Propagation& prop);

/// Draws s_r(t_mn) = A(t_m) s(t_mn) + n(t_mn). Deterministic in scenario.seed.
SnapshotBlock synthesize(const Scenario& scenario);

}  // namespace covloc
