#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "covloc/scene.hpp"

namespace covloc {

/// Minimum separation between candidate positions; closer pairs are duplicates.
inline constexpr double kMinCandidateSeparation = 1e-6;

/// Ordered set S of candidate emitter positions.
class CandidateSet {
 public:
  CandidateSet() = default;
  /// Throws GeometryError if two positions are closer than kMinCandidateSeparation.
  explicit CandidateSet(std::vector<Position> positions);

  std::size_t size() const { return positions_.size(); }
  bool empty() const { return positions_.empty(); }
  const Position& operator[](std::size_t i) const { return positions_[i]; }
  const std::vector<Position>& positions() const { return positions_; }

  /// Subset in the given index order.
  CandidateSet subset(std::span<const std::size_t> indices) const;

 private:
  std::vector<Position> positions_;
};

/// Psi(S): one column psi(p) = [alpha*(t_1) (x) alpha(t_1); ...] per candidate.
struct DictionaryMatrix {
  Eigen::MatrixXcd columns;
  CandidateSet candidates;
};

/// psi(p), length L^2 M. Block m is vec(alpha alpha^H) in column-major order.
Eigen::VectorXcd atom(const ArrayTrajectory& trajectory, const Position& p, const Propagation& prop);

DictionaryMatrix build(const ArrayTrajectory& trajectory, const CandidateSet& candidates, const Propagation& prop);

/// d psi(p) / d coordinate. Entry (row l, col k) of block m is
///   -j k e^{-j k (r_l - r_k)} [ (p_i - a_li)/r_l - (p_i - a_ki)/r_k ],
/// stored at index m L^2 + k L + l to match the column-major vec of R.
Eigen::VectorXcd atom_derivative(const ArrayTrajectory& trajectory, const Position& p, Axis axis,
                                 const Propagation& prop);

}  // namespace covloc
