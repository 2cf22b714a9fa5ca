#include "covloc/dictionary.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "covloc/errors.hpp"

namespace covloc {

CandidateSet::CandidateSet(std::vector<Position> positions) : positions_(std::move(positions)) {
  // Bucket by cells of the minimum separation so only neighbouring cells are compared.
  using Cell = std::array<std::int64_t, 3>;
  struct CellHash {
    std::size_t operator()(const Cell& c) const {
      std::size_t h = 0;
      for (auto v : c) h = h * 1000003u ^ std::hash<std::int64_t>{}(v);
      return h;
    }
  };
  auto cell_of = [](const Position& p) {
    Cell c;
    for (int i = 0; i < 3; ++i) c[i] = static_cast<std::int64_t>(std::floor(p(i) / kMinCandidateSeparation));
    return c;
  };
  std::unordered_map<Cell, std::vector<std::size_t>, CellHash> cells;
  cells.reserve(positions_.size());
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    if (!positions_[i].allFinite()) throw GeometryError("candidate " + std::to_string(i) + " is not finite");
    const Cell c = cell_of(positions_[i]);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells.end()) continue;
          for (auto j : it->second) {
            if ((positions_[i] - positions_[j]).norm() < kMinCandidateSeparation) {
              throw GeometryError("candidates " + std::to_string(j) + " and " + std::to_string(i) + " are duplicates");
            }
          }
        }
      }
    }
    cells[c].push_back(i);
  }
}

CandidateSet CandidateSet::subset(std::span<const std::size_t> indices) const {
  std::vector<Position> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(positions_.at(i));
  return CandidateSet(std::move(out));
}

Eigen::VectorXcd atom(const ArrayTrajectory& trajectory, const Position& p, const Propagation& prop) {
  const auto L = static_cast<Eigen::Index>(trajectory.num_antennas());
  const Eigen::Index block = L * L;
  Eigen::VectorXcd psi(block * static_cast<Eigen::Index>(trajectory.num_instants()));
  for (std::size_t m = 0; m < trajectory.num_instants(); ++m) {
    const Eigen::VectorXcd alpha = steering_vector(trajectory.antennas(m), p, prop);
    const Eigen::Index base = static_cast<Eigen::Index>(m) * block;
    for (Eigen::Index k = 0; k < L; ++k) {
      psi.segment(base + k * L, L) = std::conj(alpha(k)) * alpha;
    }
  }
  return psi;
}

DictionaryMatrix build(const ArrayTrajectory& trajectory, const CandidateSet& candidates, const Propagation& prop) {
  const auto L = static_cast<Eigen::Index>(trajectory.num_antennas());
  DictionaryMatrix out;
  out.columns.resize(L * L * static_cast<Eigen::Index>(trajectory.num_instants()),
                     static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t p = 0; p < candidates.size(); ++p) {
    out.columns.col(static_cast<Eigen::Index>(p)) = atom(trajectory, candidates[p], prop);
  }
  out.candidates = candidates;
  return out;
}

Eigen::VectorXcd atom_derivative(const ArrayTrajectory& trajectory, const Position& p, Axis axis,
                                 const Propagation& prop) {
  const auto i = static_cast<Eigen::Index>(axis);
  const auto L = static_cast<Eigen::Index>(trajectory.num_antennas());
  const Eigen::Index block = L * L;
  const double k = prop.wavenumber();
  Eigen::VectorXcd d(block * static_cast<Eigen::Index>(trajectory.num_instants()));
  Eigen::VectorXd range(L);
  Eigen::VectorXd slope(L);
  for (std::size_t m = 0; m < trajectory.num_instants(); ++m) {
    const auto& a = trajectory.antennas(m);
    // Phases via the reference-relative steering vector keep r_l - r_k exact.
    const Eigen::VectorXcd alpha = steering_vector(a, p, prop);
    for (Eigen::Index l = 0; l < L; ++l) {
      range(l) = (a.col(l) - p).norm();
      slope(l) = (p(i) - a(i, l)) / range(l);
    }
    const Eigen::Index base = static_cast<Eigen::Index>(m) * block;
    for (Eigen::Index col = 0; col < L; ++col) {
      for (Eigen::Index row = 0; row < L; ++row) {
        const Complex phase = alpha(row) * std::conj(alpha(col));
        d(base + col * L + row) = Complex(0.0, -k) * phase * (slope(row) - slope(col));
      }
    }
  }
  return d;
}

}  // namespace covloc
