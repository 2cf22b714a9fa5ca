#include "covloc/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "covloc/detail/steering_model.hpp"
#include "covloc/errors.hpp"

namespace covloc {

// ---------------------------------------------------------------------------
// configuration

void GridSpec::validate() const {
  const bool finite = std::isfinite(x_min) && std::isfinite(x_max) && std::isfinite(y_min) && std::isfinite(y_max) &&
                      std::isfinite(z_min) && std::isfinite(z_max);
  if (!finite) throw std::invalid_argument("grid bounds must be finite");
  if (!(spacing > 0.0)) throw std::invalid_argument("grid spacing must be > 0");
  if (x_max < x_min || y_max < y_min || z_max < z_min) throw std::invalid_argument("grid bounds are inverted");
}

std::vector<Position> GridSpec::points() const {
  validate();
  auto count = [&](double lo, double hi) {
    return static_cast<std::size_t>(std::floor((hi - lo) / spacing + 1e-9)) + 1;
  };
  const std::size_t nx = count(x_min, x_max);
  const std::size_t ny = count(y_min, y_max);
  const std::size_t nz = count(z_min, z_max);
  std::vector<Position> out;
  out.reserve(nx * ny * nz);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t iy = 0; iy < ny; ++iy) {
      for (std::size_t ix = 0; ix < nx; ++ix) {
        out.emplace_back(x_min + static_cast<double>(ix) * spacing, y_min + static_cast<double>(iy) * spacing,
                         z_min + static_cast<double>(iz) * spacing);
      }
    }
  }
  return out;
}

void SolverConfig::validate() const {
  if (lambda && !(*lambda > 0.0)) throw std::invalid_argument("solver.lambda must be > 0");
  if (delta && !(*delta > 0.0)) throw std::invalid_argument("solver.delta must be > 0");
  if (!(epsilon_stop > 0.0)) throw std::invalid_argument("solver.epsilon_stop must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("solver.max_iterations must be >= 1");
  if (!(rho_floor > 0.0)) throw std::invalid_argument("solver.rho_floor must be > 0");
  if (prune_threshold && !(*prune_threshold > rho_floor)) {
    throw std::invalid_argument("solver.prune_threshold must exceed rho_floor");
  }
  if (!(line_search.shrink > 0.0 && line_search.shrink < 1.0)) {
    throw std::invalid_argument("solver.line_search.shrink must be in (0, 1)");
  }
  if (line_search.max_halvings < 0) throw std::invalid_argument("solver.line_search.max_halvings must be >= 0");
  if (merge_radius_m && !(*merge_radius_m >= 0.0)) throw std::invalid_argument("solver.merge_radius_m must be >= 0");
  if (!(line_search.initial_step_m >= 0.0)) throw std::invalid_argument("solver.line_search.initial_step_m must be >= 0");
  grid.validate();
}

void OnGridConfig::validate() const {
  if (lambda && !(*lambda > 0.0)) throw std::invalid_argument("on_grid.lambda must be > 0");
  if (!(relative_threshold > 0.0 && relative_threshold < 1.0)) {
    throw std::invalid_argument("on_grid.relative_threshold must be in (0, 1)");
  }
  if (max_iterations < 1) throw std::invalid_argument("on_grid.max_iterations must be >= 1");
  if (!(tolerance > 0.0)) throw std::invalid_argument("on_grid.tolerance must be > 0");
  if (!(cluster_spacings >= 0.0)) throw std::invalid_argument("on_grid.cluster_spacings must be >= 0");
}

namespace detail {

// ---------------------------------------------------------------------------
// quadratic fit and rho step

QuadraticFit QuadraticFit::from_dictionary(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi) {
  if (psi.rows() != r_hat.size()) throw std::invalid_argument("dictionary rows do not match measurement length");
  QuadraticFit fit;
  fit.gram = (psi.adjoint() * psi).real();
  fit.corr = (psi.adjoint() * r_hat).real();
  fit.r_norm2 = r_hat.squaredNorm();
  return fit;
}

double QuadraticFit::residual(const Eigen::VectorXd& rho) const {
  return r_norm2 - 2.0 * corr.dot(rho) + rho.dot(gram * rho);
}

QuadraticFit QuadraticFit::subset(std::span<const std::size_t> keep) const {
  const std::vector<Eigen::Index> idx(keep.begin(), keep.end());
  QuadraticFit out;
  out.gram = gram(idx, idx);
  out.corr = corr(idx);
  out.r_norm2 = r_norm2;
  return out;
}

double atan_penalty(const Eigen::VectorXd& rho, double delta) {
  double sum = 0.0;
  for (Eigen::Index p = 0; p < rho.size(); ++p) sum += std::atan(std::abs(rho(p)) / delta);
  return sum;
}

Eigen::VectorXd weighted_ridge(const QuadraticFit& fit, const Eigen::VectorXd& b_diag, double lambda) {
  if (b_diag.size() != fit.corr.size()) throw std::invalid_argument("weight vector does not match dictionary");
  Eigen::MatrixXd h = fit.gram;
  h.diagonal() += lambda * b_diag;
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() == Eigen::Success) return llt.solve(fit.corr);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericalError("Re(Psi^H Psi) + lambda B is singular");
  }
  return ldlt.solve(fit.corr);
}

Eigen::VectorXd mm_rho_step(const QuadraticFit& fit, const Eigen::VectorXd& b_diag, double lambda, double delta,
                            const Eigen::VectorXd* previous) {
  Eigen::VectorXd rho = weighted_ridge(fit, b_diag, lambda).cwiseMax(0.0);
  if (previous == nullptr) return rho;

  auto atan_objective = [&](const Eigen::VectorXd& x) { return lambda * atan_penalty(x, delta) + fit.residual(x); };
  if (atan_objective(rho) <= atan_objective(*previous)) return rho;

  // Clamping left the surrogate's descent region; minimize the surrogate over
  // rho >= 0 instead, starting from whichever point is lower.
  Eigen::MatrixXd h = fit.gram;
  h.diagonal() += lambda * b_diag;
  auto surrogate = [&](const Eigen::VectorXd& x) { return x.dot(h * x) - 2.0 * fit.corr.dot(x); };
  Eigen::VectorXd x = surrogate(rho) <= surrogate(*previous) ? rho : *previous;
  Eigen::VectorXd hx = h * x;
  for (int sweep = 0; sweep < 1000; ++sweep) {
    double biggest = 0.0;
    for (Eigen::Index p = 0; p < x.size(); ++p) {
      const double target = std::max(0.0, x(p) + (fit.corr(p) - hx(p)) / h(p, p));
      const double step = target - x(p);
      if (step != 0.0) {
        hx += step * h.col(p);
        x(p) = target;
        biggest = std::max(biggest, std::abs(step));
      }
    }
    if (biggest <= 1e-14 * std::max(x.maxCoeff(), std::numeric_limits<double>::min())) break;
  }
  return x;
}

// ---------------------------------------------------------------------------
// steering model

namespace {

Eigen::MatrixXcd unvec_block(const Eigen::VectorXcd& r, Eigen::Index m, Eigen::Index L) {
  return Eigen::Map<const Eigen::MatrixXcd>(r.data() + m * L * L, L, L);
}

// Re(alpha_p^H R alpha_p) for every column.
Eigen::VectorXd quadratic_forms(const Eigen::MatrixXcd& steer, const Eigen::MatrixXcd& data) {
  return (steer.conjugate().cwiseProduct(data * steer)).colwise().sum().real().transpose();
}

}  // namespace

SteeringModel::SteeringModel(const ArrayModel& model, std::vector<Position> positions, const Eigen::VectorXcd& r_hat)
    : model_(model), positions_(std::move(positions)) {
  const auto& traj = model_.trajectory;
  const auto L = static_cast<Eigen::Index>(traj.num_antennas());
  const auto M = traj.num_instants();
  if (r_hat.size() != L * L * static_cast<Eigen::Index>(M)) {
    throw std::invalid_argument("measurement length " + std::to_string(r_hat.size()) + " does not match L^2 M = " +
                                std::to_string(L * L * static_cast<Eigen::Index>(M)));
  }
  const auto P = static_cast<Eigen::Index>(positions_.size());
  fit_.gram = Eigen::MatrixXd::Zero(P, P);
  fit_.corr = Eigen::VectorXd::Zero(P);
  fit_.r_norm2 = r_hat.squaredNorm();
  steer_.reserve(M);
  data_.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    steer_.push_back(steering_matrix(traj.antennas(m), positions_, model_.propagation));
    data_.push_back(unvec_block(r_hat, static_cast<Eigen::Index>(m), L));
    const auto& a = steer_.back();
    fit_.gram.noalias() += (a.adjoint() * a).cwiseAbs2();
    fit_.corr += quadratic_forms(a, data_.back());
  }
}

SteeringModel::Trial SteeringModel::evaluate(const Position& q, std::size_t slot) const {
  Trial t;
  t.position = q;
  t.gram_col = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
  double self = 0.0;
  for (std::size_t m = 0; m < steer_.size(); ++m) {
    Eigen::VectorXcd alpha = steering_vector(model_.trajectory.antennas(m), q, model_.propagation);
    t.gram_col += (steer_[m].adjoint() * alpha).cwiseAbs2();
    const double n2 = alpha.squaredNorm();
    self += n2 * n2;
    t.corr += alpha.dot(data_[m] * alpha).real();
    t.alpha.push_back(std::move(alpha));
  }
  t.gram_col(static_cast<Eigen::Index>(slot)) = self;
  return t;
}

void SteeringModel::replace(std::size_t slot, Trial trial) {
  const auto p = static_cast<Eigen::Index>(slot);
  positions_[slot] = trial.position;
  for (std::size_t m = 0; m < steer_.size(); ++m) steer_[m].col(p) = trial.alpha[m];
  fit_.gram.col(p) = trial.gram_col;
  fit_.gram.row(p) = trial.gram_col.transpose();
  fit_.corr(p) = trial.corr;
}

Eigen::Vector3d SteeringModel::residual_slope(std::size_t index, const Eigen::VectorXd& rho) const {
  const auto p = static_cast<Eigen::Index>(index);
  const double k = model_.propagation.wavenumber();
  const Position& q = positions_[index];
  Eigen::Vector3d slope = Eigen::Vector3d::Zero();
  for (std::size_t m = 0; m < steer_.size(); ++m) {
    const auto& ant = model_.trajectory.antennas(m);
    const auto L = ant.cols();
    const Eigen::VectorXcd alpha = steer_[m].col(p);
    Eigen::Matrix3Xd unit(3, L);
    for (Eigen::Index l = 0; l < L; ++l) unit.col(l) = (q - ant.col(l)).normalized();
    const Eigen::VectorXcd a = steer_[m].adjoint() * alpha;
    const Eigen::VectorXcd rh_alpha = data_[m].adjoint() * alpha;
    for (int axis = 0; axis < 3; ++axis) {
      Eigen::VectorXcd d(L);
      for (Eigen::Index l = 0; l < L; ++l) d(l) = Complex(0.0, -k) * alpha(l) * (unit(axis, l) - unit(axis, 0));
      const Eigen::VectorXcd b = steer_[m].adjoint() * d;
      // Re(psi_j^H dpsi_p) = 2 Re(b_j conj(a_j))
      const double model_part = 2.0 * (b.array() * a.array().conjugate()).real().matrix().dot(rho);
      // Re(r^H dpsi_p) = Re(alpha^H R^H d + d^H R^H alpha)
      const double data_part = (alpha.dot(data_[m].adjoint() * d) + d.dot(rh_alpha)).real();
      slope(axis) += model_part - data_part;
    }
  }
  return slope;
}

void SteeringModel::keep(std::span<const std::size_t> indices) {
  const std::vector<Eigen::Index> idx(indices.begin(), indices.end());
  std::vector<Position> kept;
  kept.reserve(indices.size());
  for (auto i : indices) kept.push_back(positions_.at(i));
  positions_ = std::move(kept);
  for (auto& a : steer_) a = a(Eigen::all, idx).eval();
  fit_ = fit_.subset(indices);
}

// ---------------------------------------------------------------------------
// refinement sweep

std::size_t refine_sweep(SteeringModel& model, const Eigen::VectorXd& rho, const Eigen::VectorXd& b_diag,
                         double lambda, double prune_threshold, const LineSearch& search, double initial_step) {
  const auto P = static_cast<Eigen::Index>(model.size());
  if (P == 0) return 0;
  if (rho.size() != P || b_diag.size() != P) throw std::invalid_argument("refine: state dimensions disagree");
  if (!(initial_step > 0.0)) throw std::invalid_argument("refine: initial step must be > 0");

  Eigen::MatrixXd h = model.fit().gram;
  h.diagonal() += lambda * b_diag;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success) throw NumericalError("refine: V is singular");
  Eigen::MatrixXd hinv = ldlt.solve(Eigen::MatrixXd::Identity(P, P));
  hinv = 0.5 * (hinv + hinv.transpose()).eval();

  std::size_t moved = 0;
  for (Eigen::Index p = 0; p < P; ++p) {
    if (rho(p) < prune_threshold) continue;
    const auto& fit = model.fit();
    const Eigen::VectorXd& c = fit.corr;
    const Eigen::VectorXd rho_t = hinv * c;
    const Eigen::Vector3d grad = 4.0 * rho_t(p) * model.residual_slope(static_cast<std::size_t>(p), rho_t);
    const double gnorm = grad.norm();
    if (!(gnorm > 0.0) || !std::isfinite(gnorm)) continue;
    const Eigen::Vector3d dir = -grad / gnorm;

    // Partition on p: with W = H restricted to the other candidates,
    //   c^T H^{-1} c = c_R^T W^{-1} c_R + (c_p - h_R^T W^{-1} c_R)^2 / (h_p - h_R^T W^{-1} h_R).
    const Eigen::VectorXd hp = hinv.col(p);
    const double hpp = hp(p);
    auto apply_w_inverse = [&](Eigen::VectorXd v) {
      v(p) = 0.0;
      Eigen::VectorXd out = hinv * v - hp * (hp.dot(v) / hpp);
      out(p) = 0.0;
      return out;
    };
    Eigen::VectorXd c_rest = c;
    c_rest(p) = 0.0;
    const Eigen::VectorXd z = apply_w_inverse(c_rest);
    const double kappa = c_rest.dot(z);
    const double cost_old = -2.0 * c.dot(rho_t);
    const Eigen::VectorXd gram_col_old = fit.gram.col(p);
    const Position origin = model.positions()[static_cast<std::size_t>(p)];

    struct Candidate {
      SteeringModel::Trial trial;
      Eigen::VectorXd w;
      double schur = 0.0;
      double cost = 0.0;
    };
    std::optional<Candidate> best;
    double step = initial_step;
    for (int k = 0; k <= search.max_halvings; ++k, step *= search.shrink) {
      const Position q = origin + step * dir;
      bool collides = false;
      for (Eigen::Index j = 0; j < P && !collides; ++j) {
        collides = j != p && (model.positions()[static_cast<std::size_t>(j)] - q).norm() < kMinCandidateSeparation;
      }
      if (collides) continue;
      SteeringModel::Trial trial;
      try {
        trial = model.evaluate(q, static_cast<std::size_t>(p));
      } catch (const GeometryError&) {
        continue;
      }
      Eigen::VectorXd hcol = trial.gram_col;
      hcol(p) += lambda * b_diag(p);
      Eigen::VectorXd w = apply_w_inverse(hcol);
      Eigen::VectorXd h_rest = hcol;
      h_rest(p) = 0.0;
      const double schur = hcol(p) - h_rest.dot(w);
      if (!(schur > 0.0)) continue;
      const double t = trial.corr - h_rest.dot(z);
      const double cost = -2.0 * (kappa + t * t / schur);

      Eigen::VectorXd dgram = trial.gram_col - gram_col_old;
      dgram(p) = 0.0;
      const double dres = -2.0 * rho(p) * (trial.corr - c(p)) + 2.0 * rho(p) * dgram.dot(rho);

      const bool acceptable = cost <= cost_old && dres <= 0.0;
      if (acceptable && (!best || cost < best->cost)) {
        best = Candidate{std::move(trial), std::move(w), schur, cost};
      } else if (best) {
        break;
      }
    }
    if (!best) continue;

    hinv.noalias() -= hp * hp.transpose() / hpp;
    hinv.noalias() += best->w * best->w.transpose() / best->schur;
    hinv.col(p) = -best->w / best->schur;
    hinv.row(p) = -best->w.transpose() / best->schur;
    hinv(p, p) = 1.0 / best->schur;
    model.replace(static_cast<std::size_t>(p), std::move(best->trial));
    ++moved;
  }
  return moved;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// public operations

double objective(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi, const Eigen::VectorXd& rho,
                 double lambda, double delta) {
  if (psi.rows() != r_hat.size() || psi.cols() != rho.size()) throw std::invalid_argument("objective: dimension mismatch");
  const Eigen::VectorXcd residual = r_hat - psi * rho.cast<Complex>();
  return lambda * detail::atan_penalty(rho, delta) + residual.squaredNorm();
}

Eigen::VectorXd surrogate_weights(const Eigen::VectorXd& rho, double delta, double rho_floor) {
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be > 0");
  Eigen::VectorXd beta(rho.size());
  for (Eigen::Index p = 0; p < rho.size(); ++p) {
    const double a = std::abs(rho(p));
    beta(p) = delta / (std::max(a, rho_floor) * (delta * delta + a * a));
  }
  return beta;
}

Eigen::VectorXd update_rho(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi, const Eigen::VectorXd& b_diag,
                           double lambda) {
  return detail::weighted_ridge(detail::QuadraticFit::from_dictionary(r_hat, psi), b_diag, lambda).cwiseMax(0.0);
}

double concentrated_cost(const ArrayModel& model, const CandidateSet& candidates, const Eigen::VectorXcd& r_hat,
                         const Eigen::VectorXd& b_diag, double lambda) {
  const auto dict = build(model.trajectory, candidates, model.propagation);
  const auto fit = detail::QuadraticFit::from_dictionary(r_hat, dict.columns);
  return -2.0 * fit.corr.dot(detail::weighted_ridge(fit, b_diag, lambda));
}

Eigen::Vector3d position_gradient(const ArrayModel& model, const CandidateSet& candidates,
                                  const Eigen::VectorXcd& r_hat, const Eigen::VectorXd& b_diag, double lambda,
                                  std::size_t index) {
  if (index >= candidates.size()) throw std::out_of_range("position_gradient: candidate index out of range");
  const Eigen::MatrixXcd psi = build(model.trajectory, candidates, model.propagation).columns;
  const auto P = psi.cols();
  const auto p = static_cast<Eigen::Index>(index);
  const Eigen::VectorXd u = 2.0 * (psi.adjoint() * r_hat).real();
  Eigen::MatrixXd v = 2.0 * (psi.adjoint() * psi).real();
  v.diagonal() += 2.0 * lambda * b_diag;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  if (ldlt.info() != Eigen::Success) throw NumericalError("position_gradient: V is singular");
  const Eigen::VectorXcd vu = ldlt.solve(u).cast<Complex>();  // V^{-1} u; V symmetric

  Eigen::Vector3d grad;
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::MatrixXcd dpsi = Eigen::MatrixXcd::Zero(psi.rows(), P);
    dpsi.col(p) = atom_derivative(model.trajectory, candidates[index], static_cast<Axis>(axis), model.propagation);
    const Complex data_term = -2.0 * (vu.transpose() * (dpsi.transpose() * r_hat.conjugate()))(0);
    const Eigen::MatrixXcd coupling = psi.adjoint() * dpsi + dpsi.transpose() * psi.conjugate();
    const Complex model_term = (vu.transpose() * coupling * vu)(0);
    grad(axis) = 2.0 * (data_term + model_term).real();
  }
  return grad;
}

CandidateSet refine_positions(const SolverState& state, const Eigen::VectorXcd& r_hat, const ArrayModel& model,
                              const SolverConfig& cfg, double lambda, double prune_threshold) {
  detail::SteeringModel sm(model, state.candidates.positions(), r_hat);
  const double step = cfg.line_search.initial_step_m > 0.0 ? cfg.line_search.initial_step_m : cfg.grid.spacing;
  detail::refine_sweep(sm, state.rho, state.b_diag, lambda, prune_threshold, cfg.line_search, step);
  return CandidateSet(sm.positions());
}

SolverState prune(const SolverState& state, double tau) {
  std::vector<std::size_t> keep;
  for (Eigen::Index p = 0; p < state.rho.size(); ++p) {
    if (state.rho(p) >= tau) keep.push_back(static_cast<std::size_t>(p));
  }
  const std::vector<Eigen::Index> idx(keep.begin(), keep.end());
  SolverState out;
  out.candidates = state.candidates.subset(keep);
  out.rho = state.rho(idx);
  out.b_diag = state.b_diag.size() == state.rho.size() ? Eigen::VectorXd(state.b_diag(idx)) : Eigen::VectorXd();
  out.objective_history = state.objective_history;
  out.iteration = state.iteration;
  return out;
}

namespace {

void check_measurement(const CovarianceMeasurement& measurement, const ArrayModel& model) {
  const auto L = model.trajectory.num_antennas();
  const auto M = model.trajectory.num_instants();
  if (static_cast<std::size_t>(measurement.stacked.size()) != L * L * M) {
    throw std::invalid_argument("measurement length " + std::to_string(measurement.stacked.size()) +
                                " does not match the trajectory (L^2 M = " + std::to_string(L * L * M) + ")");
  }
}

std::vector<std::size_t> indices_at_least(const Eigen::VectorXd& rho, double tau) {
  std::vector<std::size_t> keep;
  for (Eigen::Index p = 0; p < rho.size(); ++p) {
    if (rho(p) >= tau) keep.push_back(static_cast<std::size_t>(p));
  }
  return keep;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, std::span<const std::size_t> keep) {
  const std::vector<Eigen::Index> idx(keep.begin(), keep.end());
  return v(idx);
}

// Greedy nearest-pair merging. Each accepted merge lowers (or keeps) G; the
// weights are re-derived from the merged powers. Returns true if any merge
// was kept.
bool merge_close_pairs(detail::SteeringModel& sm, Eigen::VectorXd& rho, Eigen::VectorXd& b, double lambda,
                       double delta, double rho_floor, double radius) {
  if (!(radius > 0.0)) return false;
  bool merged = false;
  std::vector<std::pair<std::size_t, std::size_t>> rejected;
  double current = lambda * detail::atan_penalty(rho, delta) + sm.fit().residual(rho);
  for (;;) {
    const auto& pos = sm.positions();
    double closest = radius;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      for (std::size_t j = i + 1; j < pos.size(); ++j) {
        const double dist = (pos[i] - pos[j]).norm();
        if (dist < closest && std::find(rejected.begin(), rejected.end(), std::make_pair(i, j)) == rejected.end()) {
          closest = dist;
          bi = i;
          bj = j;
        }
      }
    }
    if (closest >= radius) break;
    const auto i = static_cast<Eigen::Index>(bi);
    const auto j = static_cast<Eigen::Index>(bj);
    const double total = rho(i) + rho(j);
    const Position centre = (rho(i) * pos[bi] + rho(j) * pos[bj]) / total;

    detail::SteeringModel trial = sm;
    try {
      trial.replace(bi, trial.evaluate(centre, bi));
    } catch (const GeometryError&) {
      rejected.emplace_back(bi, bj);
      continue;
    }
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      if (k != bj) keep.push_back(k);
    }
    trial.keep(keep);
    Eigen::VectorXd trial_rho = take(rho, keep);
    trial_rho(i) = total;
    const double value = lambda * detail::atan_penalty(trial_rho, delta) + trial.fit().residual(trial_rho);
    if (value <= current) {
      sm = std::move(trial);
      rho = std::move(trial_rho);
      current = value;
      merged = true;
      rejected.clear();
    } else {
      rejected.emplace_back(bi, bj);
    }
  }
  if (merged) b = surrogate_weights(rho, delta, rho_floor) / 2.0;
  return merged;
}

}  // namespace

LocalizationResult solve_off_grid(const CovarianceMeasurement& measurement, const ArrayModel& model,
                                  const SolverConfig& cfg) {
  cfg.validate();
  check_measurement(measurement, model);
  const Eigen::VectorXcd& r = measurement.stacked;

  detail::SteeringModel sm(model, cfg.grid.points(), r);
  const auto initial_size = static_cast<double>(sm.size());
  LocalizationResult result;
  if (!(sm.fit().r_norm2 > 0.0)) return result;

  const double lambda = cfg.lambda.value_or(0.1 * sm.fit().r_norm2 / initial_size);
  const double step = cfg.line_search.initial_step_m > 0.0 ? cfg.line_search.initial_step_m : cfg.grid.spacing;
  const double merge_radius = cfg.merge_radius_m.value_or(0.5 * cfg.grid.spacing);
  result.lambda = lambda;

  Eigen::VectorXd b = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(sm.size()));
  Eigen::VectorXd previous;
  double delta = 0.0;
  double tau = 0.0;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    result.iterations = it;
    // Powers.
    Eigen::VectorXd rho = detail::mm_rho_step(sm.fit(), b, lambda, delta, it == 1 ? nullptr : &previous);
    if (it == 1) {
      const double peak = rho.size() > 0 ? rho.maxCoeff() : 0.0;
      if (!(peak > 0.0)) return result;
      delta = cfg.delta.value_or(1e-3 * peak);
      tau = cfg.prune_threshold.value_or(std::max(1e-3 * peak, 2.0 * cfg.rho_floor));
      result.delta = delta;
      result.prune_threshold = tau;
    }
    // Positions.
    detail::refine_sweep(sm, rho, b, lambda, tau, cfg.line_search, step);
    // Weights.
    b = surrogate_weights(rho, delta, cfg.rho_floor) / 2.0;
    // Prune.
    const auto keep = indices_at_least(rho, tau);
    const bool pruned = keep.size() < sm.size();
    if (pruned) {
      sm.keep(keep);
      rho = take(rho, keep);
      b = take(b, keep);
    }
    const bool merged = merge_close_pairs(sm, rho, b, lambda, delta, cfg.rho_floor, merge_radius);
    if (sm.size() == 0) {
      result.converged = false;
      result.final_objective = sm.fit().r_norm2;
      result.objective_history.push_back(result.final_objective);
      return result;
    }
    result.objective_history.push_back(lambda * detail::atan_penalty(rho, delta) + sm.fit().residual(rho));
    // Stop once the powers settle.
    const bool settled = it > 1 && !pruned && !merged && (rho - previous).norm() <= cfg.epsilon_stop * rho.norm();
    previous = std::move(rho);
    if (settled) {
      result.converged = true;
      break;
    }
  }
  result.positions = sm.positions();
  result.powers.assign(previous.data(), previous.data() + previous.size());
  result.final_objective = result.objective_history.back();
  return result;
}

// ---------------------------------------------------------------------------
// on-grid baseline

namespace {

struct GridSteering {
  std::vector<Eigen::MatrixXcd> steer;  // per instant, L x P
  Eigen::VectorXd corr;                 // Re(Psi^H r)

  Eigen::MatrixXd gram_block(std::span<const Eigen::Index> cols) const {
    const std::vector<Eigen::Index> idx(cols.begin(), cols.end());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
    for (const auto& a : steer) {
      const Eigen::MatrixXcd sub = a(Eigen::all, idx);
      out.noalias() += (sub.adjoint() * sub).cwiseAbs2();
    }
    return out;
  }

  // Re(psi_p^H Psi_S x_S) for every grid point, through the L x L model
  // covariance of each instant.
  Eigen::VectorXd model_correlation(std::span<const Eigen::Index> cols, std::span<const double> x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(steer.front().cols());
    for (const auto& a : steer) {
      Eigen::MatrixXcd model = Eigen::MatrixXcd::Zero(a.rows(), a.rows());
      for (std::size_t i = 0; i < cols.size(); ++i) model.noalias() += x[i] * a.col(cols[i]) * a.col(cols[i]).adjoint();
      out += (a.conjugate().cwiseProduct(model * a)).colwise().sum().real().transpose();
    }
    return out;
  }
};

// Lawson-Hanson active set on min lambda 1^T x + x^T G x - 2 c^T x, x >= 0,
// warm-started from x. Each outer step frees the most violating coordinate;
// the inner loop walks back to feasibility when the free solve goes negative.
int active_set_nonneg(const Eigen::MatrixXd& gram, const Eigen::VectorXd& corr, double lambda, Eigen::VectorXd& x,
                      int max_iterations, double tolerance) {
  const Eigen::Index n = x.size();
  const Eigen::VectorXd b = (corr.array() - 0.5 * lambda).matrix();
  std::vector<char> free(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) free[static_cast<std::size_t>(i)] = x(i) > 0.0;
  const double scale = std::max(b.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

  auto solve_free = [&](std::vector<Eigen::Index>& idx, Eigen::VectorXd& z) {
    idx.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
    z = Eigen::VectorXd::Zero(n);
    if (idx.empty()) return;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram(idx, idx));
    const Eigen::VectorXd rhs = b(idx);
    const Eigen::VectorXd sol = ldlt.solve(rhs);
    z(idx) = sol;
  };

  int k = 0;
  bool first = true;
  std::vector<Eigen::Index> idx;
  Eigen::VectorXd z;
  for (; k < max_iterations; ++k) {
    if (!first) {
      const Eigen::VectorXd w = b - gram * x;
      Eigen::Index best = -1;
      double best_w = tolerance * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!free[static_cast<std::size_t>(i)] && w(i) > best_w) {
          best = i;
          best_w = w(i);
        }
      }
      if (best < 0) break;
      free[static_cast<std::size_t>(best)] = 1;
    }
    first = false;
    for (Eigen::Index guard = 0; guard <= n; ++guard) {
      solve_free(idx, z);
      double alpha = 1.0;
      Eigen::Index blocking = -1;
      for (auto i : idx) {
        if (!(z(i) > 0.0)) {
          const double step = x(i) / (x(i) - z(i));
          if (step < alpha) {
            alpha = step;
            blocking = i;
          }
        }
      }
      if (blocking < 0) {
        x = z;
        break;
      }
      x += alpha * (z - x);
      x(blocking) = 0.0;
      for (auto i : idx)
        if (x(i) <= 0.0) {
          x(i) = 0.0;
          free[static_cast<std::size_t>(i)] = 0;
        }
    }
  }
  return k + 1;
}

}  // namespace

LocalizationResult solve_on_grid(const CovarianceMeasurement& measurement, const ArrayModel& model,
                                 const CandidateSet& grid, const OnGridConfig& cfg, double grid_spacing) {
  cfg.validate();
  check_measurement(measurement, model);
  LocalizationResult result;
  if (grid.empty()) return result;

  const auto& traj = model.trajectory;
  const auto L = static_cast<Eigen::Index>(traj.num_antennas());
  const auto P = static_cast<Eigen::Index>(grid.size());
  const Eigen::VectorXcd& r = measurement.stacked;

  GridSteering gs;
  gs.corr = Eigen::VectorXd::Zero(P);
  for (std::size_t m = 0; m < traj.num_instants(); ++m) {
    gs.steer.push_back(steering_matrix(traj.antennas(m), grid.positions(), model.propagation));
    const Eigen::MatrixXcd data = Eigen::Map<const Eigen::MatrixXcd>(r.data() + static_cast<Eigen::Index>(m) * L * L, L, L);
    const auto& a = gs.steer.back();
    gs.corr += (a.conjugate().cwiseProduct(data * a)).colwise().sum().real().transpose();
  }
  const double lambda_max = 2.0 * gs.corr.maxCoeff();
  const double lambda = cfg.lambda.value_or(0.05 * lambda_max);
  result.lambda = lambda;
  if (!(lambda_max > lambda)) {
    result.converged = true;
    result.final_objective = r.squaredNorm();
    return result;
  }

  // Working set seeded with the strongest correlations.
  constexpr Eigen::Index kGrow = 32;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(P));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto seed_count = std::min<Eigen::Index>(kGrow, P);
  std::partial_sort(order.begin(), order.begin() + seed_count, order.end(),
                    [&](Eigen::Index a, Eigen::Index b) { return gs.corr(a) > gs.corr(b); });
  std::vector<Eigen::Index> working(order.begin(), order.begin() + seed_count);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(seed_count);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(P);

  int total = 0;
  bool converged = false;
  for (int outer = 0; outer < 100; ++outer) {
    const Eigen::MatrixXd g_ww = gs.gram_block(working);
    const Eigen::VectorXd c_w = gs.corr(working);
    total += active_set_nonneg(g_ww, c_w, lambda, x, cfg.max_iterations, cfg.tolerance);

    full.setZero();
    std::vector<Eigen::Index> support;
    std::vector<double> support_x;
    for (std::size_t i = 0; i < working.size(); ++i) {
      const double v = x(static_cast<Eigen::Index>(i));
      full(working[i]) = v;
      if (v > 0.0) {
        support.push_back(working[i]);
        support_x.push_back(v);
      }
    }
    const Eigen::VectorXd grad = 2.0 * (gs.model_correlation(support, support_x) - gs.corr);

    std::vector<char> in_set(static_cast<std::size_t>(P), 0);
    for (auto i : working) in_set[static_cast<std::size_t>(i)] = 1;
    std::vector<Eigen::Index> violators;
    for (Eigen::Index i = 0; i < P; ++i) {
      if (!in_set[static_cast<std::size_t>(i)] && -grad(i) > lambda * (1.0 + 1e-9)) violators.push_back(i);
    }
    if (violators.empty()) {
      converged = true;
      break;
    }
    const auto add = std::min<std::size_t>(static_cast<std::size_t>(kGrow), violators.size());
    std::partial_sort(violators.begin(), violators.begin() + static_cast<std::ptrdiff_t>(add), violators.end(),
                      [&](Eigen::Index a, Eigen::Index b) { return grad(a) < grad(b); });
    working.insert(working.end(), violators.begin(), violators.begin() + static_cast<std::ptrdiff_t>(add));
    x.conservativeResize(static_cast<Eigen::Index>(working.size()));
    x.tail(static_cast<Eigen::Index>(add)).setZero();
  }
  result.iterations = total;
  result.converged = converged;
  {
    const double fit = r.squaredNorm() - 2.0 * gs.corr(working).dot(x) + x.dot(gs.gram_block(working) * x);
    result.final_objective = lambda * x.sum() + fit;
  }

  const double peak = full.maxCoeff();
  if (!(peak > 0.0)) return result;
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < P; ++i) {
    if (full(i) >= cfg.relative_threshold * peak) active.push_back(i);
  }
  std::sort(active.begin(), active.end(), [&](Eigen::Index a, Eigen::Index b) { return full(a) > full(b); });

  // Connected components of active points; each reports its strongest point.
  const double radius = cfg.cluster_spacings * grid_spacing;
  std::vector<int> label(active.size(), -1);
  int clusters = 0;
  for (std::size_t s = 0; s < active.size(); ++s) {
    if (label[s] >= 0) continue;
    label[s] = clusters;
    double power = 0.0;
    std::vector<std::size_t> stack{s};
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      power += full(active[i]);
      for (std::size_t j = 0; j < active.size(); ++j) {
        if (label[j] < 0 && (grid[static_cast<std::size_t>(active[i])] - grid[static_cast<std::size_t>(active[j])]).norm() <= radius) {
          label[j] = clusters;
          stack.push_back(j);
        }
      }
    }
    result.positions.push_back(grid[static_cast<std::size_t>(active[s])]);
    result.powers.push_back(power);
    ++clusters;
  }
  return result;
}

// ---------------------------------------------------------------------------
// l0 reference and fixed-dictionary MM

L0Solution l0_oracle(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi, double lambda, std::size_t k_max) {
  const auto P = static_cast<std::size_t>(psi.cols());
  if (P > 12 || k_max > 4) {
    throw std::invalid_argument("l0_oracle is limited to P <= 12 and k_max <= 4 (got P=" + std::to_string(P) +
                                ", k_max=" + std::to_string(k_max) + ")");
  }
  if (psi.rows() != r_hat.size()) throw std::invalid_argument("l0_oracle: dimension mismatch");
  const auto fit = detail::QuadraticFit::from_dictionary(r_hat, psi);

  L0Solution best;
  best.rho = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
  best.objective = r_hat.squaredNorm();

  std::vector<std::size_t> support;
  // Sizes ascending, lexicographic within a size; strict improvement keeps
  // the earliest support on ties.
  auto visit = [&](auto&& self, std::size_t start, std::size_t size) -> void {
    if (support.size() == size) {
      const std::vector<Eigen::Index> idx(support.begin(), support.end());
      const Eigen::MatrixXd g = fit.gram(idx, idx);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g);
      if (qr.rank() < static_cast<Eigen::Index>(size)) return;
      const Eigen::VectorXd x = qr.solve(fit.corr(idx));
      const Eigen::VectorXcd residual = r_hat - psi(Eigen::all, idx) * x.cast<Complex>();
      const double value = lambda * static_cast<double>(size) + residual.squaredNorm();
      if (value < best.objective - 1e-12 * std::max(1.0, std::abs(best.objective))) {
        best.objective = value;
        best.support = support;
        best.rho.setZero();
        best.rho(idx) = x;
      }
      return;
    }
    for (std::size_t j = start; j < P; ++j) {
      support.push_back(j);
      self(self, j + 1, size);
      support.pop_back();
    }
  };
  for (std::size_t size = 1; size <= std::min(k_max, P); ++size) visit(visit, 0, size);
  return best;
}

namespace {

struct MmRun {
  detail::QuadraticFit fit;
  std::vector<std::size_t> ids;
  Eigen::VectorXd rho;  ///< on ids; empty before the first stage
  std::vector<double> history;
  int iterations = 0;
  bool converged = false;
};

// Reweighted MM at one delta. A warm start takes B from the current rho.
void run_mm_stage(MmRun& run, double lambda, double delta, double prune_threshold, int max_iterations,
                  double epsilon_stop, double rho_floor) {
  const bool warm = run.rho.size() > 0;
  Eigen::VectorXd b = warm ? Eigen::VectorXd(surrogate_weights(run.rho, delta, rho_floor) / 2.0)
                           : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(run.ids.size()));
  Eigen::VectorXd previous = run.rho;
  run.history.clear();
  run.converged = false;
  if (warm) run.history.push_back(lambda * detail::atan_penalty(previous, delta) + run.fit.residual(previous));
  for (int it = 1; it <= max_iterations; ++it) {
    run.iterations = it;
    Eigen::VectorXd rho = detail::mm_rho_step(run.fit, b, lambda, delta, previous.size() > 0 ? &previous : nullptr);
    b = surrogate_weights(rho, delta, rho_floor) / 2.0;
    const auto keep = indices_at_least(rho, prune_threshold);
    const bool pruned = keep.size() < run.ids.size();
    if (pruned) {
      run.fit = run.fit.subset(keep);
      rho = take(rho, keep);
      b = take(b, keep);
      std::vector<std::size_t> kept_ids;
      for (auto k : keep) kept_ids.push_back(run.ids[k]);
      run.ids = std::move(kept_ids);
    }
    run.history.push_back(lambda * detail::atan_penalty(rho, delta) + run.fit.residual(rho));
    if (run.ids.empty()) {
      run.converged = true;
      previous.resize(0);
      break;
    }
    const bool settled = previous.size() > 0 && !pruned && (rho - previous).norm() <= epsilon_stop * rho.norm();
    previous = std::move(rho);
    if (settled) {
      run.converged = true;
      break;
    }
  }
  run.rho = std::move(previous);
}

}  // namespace

FixedDictionaryResult solve_fixed_dictionary(const Eigen::VectorXcd& r_hat, const Eigen::MatrixXcd& psi,
                                             double lambda, double delta, double prune_threshold, int max_iterations,
                                             double epsilon_stop, double rho_floor, double delta_start) {
  if (!(lambda > 0.0) || !(delta > 0.0)) throw std::invalid_argument("lambda and delta must be > 0");
  if (!(prune_threshold > rho_floor)) throw std::invalid_argument("prune threshold must exceed rho_floor");
  const auto P = psi.cols();
  MmRun run;
  run.fit = detail::QuadraticFit::from_dictionary(r_hat, psi);
  run.ids.resize(static_cast<std::size_t>(P));
  std::iota(run.ids.begin(), run.ids.end(), std::size_t{0});

  for (double d = delta_start; d > delta; d /= 10.0) {
    run_mm_stage(run, lambda, d, prune_threshold, max_iterations, epsilon_stop, rho_floor);
    if (run.ids.empty()) break;
  }
  if (!run.ids.empty()) run_mm_stage(run, lambda, delta, prune_threshold, max_iterations, epsilon_stop, rho_floor);

  FixedDictionaryResult out;
  out.support = run.ids;
  out.objective_history = run.history;
  out.iterations = run.iterations;
  out.converged = run.converged || run.ids.empty();
  out.rho = Eigen::VectorXd::Zero(P);
  for (std::size_t i = 0; i < run.ids.size(); ++i) out.rho(static_cast<Eigen::Index>(run.ids[i])) = run.rho(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace covloc
