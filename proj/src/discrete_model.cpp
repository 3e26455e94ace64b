#include "sysid/discrete_model.hpp"

#include <cmath>
#include <stdexcept>

namespace sysid {

int Observations::rows_with_data() const {
  int n = 0;
  for (int i = 0; i < mask.rows(); ++i)
    if (mask.row(i).sum() > 0) ++n;
  return n;
}

StateGrid build_grid(const Eigen::VectorXd& observation_times, int refinement_factor, int state_dim) {
  const int m = static_cast<int>(observation_times.size());
  if (m < 2) throw std::invalid_argument("need at least two observation times");
  if (refinement_factor < 1) throw std::invalid_argument("refinement factor must be >= 1");
  for (int i = 0; i + 1 < m; ++i)
    if (!(observation_times(i + 1) > observation_times(i)))
      throw std::invalid_argument("observation times must be strictly increasing");

  StateGrid grid;
  const int n = (m - 1) * refinement_factor + 1;
  grid.times.resize(n);
  grid.data_rows.resize(static_cast<std::size_t>(m));
  int row = 0;
  for (int i = 0; i + 1 < m; ++i) {
    grid.data_rows[static_cast<std::size_t>(i)] = row;
    const double t0 = observation_times(i);
    const double dt = (observation_times(i + 1) - t0) / refinement_factor;
    for (int j = 0; j < refinement_factor; ++j) grid.times(row++) = t0 + j * dt;
  }
  grid.times(row) = observation_times(m - 1);
  grid.data_rows[static_cast<std::size_t>(m - 1)] = row;
  grid.values = Eigen::MatrixXd::Zero(n, state_dim);
  return grid;
}

void validate(const LossWeights& w) {
  if (!(w.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(w.sparsity_weight >= 0.0)) throw std::invalid_argument("sparsity weight must be nonnegative");
  if (!(w.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

Eigen::VectorXd midpoint_residual(const StateGrid& grid, const CandidateLibrary& lib,
                                  const CoefficientState& coeffs, int interval) {
  if (interval < 0 || interval + 1 >= grid.size())
    throw std::out_of_range("interval index out of range");
  const double dt = grid.times(interval + 1) - grid.times(interval);
  const Eigen::VectorXd mid =
      0.5 * (grid.values.row(interval) + grid.values.row(interval + 1)).transpose();
  const Eigen::VectorXd terms = evaluate_terms(lib, mid, coeffs.inner);
  Eigen::VectorXd r(grid.state_dim());
  for (int c = 0; c < grid.state_dim(); ++c) {
    double f = 0.0;
    for (int k = 0; k < lib.size(); ++k)
      if (coeffs.mask(c, k) != 0) f += coeffs.theta(c, k) * terms(k);
    r(c) = (grid.values(interval + 1, c) - grid.values(interval, c)) / dt - f;
  }
  return r;
}

double smooth_l0(const CoefficientState& coeffs, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  const double inv = 1.0 / (2.0 * epsilon * epsilon);
  double sum = 0.0;
  for (int j = 0; j < coeffs.rows(); ++j)
    for (int k = 0; k < coeffs.terms(); ++k)
      if (coeffs.mask(j, k) != 0) sum += 1.0 - std::exp(-coeffs.theta(j, k) * coeffs.theta(j, k) * inv);
  return sum;
}

namespace {

void check_shapes(const StateGrid& grid, const Observations& obs, const CandidateLibrary& lib,
                  const CoefficientState& coeffs) {
  if (grid.state_dim() != lib.state_dim || obs.state_dim() != lib.state_dim)
    throw std::invalid_argument("state dimension mismatch");
  if (coeffs.rows() != lib.state_dim || coeffs.terms() != lib.size())
    throw std::invalid_argument("coefficient matrix does not match the library");
  if (static_cast<int>(grid.data_rows.size()) != obs.sample_count())
    throw std::invalid_argument("grid data-row map does not match the observations");
}

}  // namespace

LossBreakdown loss(const StateGrid& grid, const Observations& obs, const CandidateLibrary& lib,
                   const CoefficientState& coeffs, const LossWeights& weights) {
  validate(weights);
  check_shapes(grid, obs, lib, coeffs);

  LossBreakdown out;
  const int n = grid.size();
  double model_sq = 0.0;
  for (int i = 0; i + 1 < n; ++i) model_sq += midpoint_residual(grid, lib, coeffs, i).squaredNorm();
  out.model_error = model_sq / n;

  const int n_hat = obs.available_count();
  double data_sq = 0.0;
  for (int s = 0; s < obs.sample_count(); ++s) {
    const int row = grid.data_rows[static_cast<std::size_t>(s)];
    for (int c = 0; c < obs.state_dim(); ++c) {
      if (obs.mask(s, c) == 0) continue;
      const double diff = obs.values(s, c) - grid.values(row, c);
      data_sq += diff * diff;
    }
  }
  out.data_error = n_hat > 0 ? weights.lambda * data_sq / n_hat : 0.0;

  const int active = coeffs.active_count();
  out.penalty = active > 0 ? weights.sparsity_weight * smooth_l0(coeffs, weights.epsilon) / active : 0.0;

  out.total = out.model_error + out.data_error + out.penalty;
  return out;
}

double unnormalized_fit(const StateGrid& grid, const Observations& obs,
                        const CandidateLibrary& lib, const CoefficientState& coeffs,
                        double lambda) {
  check_shapes(grid, obs, lib, coeffs);
  double model_sq = 0.0;
  for (int i = 0; i + 1 < grid.size(); ++i)
    model_sq += midpoint_residual(grid, lib, coeffs, i).squaredNorm();
  double data_sq = 0.0;
  for (int s = 0; s < obs.sample_count(); ++s) {
    const int row = grid.data_rows[static_cast<std::size_t>(s)];
    for (int c = 0; c < obs.state_dim(); ++c) {
      if (obs.mask(s, c) == 0) continue;
      const double diff = obs.values(s, c) - grid.values(row, c);
      data_sq += diff * diff;
    }
  }
  return model_sq + lambda * data_sq;
}

Eigen::MatrixXd interpolate_onto_grid(const Observations& obs, const Eigen::VectorXd& grid_times) {
  const int d = obs.state_dim();
  const int n = static_cast<int>(grid_times.size());
  Eigen::MatrixXd out(n, d);
  for (int c = 0; c < d; ++c) {
    std::vector<std::pair<double, double>> pts;
    for (int s = 0; s < obs.sample_count(); ++s)
      if (obs.mask(s, c) != 0) pts.emplace_back(obs.times(s), obs.values(s, c));
    if (pts.size() < 2)
      throw std::runtime_error("component " + std::to_string(c + 1) +
                               " has fewer than two available observations");
    std::size_t seg = 0;
    for (int i = 0; i < n; ++i) {
      const double t = grid_times(i);
      if (t <= pts.front().first) {
        out(i, c) = pts.front().second;
        continue;
      }
      if (t >= pts.back().first) {
        out(i, c) = pts.back().second;
        continue;
      }
      while (seg + 2 < pts.size() && pts[seg + 1].first < t) ++seg;
      const auto& [t0, v0] = pts[seg];
      const auto& [t1, v1] = pts[seg + 1];
      // exact values at observation nodes
      out(i, c) = t == t1 ? v1 : v0 + (v1 - v0) * (t - t0) / (t1 - t0);
    }
  }
  return out;
}

}  // namespace sysid
