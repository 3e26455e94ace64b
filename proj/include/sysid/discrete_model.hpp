// Computational time grid, observation container, midpoint residuals and the
// three-term discrete loss (model error, data error, smooth-L0 penalty).

#pragma once

#include "sysid/term_library.hpp"

#include <Eigen/Dense>

#include <vector>

namespace sysid {

// Sampled times, noisy values and a per-entry availability mask.  Rows cover
// the full sampling grid; gaps and random drops clear mask entries while the
// row (and its time) stays in place.
struct Observations {
  Eigen::VectorXd times;   // m, strictly increasing
  Eigen::MatrixXd values;  // m x d, entries with mask==0 are ignored
  Eigen::MatrixXi mask;    // m x d availability (0/1)

  int sample_count() const { return static_cast<int>(times.size()); }
  int state_dim() const { return static_cast<int>(values.cols()); }
  int available_count() const { return static_cast<int>(mask.sum()); }
  // Number of rows with at least one available component.
  int rows_with_data() const;
};

// Computational grid: observation times with each interval subdivided into
// `refinement_factor` equal parts, plus the inferred state values.
struct StateGrid {
  Eigen::VectorXd times;       // n, strictly increasing
  Eigen::MatrixXd values;      // n x d
  std::vector<int> data_rows;  // observation sample index -> grid row

  int size() const { return static_cast<int>(times.size()); }
  int state_dim() const { return static_cast<int>(values.cols()); }
};

StateGrid build_grid(const Eigen::VectorXd& observation_times, int refinement_factor, int state_dim);

struct LossWeights {
  double lambda = 1.0;           // data-fidelity weight, > 0
  double sparsity_weight = 0.0;  // R, >= 0
  double epsilon = 0.01;         // smooth-L0 width, > 0
};

void validate(const LossWeights& w);

// (u_{i+1} - u_i)/dt_i - f((u_i + u_{i+1})/2) for interval i, where f is the
// masked library combination.
Eigen::VectorXd midpoint_residual(const StateGrid& grid, const CandidateLibrary& lib,
                                  const CoefficientState& coeffs, int interval);

// Sum over active linear coefficients of 1 - exp(-theta^2 / (2 epsilon^2)).
double smooth_l0(const CoefficientState& coeffs, double epsilon);

struct LossBreakdown {
  double total = 0.0;
  double model_error = 0.0;
  double data_error = 0.0;
  double penalty = 0.0;
};

// (1/n) sum_i |r_i|^2 + (lambda/n_hat) sum_{available} (obs - u)^2
//   + (R/k) sum_active (1 - exp(-theta^2/2 eps^2)),
// with n the grid point count, n_hat the scalar observation count and k the
// number of active linear coefficients.
LossBreakdown loss(const StateGrid& grid, const Observations& obs, const CandidateLibrary& lib,
                   const CoefficientState& coeffs, const LossWeights& weights);

// Raw (un-divided) sums |N(u;theta)|^2 + lambda |obs - u|_D|^2 used by the
// information criterion.
double unnormalized_fit(const StateGrid& grid, const Observations& obs,
                        const CandidateLibrary& lib, const CoefficientState& coeffs,
                        double lambda);

// Per-component linear interpolation of the available observations onto the
// grid times, with constant extrapolation beyond the first/last available
// sample.  Requires at least two available entries per component.
Eigen::MatrixXd interpolate_onto_grid(const Observations& obs, const Eigen::VectorXd& grid_times);

}  // namespace sysid
