// Information-criterion scoring, adaptive pruning with forward refinement and
// backward recovery, and the cross-validated (lambda, R) grid search.

#pragma once

#include "sysid/discrete_model.hpp"
#include "sysid/lm_optimizer.hpp"
#include "sysid/term_library.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace sysid {

enum class Criterion { Bic, Aic };

// ln(n_hat) * param_count + n_hat * ln(fit).  A zero fit is floored at
// 1e-300 with a warning; a negative fit is an error.
double bic(int param_count, double fit, int n_hat);
double information_criterion(Criterion crit, int param_count, double fit, int n_hat);

struct SelectionIteration {
  Eigen::MatrixXi mask;
  double ic = 0.0;
  double fit = 0.0;
  bool accepted = false;
  char mode = 'f';  // 'f' forward, 'b' backward
  int k = 0;
  int active = 0;
};

struct SelectionTrace {
  std::vector<SelectionIteration> iterations;
  int iteration_cap = 0;
  std::string termination;
};

struct SelectionResult {
  bool success = false;
  Eigen::MatrixXd states;   // best inferred grid values
  CoefficientState coeffs;  // best model, scaled units, masked entries zero
  double ic = 0.0;
  double fit = 0.0;
  SelectionTrace trace;
};

// Adaptive pruning: every iteration solves the unpenalized and penalized
// problems under the current mask, scores the information criterion from the
// unpenalized solution, and accepts on strict decrease.  Forward mode removes
// the k smallest-magnitude penalized coefficients of the best model; backward
// mode re-adds the largest coefficients of the solve just prior to the
// current minimum, one at a time.
SelectionResult select_model(const Observations& obs, const CandidateLibrary& lib,
                             const StateGrid& initial_grid, const CoefficientState& init,
                             const LossWeights& weights, int k0, const LMConfig& lm_config,
                             Criterion criterion = Criterion::Bic);

void write_selection_trace_csv(const SelectionTrace& trace, std::ostream& os);

struct HyperGrid {
  std::vector<double> lambdas;
  std::vector<double> sparsity_weights;
  int validation_stride = 3;  // every stride-th sample row is held out
  int validation_offset = 2;
};

HyperGrid default_hyper_grid();  // lambda 1e-3..1e3, R 1e-4..1e0 (35 cells)

struct SearchConfig {
  HyperGrid grid;
  int k0 = 5;
  int refinement = 1;
  double epsilon = 0.01;
  LMConfig lm;
  Criterion criterion = Criterion::Bic;
  double theta_init = 1.0;
  double inner_init = 1.0;
  int workers = 1;
};

struct CellResult {
  double lambda = 0.0;
  double sparsity_weight = 0.0;
  SelectionResult model;
  double validation_error = 0.0;
  double validation_se = 0.0;  // standard error of the held-out squared-error sum
  bool ok = false;
  std::string error;
};

struct DiscoveryOutcome {
  std::vector<CellResult> ranked;  // ascending validation error, failed cells last
  CandidateLibrary normalized_library;
  StateGrid grid;                  // times and data-row map of the search
  std::vector<int> validation_rows;
  int training_count = 0;          // scalar training observations
};

// Runs select_model per (lambda, R) cell on the training split and ranks the
// models by held-out squared error.  Errors if every cell fails.
DiscoveryOutcome hyperparameter_search(const Observations& obs, const CandidateLibrary& lib,
                                       const SearchConfig& config);

// One-standard-error selection: among cells whose validation error is within
// one standard error of the best, the sparsest model (ties to lower error).
const CellResult& pick_winner(const std::vector<CellResult>& ranked);

struct Metrics {
  double re_theta = 0.0;
  double re_u = 0.0;
  double tpr = 0.0;
  int tp = 0, fn = 0, fp = 0;
};

// Relative Frobenius errors and the true positivity ratio over the
// linear-coefficient support; expects original (unscaled) units.
Metrics metrics(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_true,
                const Eigen::MatrixXd& u, const Eigen::MatrixXd& u_true);

void write_cells_csv(const std::vector<CellResult>& cells, std::ostream& os);

}  // namespace sysid
