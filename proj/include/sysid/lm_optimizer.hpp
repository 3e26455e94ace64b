// Generalized Levenberg-Marquardt minimization with the exact sparse Hessian:
// solve (H + alpha I) d = -g by sparse Cholesky, accept on decrease, adapt
// alpha from the gain ratio.

#pragma once

#include "sysid/objective.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace sysid {

struct LMConfig {
  double alpha_init = 1.0;
  double tau1 = 0.25;  // shrink factor on good agreement
  double tau2 = 2.0;   // growth factor on poor agreement or rejection
  double rho_low = 0.25;
  double rho_high = 0.75;
  double grad_tol = 1e-8;  // max-norm stopping test on the gradient
  int max_iters = 500;
  double alpha_min = 1e-12;
  double alpha_max = 1e12;
};

void validate(const LMConfig& config);

enum class LMStatus { Converged, MaxIterations };

struct LMIteration {
  int iter = 0;
  double f = 0.0;
  double grad_norm = 0.0;
  double alpha = 0.0;
  double rho = 0.0;
  bool accepted = false;
};

struct LMResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  LMStatus status = LMStatus::Converged;
  std::vector<LMIteration> trace;
};

// Errors (std::runtime_error) when H + alpha I cannot be factorized even at
// alpha_max.
LMResult minimize(const Objective& objective, const Eigen::VectorXd& x0, const LMConfig& config);

// CSV export: iter, f, grad_norm, alpha, rho, accepted.
void write_trace_csv(const std::vector<LMIteration>& trace, std::ostream& os);

}  // namespace sysid
