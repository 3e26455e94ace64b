#include "sysid/lm_optimizer.hpp"

#include "sysid/sparse_curvature.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace sysid {

void validate(const LMConfig& c) {
  if (!(c.alpha_init >= 0.0)) throw std::invalid_argument("alpha_init must be nonnegative");
  if (!(c.tau1 > 0.0 && c.tau1 < 1.0 && c.tau2 > 1.0))
    throw std::invalid_argument("need 0 < tau1 < 1 < tau2");
  if (!(c.rho_low < c.rho_high)) throw std::invalid_argument("need rho_low < rho_high");
  if (!(c.grad_tol > 0.0)) throw std::invalid_argument("grad_tol must be positive");
  if (c.max_iters < 1) throw std::invalid_argument("max_iters must be positive");
  if (!(c.alpha_min >= 0.0 && c.alpha_max > c.alpha_min))
    throw std::invalid_argument("need 0 <= alpha_min < alpha_max");
}

LMResult minimize(const Objective& objective, const Eigen::VectorXd& x0, const LMConfig& config) {
  validate(config);
  if (x0.size() != objective.dimension())
    throw std::invalid_argument("starting point has wrong dimension");

  const SparsityPattern pattern = objective.sparsity();
  const Coloring coloring = star_coloring(pattern);
  const HessianAssembler assembler(pattern, coloring);

  LMResult result;
  result.x = x0;
  result.f = objective.value(result.x);
  if (!std::isfinite(result.f)) throw std::runtime_error("objective not finite at starting point");

  Eigen::VectorXd g(objective.dimension());
  Eigen::SparseMatrix<double> H, H_alpha;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower> llt;
  bool analyzed = false;
  bool refresh = true;  // gradient/Hessian are stale after an accepted step
  double alpha = config.alpha_init;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    if (refresh) {
      objective.gradient(result.x, g);
      result.grad_norm = g.lpNorm<Eigen::Infinity>();
      if (result.grad_norm <= config.grad_tol) {
        result.status = LMStatus::Converged;
        return result;
      }
      assembler.assemble(objective, result.x, H);
      if (!analyzed) {
        llt.analyzePattern(H);
        analyzed = true;
      }
      refresh = false;
    }

    // Factorize H + alpha I, growing alpha on failure within this iteration.
    Eigen::VectorXd step;
    while (true) {
      H_alpha = H;
      double* values = H_alpha.valuePtr();
      for (int idx : assembler.diagonal_value_indices()) values[idx] += alpha;
      llt.factorize(H_alpha);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(-g);
        if (step.allFinite()) break;
      }
      if (alpha >= config.alpha_max)
        throw std::runtime_error("Hessian factorization failed at the maximum damping");
      alpha = alpha > 0.0 ? std::min(alpha * config.tau2, config.alpha_max)
                          : std::max(config.alpha_min, 1e-10);
    }

    const double f_test = objective.value(result.x + step);
    const double predicted = -g.dot(step) - 0.5 * step.dot(H.selfadjointView<Eigen::Lower>() * step);
    const double rho = (result.f - f_test) / predicted;

    LMIteration rec;
    rec.iter = iter;
    rec.alpha = alpha;
    rec.rho = rho;
    rec.grad_norm = result.grad_norm;

    if (std::isfinite(f_test) && f_test < result.f) {
      result.x += step;
      result.f = f_test;
      refresh = true;
      rec.accepted = true;
      if (rho < config.rho_low)
        alpha = std::min(alpha * config.tau2, config.alpha_max);
      else if (rho > config.rho_high)
        alpha = std::max(alpha * config.tau1, config.alpha_min);
    } else {
      rec.accepted = false;
      alpha = std::min(alpha * config.tau2, config.alpha_max);
      if (alpha == 0.0) alpha = config.alpha_min > 0.0 ? config.alpha_min : 1e-12;
    }
    rec.f = result.f;
    result.trace.push_back(rec);
    result.iterations = iter + 1;
  }

  objective.gradient(result.x, g);
  result.grad_norm = g.lpNorm<Eigen::Infinity>();
  result.status = result.grad_norm <= config.grad_tol ? LMStatus::Converged : LMStatus::MaxIterations;
  return result;
}

void write_trace_csv(const std::vector<LMIteration>& trace, std::ostream& os) {
  os << "iter,f,grad_norm,alpha,rho,accepted\n";
  for (const auto& r : trace)
    os << r.iter << "," << r.f << "," << r.grad_norm << "," << r.alpha << "," << r.rho << ","
       << (r.accepted ? 1 : 0) << "\n";
}

}  // namespace sysid
