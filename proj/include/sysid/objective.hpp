// Twice-differentiable objective interface consumed by the sparse Hessian
// assembler and the Levenberg-Marquardt minimizer, plus the discrete-loss
// objective over joint states and model parameters.

#pragma once

#include "sysid/discrete_model.hpp"
#include "sysid/sparse_curvature.hpp"
#include "sysid/term_library.hpp"

#include <Eigen/Dense>

#include <memory>

namespace sysid {

// Variables are ordered [state block | parameter block]; the parameter block
// couples densely with the states and is assembled from direct second
// derivatives rather than colored seed products.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual int dimension() const = 0;
  virtual int parameter_count() const { return 0; }
  int state_count() const { return dimension() - parameter_count(); }

  virtual double value(const Eigen::VectorXd& x) const = 0;
  virtual void gradient(const Eigen::VectorXd& x, Eigen::VectorXd& out) const = 0;
  // Exact Hessian-vector product (analytic second-derivative contraction).
  virtual void hessian_vector(const Eigen::VectorXd& x, const Eigen::VectorXd& v,
                              Eigen::VectorXd& out) const = 0;
  // Exact mixed state-parameter strip (S x P) and parameter block (P x P).
  virtual void parameter_hessian(const Eigen::VectorXd& x, Eigen::MatrixXd& strip,
                                 Eigen::MatrixXd& param_block) const;
  virtual SparsityPattern sparsity() const = 0;
};

// The discrete loss of the collocation model as a function of
// [grid states (time-major) | active coefficients (row-major) | active inner
// parameters].  Masked coefficients are excluded from the variable vector.
class DiscreteLossObjective : public Objective {
 public:
  DiscreteLossObjective(const StateGrid& grid, const Observations& obs,
                        const CandidateLibrary& lib, const Eigen::MatrixXi& mask,
                        const LossWeights& weights, bool with_penalty);
  ~DiscreteLossObjective() override;

  int dimension() const override;
  int parameter_count() const override;
  double value(const Eigen::VectorXd& x) const override;
  void gradient(const Eigen::VectorXd& x, Eigen::VectorXd& out) const override;
  void hessian_vector(const Eigen::VectorXd& x, const Eigen::VectorXd& v,
                      Eigen::VectorXd& out) const override;
  void parameter_hessian(const Eigen::VectorXd& x, Eigen::MatrixXd& strip,
                         Eigen::MatrixXd& param_block) const override;
  SparsityPattern sparsity() const override;

  // Variable packing against this objective's active layout.
  Eigen::VectorXd pack(const Eigen::MatrixXd& grid_values, const CoefficientState& coeffs) const;
  void unpack(const Eigen::VectorXd& x, Eigen::MatrixXd& grid_values,
              CoefficientState& coeffs) const;

  LossBreakdown breakdown(const Eigen::VectorXd& x) const;
  int active_coefficients() const;
  int active_inner_parameters() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sysid
