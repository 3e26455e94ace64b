// Candidate right-hand-side terms for ODE discovery: monomials and
// parametric exponentials, with exact derivatives and data-driven
// normalization of the term columns.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace sysid {

enum class TermKind { Monomial, ParametricExponential };

// A single library term, shared across all equations of the system.
// Monomial: prod_i x_i^{e_i} (the zero exponent vector is the constant 1).
// ParametricExponential: exp(a * x_j) where a is a fitted inner parameter.
struct Term {
  TermKind kind = TermKind::Monomial;
  std::vector<int> exponents;  // Monomial only, componentwise >= 0
  int variable_index = -1;     // ParametricExponential only
  int inner_param_id = -1;     // ParametricExponential only

  int total_degree() const;
  bool is_constant() const;
  std::string name() const;
};

bool operator==(const Term& a, const Term& b);

struct CandidateLibrary {
  int state_dim = 0;
  std::vector<Term> terms;     // shared, ordered list; no duplicate monomials
  bool include_constant = false;
  int num_inner_params = 0;
  Eigen::VectorXd scales;      // strictly positive normalization factors s_k
  std::vector<std::uint8_t> scale_degenerate;  // s_k left at 1, data column ~ 0
  // Parametric terms normalize against these anchor samples (the values of
  // x_j over the normalization data), so the column keeps unit norm for
  // every inner-parameter value; empty anchors fall back to the fixed s_k.
  std::vector<Eigen::VectorXd> exp_anchors;  // indexed by inner_param_id

  int size() const { return static_cast<int>(terms.size()); }
};

// Normalization state of exp(a x_j) at a given inner value: log of the
// anchor-column norm plus the weighted mean and variance of the anchor
// samples under weights exp(2 a x_r).
struct ExpAnchorStats {
  double log_norm = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

ExpAnchorStats exp_anchor_stats(const Eigen::VectorXd& anchor, double inner_value);

// Coefficient matrix theta (d x p), binary active-term mask, and the inner
// parameters of parametric terms.  `scaled` tells whether theta is expressed
// against the normalized library columns.
struct CoefficientState {
  Eigen::MatrixXd theta;  // d x p
  Eigen::MatrixXi mask;   // d x p, entries 0/1; mask==0 implies theta==0
  Eigen::VectorXd inner;  // one slot per declared inner parameter
  bool scaled = false;

  int rows() const { return static_cast<int>(theta.rows()); }
  int terms() const { return static_cast<int>(theta.cols()); }
  int active_count() const { return static_cast<int>(mask.sum()); }
  // Zeroes every masked-out coefficient.
  void apply_mask();
};

CoefficientState make_coefficient_state(const CandidateLibrary& lib, double theta_fill,
                                        double inner_fill, bool scaled);

// All monomials of total degree 1..max_degree (plus the constant when
// requested), in graded lexicographic order: degree-major, then
// lexicographically decreasing exponent vectors within a degree.
CandidateLibrary build_polynomial_library(int state_dim, int max_degree, bool include_constant);

// Appends exp(a * x_{variable_index}) with a fresh inner-parameter slot;
// returns the slot id.
int add_exponential_term(CandidateLibrary& lib, int variable_index);

// Values of all scaled terms at a point: [N_1(x)/s_1, ..., N_p(x)/s_p].
Eigen::VectorXd evaluate_terms(const CandidateLibrary& lib, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& inner);

// Exact first and second derivatives of every scaled term.
struct TermDerivatives {
  Eigen::VectorXd value;                  // p
  Eigen::MatrixXd dx;                     // p x d
  std::vector<Eigen::MatrixXd> dxx;       // p matrices, each d x d (symmetric)
  Eigen::MatrixXd dinner;                 // p x q, nonzero only for host terms
  Eigen::MatrixXd dinner2;                // p x q, second derivative in the inner parameter
  std::vector<Eigen::MatrixXd> dx_dinner; // p matrices, each d x q mixed block
};

TermDerivatives term_jacobian_hessian(const CandidateLibrary& lib, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& inner);

// Sets s_k to the 2-norm of term k evaluated over the rows of
// `initial_states`.  Columns with norm below 1e-12 keep s_k = 1 and are
// flagged in scale_degenerate.
CandidateLibrary normalize_library(const CandidateLibrary& lib,
                                   const Eigen::MatrixXd& initial_states,
                                   const Eigen::VectorXd& inner);

// Converts coefficients fitted against the normalized library (and, when
// state_scales is nonempty, against per-component standardized states
// x_j / state_scales[j]) back to original units.  Mask is unchanged.
CoefficientState rescale_coefficients(const CoefficientState& scaled_coeffs,
                                      const CandidateLibrary& lib,
                                      const Eigen::VectorXd& state_scales = Eigen::VectorXd());

// Inverse of rescale_coefficients.
CoefficientState scale_coefficients(const CoefficientState& unscaled_coeffs,
                                    const CandidateLibrary& lib,
                                    const Eigen::VectorXd& state_scales = Eigen::VectorXd());

}  // namespace sysid
