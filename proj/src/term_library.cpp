#include "sysid/term_library.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sysid {

namespace {

// x^e with the 0^0 = 1 convention; e >= 0.
double int_pow(double x, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

// d/dx^(order) of x^e evaluated at x.
double mono_factor_deriv(double x, int e, int order) {
  if (order > e) return 0.0;
  double c = 1.0;
  for (int i = 0; i < order; ++i) c *= static_cast<double>(e - i);
  return c * int_pow(x, e - order);
}

void check_finite(const Eigen::VectorXd& x, const char* what) {
  if (!x.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite entries");
}

// Exponent vectors of a fixed total degree in lexicographically decreasing
// order (leading component largest first).
void append_monomials_of_degree(int state_dim, int degree, std::vector<Term>& out) {
  std::vector<int> cur(static_cast<std::size_t>(state_dim), 0);
  auto rec = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == state_dim - 1) {
      cur[static_cast<std::size_t>(pos)] = remaining;
      Term t;
      t.kind = TermKind::Monomial;
      t.exponents = cur;
      out.push_back(std::move(t));
      return;
    }
    for (int v = remaining; v >= 0; --v) {
      cur[static_cast<std::size_t>(pos)] = v;
      self(self, pos + 1, remaining - v);
    }
  };
  rec(rec, 0, degree);
}

}  // namespace

int Term::total_degree() const {
  if (kind != TermKind::Monomial) return 0;
  return std::accumulate(exponents.begin(), exponents.end(), 0);
}

bool Term::is_constant() const {
  return kind == TermKind::Monomial && total_degree() == 0;
}

std::string Term::name() const {
  if (kind == TermKind::ParametricExponential) {
    std::ostringstream os;
    os << "exp(a" << (inner_param_id + 1) << "*x" << (variable_index + 1) << ")";
    return os.str();
  }
  if (is_constant()) return "1";
  std::ostringstream os;
  bool first = true;
  for (std::size_t i = 0; i < exponents.size(); ++i) {
    if (exponents[i] == 0) continue;
    if (!first) os << "*";
    os << "x" << (i + 1);
    if (exponents[i] > 1) os << "^" << exponents[i];
    first = false;
  }
  return os.str();
}

bool operator==(const Term& a, const Term& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == TermKind::Monomial) return a.exponents == b.exponents;
  return a.variable_index == b.variable_index && a.inner_param_id == b.inner_param_id;
}

void CoefficientState::apply_mask() {
  for (int j = 0; j < theta.rows(); ++j)
    for (int k = 0; k < theta.cols(); ++k)
      if (mask(j, k) == 0) theta(j, k) = 0.0;
}

CoefficientState make_coefficient_state(const CandidateLibrary& lib, double theta_fill,
                                        double inner_fill, bool scaled) {
  CoefficientState c;
  c.theta = Eigen::MatrixXd::Constant(lib.state_dim, lib.size(), theta_fill);
  c.mask = Eigen::MatrixXi::Ones(lib.state_dim, lib.size());
  c.inner = Eigen::VectorXd::Constant(lib.num_inner_params, inner_fill);
  c.scaled = scaled;
  return c;
}

CandidateLibrary build_polynomial_library(int state_dim, int max_degree, bool include_constant) {
  if (state_dim < 1) throw std::invalid_argument("state_dim must be >= 1");
  if (max_degree < 1) throw std::invalid_argument("max_degree must be >= 1");
  CandidateLibrary lib;
  lib.state_dim = state_dim;
  lib.include_constant = include_constant;
  if (include_constant) {
    Term t;
    t.kind = TermKind::Monomial;
    t.exponents.assign(state_dim, 0);
    lib.terms.push_back(std::move(t));
  }
  for (int deg = 1; deg <= max_degree; ++deg)
    append_monomials_of_degree(state_dim, deg, lib.terms);
  lib.scales = Eigen::VectorXd::Ones(lib.size());
  lib.scale_degenerate.assign(lib.size(), 0);
  return lib;
}

int add_exponential_term(CandidateLibrary& lib, int variable_index) {
  if (variable_index < 0 || variable_index >= lib.state_dim)
    throw std::invalid_argument("exponential term variable index out of range");
  Term t;
  t.kind = TermKind::ParametricExponential;
  t.variable_index = variable_index;
  t.inner_param_id = lib.num_inner_params++;
  lib.terms.push_back(std::move(t));
  lib.scales.conservativeResize(lib.size());
  lib.scales(lib.size() - 1) = 1.0;
  lib.scale_degenerate.push_back(0);
  lib.exp_anchors.emplace_back();
  return lib.num_inner_params - 1;
}

ExpAnchorStats exp_anchor_stats(const Eigen::VectorXd& anchor, double inner_value) {
  ExpAnchorStats out;
  const int n = static_cast<int>(anchor.size());
  // log-sum-exp over weights exp(2 a x_r); large |a| stays finite
  double shift = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < n; ++r) shift = std::max(shift, 2.0 * inner_value * anchor(r));
  double wsum = 0.0, xsum = 0.0, xxsum = 0.0;
  for (int r = 0; r < n; ++r) {
    const double w = std::exp(2.0 * inner_value * anchor(r) - shift);
    wsum += w;
    xsum += w * anchor(r);
    xxsum += w * anchor(r) * anchor(r);
  }
  out.log_norm = 0.5 * (shift + std::log(wsum));
  out.mean = xsum / wsum;
  out.variance = std::max(0.0, xxsum / wsum - out.mean * out.mean);
  return out;
}

Eigen::VectorXd evaluate_terms(const CandidateLibrary& lib, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& inner) {
  if (x.size() != lib.state_dim) throw std::invalid_argument("state vector has wrong dimension");
  if (inner.size() != lib.num_inner_params)
    throw std::invalid_argument("inner parameter vector has wrong dimension");
  check_finite(x, "state");
  check_finite(inner, "inner parameters");
  Eigen::VectorXd out(lib.size());
  for (int k = 0; k < lib.size(); ++k) {
    const Term& t = lib.terms[static_cast<std::size_t>(k)];
    if (t.kind == TermKind::Monomial) {
      double v = 1.0;
      for (int i = 0; i < lib.state_dim; ++i) v *= int_pow(x(i), t.exponents[static_cast<std::size_t>(i)]);
      out(k) = v / lib.scales(k);
    } else {
      const double a = inner(t.inner_param_id);
      const auto& anchor = lib.exp_anchors[static_cast<std::size_t>(t.inner_param_id)];
      if (anchor.size() > 0) {
        const ExpAnchorStats st = exp_anchor_stats(anchor, a);
        out(k) = std::exp(a * x(t.variable_index) - st.log_norm);
      } else {
        out(k) = std::exp(a * x(t.variable_index)) / lib.scales(k);
      }
    }
  }
  return out;
}

TermDerivatives term_jacobian_hessian(const CandidateLibrary& lib, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& inner) {
  if (x.size() != lib.state_dim) throw std::invalid_argument("state vector has wrong dimension");
  if (inner.size() != lib.num_inner_params)
    throw std::invalid_argument("inner parameter vector has wrong dimension");
  check_finite(x, "state");
  check_finite(inner, "inner parameters");

  const int d = lib.state_dim;
  const int p = lib.size();
  const int q = lib.num_inner_params;
  TermDerivatives out;
  out.value.resize(p);
  out.dx = Eigen::MatrixXd::Zero(p, d);
  out.dxx.assign(static_cast<std::size_t>(p), Eigen::MatrixXd::Zero(d, d));
  out.dinner = Eigen::MatrixXd::Zero(p, q);
  out.dinner2 = Eigen::MatrixXd::Zero(p, q);
  out.dx_dinner.assign(static_cast<std::size_t>(p), Eigen::MatrixXd::Zero(d, q));

  for (int k = 0; k < p; ++k) {
    const Term& t = lib.terms[static_cast<std::size_t>(k)];
    const double inv_s = 1.0 / lib.scales(k);
    if (t.kind == TermKind::Monomial) {
      double v = 1.0;
      for (int i = 0; i < d; ++i) v *= int_pow(x(i), t.exponents[static_cast<std::size_t>(i)]);
      out.value(k) = v * inv_s;
      for (int a = 0; a < d; ++a) {
        const int ea = t.exponents[static_cast<std::size_t>(a)];
        if (ea == 0) continue;
        double g = mono_factor_deriv(x(a), ea, 1);
        for (int i = 0; i < d; ++i)
          if (i != a) g *= int_pow(x(i), t.exponents[static_cast<std::size_t>(i)]);
        out.dx(k, a) = g * inv_s;
      }
      for (int a = 0; a < d; ++a) {
        for (int b = a; b < d; ++b) {
          const int ea = t.exponents[static_cast<std::size_t>(a)];
          const int eb = t.exponents[static_cast<std::size_t>(b)];
          double h;
          if (a == b) {
            if (ea < 2) continue;
            h = mono_factor_deriv(x(a), ea, 2);
            for (int i = 0; i < d; ++i)
              if (i != a) h *= int_pow(x(i), t.exponents[static_cast<std::size_t>(i)]);
          } else {
            if (ea == 0 || eb == 0) continue;
            h = mono_factor_deriv(x(a), ea, 1) * mono_factor_deriv(x(b), eb, 1);
            for (int i = 0; i < d; ++i)
              if (i != a && i != b) h *= int_pow(x(i), t.exponents[static_cast<std::size_t>(i)]);
          }
          h *= inv_s;
          out.dxx[static_cast<std::size_t>(k)](a, b) = h;
          out.dxx[static_cast<std::size_t>(k)](b, a) = h;
        }
      }
    } else {
      const int j = t.variable_index;
      const int iq = t.inner_param_id;
      const double a = inner(iq);
      const auto& anchor = lib.exp_anchors[static_cast<std::size_t>(iq)];
      if (anchor.size() > 0) {
        const ExpAnchorStats st = exp_anchor_stats(anchor, a);
        const double v = std::exp(a * x(j) - st.log_norm);
        const double centered = x(j) - st.mean;
        out.value(k) = v;
        out.dx(k, j) = a * v;
        out.dxx[static_cast<std::size_t>(k)](j, j) = a * a * v;
        out.dinner(k, iq) = centered * v;
        out.dinner2(k, iq) = (centered * centered - 2.0 * st.variance) * v;
        out.dx_dinner[static_cast<std::size_t>(k)](j, iq) = (1.0 + a * centered) * v;
      } else {
        const double v = std::exp(a * x(j)) * inv_s;
        out.value(k) = v;
        out.dx(k, j) = a * v;
        out.dxx[static_cast<std::size_t>(k)](j, j) = a * a * v;
        out.dinner(k, iq) = x(j) * v;
        out.dinner2(k, iq) = x(j) * x(j) * v;
        out.dx_dinner[static_cast<std::size_t>(k)](j, iq) = (1.0 + a * x(j)) * v;
      }
    }
  }
  return out;
}

CandidateLibrary normalize_library(const CandidateLibrary& lib,
                                   const Eigen::MatrixXd& initial_states,
                                   const Eigen::VectorXd& inner) {
  if (initial_states.cols() != lib.state_dim)
    throw std::invalid_argument("initial state matrix has wrong column count");
  CandidateLibrary out = lib;
  out.scales = Eigen::VectorXd::Ones(lib.size());
  out.scale_degenerate.assign(static_cast<std::size_t>(lib.size()), 0);

  CandidateLibrary raw = lib;  // evaluate unscaled columns
  raw.scales = Eigen::VectorXd::Ones(lib.size());
  for (auto& anchor : raw.exp_anchors) anchor.resize(0);

  Eigen::VectorXd sq = Eigen::VectorXd::Zero(lib.size());
  for (int r = 0; r < initial_states.rows(); ++r) {
    Eigen::VectorXd v = evaluate_terms(raw, initial_states.row(r).transpose(), inner);
    sq += v.cwiseProduct(v);
  }
  for (int k = 0; k < lib.size(); ++k) {
    const Term& t = lib.terms[static_cast<std::size_t>(k)];
    if (t.kind == TermKind::ParametricExponential) {
      // anchored normalization keeps the column at unit norm for every
      // inner-parameter value
      out.exp_anchors[static_cast<std::size_t>(t.inner_param_id)] =
          initial_states.col(t.variable_index);
      out.scales(k) = 1.0;
      continue;
    }
    const double norm = std::sqrt(sq(k));
    if (norm < 1e-12) {
      out.scale_degenerate[static_cast<std::size_t>(k)] = 1;
      std::cerr << "warning: library term " << lib.terms[static_cast<std::size_t>(k)].name()
                << " is numerically zero on the data; keeping scale 1\n";
    } else {
      out.scales(k) = norm;
    }
  }
  return out;
}

namespace {

// Multiplicative change of a term value under per-component state scaling
// x -> x / c: N_k(x / c) = N_k(x) / monomial_state_factor.
double term_state_factor(const Term& t, const Eigen::VectorXd& c) {
  if (t.kind != TermKind::Monomial) return 1.0;
  double f = 1.0;
  for (std::size_t i = 0; i < t.exponents.size(); ++i)
    f *= int_pow(c(static_cast<int>(i)), t.exponents[i]);
  return f;
}

}  // namespace

CoefficientState rescale_coefficients(const CoefficientState& scaled_coeffs,
                                      const CandidateLibrary& lib,
                                      const Eigen::VectorXd& state_scales) {
  if (!scaled_coeffs.scaled) throw std::invalid_argument("coefficients are already in original units");
  Eigen::VectorXd c = state_scales;
  if (c.size() == 0) c = Eigen::VectorXd::Ones(lib.state_dim);
  if (c.size() != lib.state_dim) throw std::invalid_argument("state scale vector has wrong dimension");

  CoefficientState out = scaled_coeffs;
  out.scaled = false;
  for (int j = 0; j < out.rows(); ++j) {
    for (int k = 0; k < out.terms(); ++k) {
      const Term& t = lib.terms[static_cast<std::size_t>(k)];
      double s = lib.scales(k);
      if (t.kind == TermKind::ParametricExponential &&
          lib.exp_anchors[static_cast<std::size_t>(t.inner_param_id)].size() > 0)
        s = std::exp(exp_anchor_stats(lib.exp_anchors[static_cast<std::size_t>(t.inner_param_id)],
                                      scaled_coeffs.inner(t.inner_param_id))
                         .log_norm);
      out.theta(j, k) = scaled_coeffs.theta(j, k) / s * c(j) / term_state_factor(t, c);
    }
  }
  for (const Term& t : lib.terms) {
    if (t.kind == TermKind::ParametricExponential)
      out.inner(t.inner_param_id) = scaled_coeffs.inner(t.inner_param_id) / c(t.variable_index);
  }
  out.apply_mask();
  return out;
}

CoefficientState scale_coefficients(const CoefficientState& unscaled_coeffs,
                                    const CandidateLibrary& lib,
                                    const Eigen::VectorXd& state_scales) {
  if (unscaled_coeffs.scaled) throw std::invalid_argument("coefficients are already scaled");
  Eigen::VectorXd c = state_scales;
  if (c.size() == 0) c = Eigen::VectorXd::Ones(lib.state_dim);
  if (c.size() != lib.state_dim) throw std::invalid_argument("state scale vector has wrong dimension");

  CoefficientState out = unscaled_coeffs;
  out.scaled = true;
  for (const Term& t : lib.terms) {
    if (t.kind == TermKind::ParametricExponential)
      out.inner(t.inner_param_id) = unscaled_coeffs.inner(t.inner_param_id) * c(t.variable_index);
  }
  for (int j = 0; j < out.rows(); ++j) {
    for (int k = 0; k < out.terms(); ++k) {
      const Term& t = lib.terms[static_cast<std::size_t>(k)];
      double s = lib.scales(k);
      if (t.kind == TermKind::ParametricExponential &&
          lib.exp_anchors[static_cast<std::size_t>(t.inner_param_id)].size() > 0)
        s = std::exp(exp_anchor_stats(lib.exp_anchors[static_cast<std::size_t>(t.inner_param_id)],
                                      out.inner(t.inner_param_id))
                         .log_norm);
      out.theta(j, k) = unscaled_coeffs.theta(j, k) * s / c(j) * term_state_factor(t, c);
    }
  }
  out.apply_mask();
  return out;
}

}  // namespace sysid
