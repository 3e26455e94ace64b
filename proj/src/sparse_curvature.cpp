#include "sysid/sparse_curvature.hpp"

#include "sysid/objective.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace sysid {

namespace {

bool sorted_contains(const std::vector<int>& v, int x) {
  return std::binary_search(v.begin(), v.end(), x);
}

}  // namespace

bool SparsityPattern::state_entry(int i, int j) const {
  if (i == j) return true;
  return sorted_contains(state_neighbors[static_cast<std::size_t>(i)], j);
}

bool SparsityPattern::entry(int i, int j) const {
  if (i == j) return true;
  const bool i_state = i < num_state_vars;
  const bool j_state = j < num_state_vars;
  if (i_state && j_state) return state_entry(i, j);
  if (i_state != j_state) return true;  // dense state-parameter strip
  return sorted_contains(param_neighbors[static_cast<std::size_t>(i - num_state_vars)],
                         j - num_state_vars);
}

std::size_t SparsityPattern::structural_nonzeros() const {
  std::size_t n = static_cast<std::size_t>(dimension());  // diagonal
  for (const auto& nb : state_neighbors) n += nb.size();
  for (const auto& nb : param_neighbors) n += nb.size();
  n += 2 * static_cast<std::size_t>(num_state_vars) * static_cast<std::size_t>(num_param_vars);
  return n;
}

SparsityPattern derive_pattern(int grid_size, const CandidateLibrary& lib,
                               const Eigen::MatrixXi& mask) {
  if (grid_size < 2) throw std::invalid_argument("grid must have at least two points");
  if (mask.rows() != lib.state_dim || mask.cols() != lib.size())
    throw std::invalid_argument("mask does not match the library");

  const int d = lib.state_dim;
  const int n = grid_size;
  SparsityPattern pat;
  pat.num_state_vars = n * d;
  pat.state_neighbors.resize(static_cast<std::size_t>(n * d));
  for (int t = 0; t < n; ++t) {
    for (int a = 0; a < d; ++a) {
      auto& nb = pat.state_neighbors[static_cast<std::size_t>(t * d + a)];
      for (int tt = std::max(0, t - 1); tt <= std::min(n - 1, t + 1); ++tt)
        for (int b = 0; b < d; ++b)
          if (!(tt == t && b == a)) nb.push_back(tt * d + b);
      // already sorted by construction
    }
  }

  // Active coefficients in row-major order, then active inner parameters.
  std::vector<std::pair<int, int>> coeffs;  // (row, term)
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < lib.size(); ++k)
      if (mask(j, k) != 0) coeffs.emplace_back(j, k);

  std::vector<int> inner_host;  // term index hosting each active inner parameter
  for (int k = 0; k < lib.size(); ++k) {
    const Term& t = lib.terms[static_cast<std::size_t>(k)];
    if (t.kind != TermKind::ParametricExponential) continue;
    bool active = false;
    for (int j = 0; j < d; ++j) active = active || mask(j, k) != 0;
    if (active) inner_host.push_back(k);
  }

  const int nc = static_cast<int>(coeffs.size());
  const int nq = static_cast<int>(inner_host.size());
  pat.num_param_vars = nc + nq;
  pat.param_neighbors.resize(static_cast<std::size_t>(pat.num_param_vars));

  // Coefficients of the same equation couple through that equation's
  // residuals; cross-equation second derivatives vanish identically.
  for (int a = 0; a < nc; ++a)
    for (int b = a + 1; b < nc; ++b)
      if (coeffs[static_cast<std::size_t>(a)].first == coeffs[static_cast<std::size_t>(b)].first) {
        pat.param_neighbors[static_cast<std::size_t>(a)].push_back(b);
        pat.param_neighbors[static_cast<std::size_t>(b)].push_back(a);
      }
  // An inner parameter couples with every coefficient of the equations where
  // its host term is active, and with inner parameters sharing an equation.
  for (int q = 0; q < nq; ++q) {
    const int host = inner_host[static_cast<std::size_t>(q)];
    for (int a = 0; a < nc; ++a) {
      const auto [row, term] = coeffs[static_cast<std::size_t>(a)];
      (void)term;
      if (mask(row, host) != 0) {
        pat.param_neighbors[static_cast<std::size_t>(a)].push_back(nc + q);
        pat.param_neighbors[static_cast<std::size_t>(nc + q)].push_back(a);
      }
    }
    for (int q2 = q + 1; q2 < nq; ++q2) {
      const int host2 = inner_host[static_cast<std::size_t>(q2)];
      bool shared = false;
      for (int j = 0; j < d; ++j) shared = shared || (mask(j, host) != 0 && mask(j, host2) != 0);
      if (shared) {
        pat.param_neighbors[static_cast<std::size_t>(nc + q)].push_back(nc + q2);
        pat.param_neighbors[static_cast<std::size_t>(nc + q2)].push_back(nc + q);
      }
    }
  }
  for (auto& nb : pat.param_neighbors) std::sort(nb.begin(), nb.end());
  return pat;
}

Coloring star_coloring(const SparsityPattern& pattern) {
  const int n = pattern.num_state_vars;
  Coloring out;
  out.colors.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> forbidden;  // stamp per color
  std::vector<int> nb_color_count;
  int stamp = 0;

  auto color_of = [&](int v) { return out.colors[static_cast<std::size_t>(v)]; };

  for (int v = 0; v < n; ++v) {
    ++stamp;
    forbidden.resize(static_cast<std::size_t>(out.num_colors) + 2, 0);
    nb_color_count.assign(static_cast<std::size_t>(out.num_colors) + 2, 0);
    const auto& nv = pattern.state_neighbors[static_cast<std::size_t>(v)];

    auto forbid = [&](int c) {
      if (static_cast<std::size_t>(c) < forbidden.size()) forbidden[static_cast<std::size_t>(c)] = stamp;
    };

    for (int w : nv)
      if (color_of(w) >= 0) {
        forbid(color_of(w));
        ++nb_color_count[static_cast<std::size_t>(color_of(w))];
      }

    // Star condition, v as a path endpoint v-w-u-x: candidate c(u) completes a
    // two-colored path when some x beyond u repeats c(w).
    for (int w : nv) {
      if (color_of(w) < 0) continue;
      for (int u : pattern.state_neighbors[static_cast<std::size_t>(w)]) {
        if (u == v || color_of(u) < 0) continue;
        for (int x : pattern.state_neighbors[static_cast<std::size_t>(u)]) {
          if (x == w || x == v || color_of(x) < 0) continue;
          if (color_of(x) == color_of(w)) {
            forbid(color_of(u));
            break;
          }
        }
      }
    }
    // Star condition, v interior on w-v-u-x: candidate c(x) completes a
    // two-colored path when another neighbor w repeats c(u).
    for (int u : nv) {
      if (color_of(u) < 0) continue;
      if (nb_color_count[static_cast<std::size_t>(color_of(u))] < 2) continue;
      for (int x : pattern.state_neighbors[static_cast<std::size_t>(u)]) {
        if (x == v || color_of(x) < 0) continue;
        forbid(color_of(x));
      }
    }

    int c = 0;
    while (static_cast<std::size_t>(c) < forbidden.size() && forbidden[static_cast<std::size_t>(c)] == stamp)
      ++c;
    out.colors[static_cast<std::size_t>(v)] = c;
    out.num_colors = std::max(out.num_colors, c + 1);
  }

  out.seeds.assign(static_cast<std::size_t>(out.num_colors), Eigen::VectorXd::Zero(n));
  for (int v = 0; v < n; ++v) out.seeds[static_cast<std::size_t>(color_of(v))](v) = 1.0;
  return out;
}

Eigen::VectorXd hessian_vector_product(const Objective& objective, const Eigen::VectorXd& point,
                                       const Eigen::VectorXd& v) {
  if (point.size() != objective.dimension() || v.size() != objective.dimension())
    throw std::invalid_argument("dimension mismatch in Hessian-vector product");
  Eigen::VectorXd out(objective.dimension());
  objective.hessian_vector(point, v, out);
  if (!out.allFinite()) throw std::runtime_error("non-finite Hessian-vector product");
  return out;
}

HessianAssembler::HessianAssembler(const SparsityPattern& pattern, const Coloring& coloring) {
  num_states_ = pattern.num_state_vars;
  num_params_ = pattern.num_param_vars;
  const int dim = pattern.dimension();
  if (static_cast<int>(coloring.colors.size()) != num_states_)
    throw std::invalid_argument("coloring does not match the pattern");
  seeds_ = coloring.seeds;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(pattern.structural_nonzeros());
  for (int i = 0; i < dim; ++i) trips.emplace_back(i, i, 0.0);
  for (int i = 0; i < num_states_; ++i)
    for (int j : pattern.state_neighbors[static_cast<std::size_t>(i)])
      trips.emplace_back(i, j, 0.0);
  for (int s = 0; s < num_states_; ++s)
    for (int q = 0; q < num_params_; ++q) {
      trips.emplace_back(s, num_states_ + q, 0.0);
      trips.emplace_back(num_states_ + q, s, 0.0);
    }
  for (int q = 0; q < num_params_; ++q)
    for (int j : pattern.param_neighbors[static_cast<std::size_t>(q)])
      trips.emplace_back(num_states_ + q, num_states_ + j, 0.0);

  structure_.resize(dim, dim);
  structure_.setFromTriplets(trips.begin(), trips.end());
  structure_.makeCompressed();

  auto flat_index = [&](int r, int c) -> int {
    const int* outer = structure_.outerIndexPtr();
    const int* inner = structure_.innerIndexPtr();
    const int lo = outer[c];
    const int hi = outer[c + 1];
    const int* it = std::lower_bound(inner + lo, inner + hi, r);
    if (it == inner + hi || *it != r) throw std::logic_error("missing structural entry");
    return static_cast<int>(it - inner);
  };

  // Recovery plan for the state block.  Star coloring guarantees that each
  // entry is isolated in at least one seed product.
  const auto& colors = coloring.colors;
  auto unique_neighbor_with_color = [&](int i, int j, int c) {
    // true when j is the only neighbor of i carrying color c
    for (int k : pattern.state_neighbors[static_cast<std::size_t>(i)])
      if (k != j && colors[static_cast<std::size_t>(k)] == c) return false;
    return true;
  };
  for (int i = 0; i < num_states_; ++i) {
    state_entries_.push_back({i, colors[static_cast<std::size_t>(i)], flat_index(i, i), flat_index(i, i)});
    for (int j : pattern.state_neighbors[static_cast<std::size_t>(i)]) {
      if (j < i) continue;
      StateEntry e;
      e.lower_index = flat_index(j, i);
      e.upper_index = flat_index(i, j);
      const int ci = colors[static_cast<std::size_t>(i)];
      const int cj = colors[static_cast<std::size_t>(j)];
      if (unique_neighbor_with_color(i, j, cj)) {
        e.row = i;
        e.color = cj;
      } else if (unique_neighbor_with_color(j, i, ci)) {
        e.row = j;
        e.color = ci;
      } else {
        throw std::logic_error("coloring cannot recover Hessian entry unambiguously");
      }
      state_entries_.push_back(e);
    }
  }

  strip_value_index_.resize(2 * static_cast<std::size_t>(num_states_) * static_cast<std::size_t>(num_params_));
  for (int s = 0; s < num_states_; ++s)
    for (int q = 0; q < num_params_; ++q) {
      const std::size_t base = 2 * (static_cast<std::size_t>(s) * num_params_ + q);
      strip_value_index_[base] = flat_index(s, num_states_ + q);
      strip_value_index_[base + 1] = flat_index(num_states_ + q, s);
    }

  param_value_index_.assign(static_cast<std::size_t>(num_params_) * num_params_, -1);
  for (int q = 0; q < num_params_; ++q) {
    param_value_index_[static_cast<std::size_t>(q) * num_params_ + q] =
        flat_index(num_states_ + q, num_states_ + q);
    for (int j : pattern.param_neighbors[static_cast<std::size_t>(q)])
      param_value_index_[static_cast<std::size_t>(q) * num_params_ + j] =
          flat_index(num_states_ + j, num_states_ + q);
  }

  diag_value_index_.resize(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) diag_value_index_[static_cast<std::size_t>(i)] = flat_index(i, i);
}

void HessianAssembler::assemble(const Objective& objective, const Eigen::VectorXd& point,
                                Eigen::SparseMatrix<double>& out) const {
  if (objective.dimension() != structure_.rows())
    throw std::invalid_argument("objective dimension does not match the pattern");
  if (objective.parameter_count() != num_params_)
    throw std::invalid_argument("objective parameter count does not match the pattern");

  out = structure_;
  double* values = out.valuePtr();

  std::vector<Eigen::VectorXd> products;
  products.reserve(seeds_.size());
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(structure_.rows());
  for (const auto& seed : seeds_) {
    padded.head(num_states_) = seed;
    products.push_back(hessian_vector_product(objective, point, padded));
  }

  for (const auto& e : state_entries_) {
    const double v = products[static_cast<std::size_t>(e.color)](e.row);
    values[e.lower_index] = v;
    values[e.upper_index] = v;
  }

  if (num_params_ > 0) {
    Eigen::MatrixXd strip, pblock;
    objective.parameter_hessian(point, strip, pblock);
    if (strip.rows() != num_states_ || strip.cols() != num_params_ ||
        pblock.rows() != num_params_ || pblock.cols() != num_params_)
      throw std::logic_error("parameter Hessian blocks have unexpected shape");
    for (int s = 0; s < num_states_; ++s)
      for (int q = 0; q < num_params_; ++q) {
        const std::size_t base = 2 * (static_cast<std::size_t>(s) * num_params_ + q);
        values[strip_value_index_[base]] = strip(s, q);
        values[strip_value_index_[base + 1]] = strip(s, q);
      }
    for (int q = 0; q < num_params_; ++q)
      for (int j = 0; j <= q; ++j) {
        const int idx = param_value_index_[static_cast<std::size_t>(q) * num_params_ + j];
        if (idx < 0) continue;
        const double v = pblock(j, q);
        values[idx] = v;
        values[param_value_index_[static_cast<std::size_t>(j) * num_params_ + q]] = v;
      }
  }
}

Eigen::SparseMatrix<double> HessianAssembler::assemble(const Objective& objective,
                                                       const Eigen::VectorXd& point) const {
  Eigen::SparseMatrix<double> out;
  assemble(objective, point, out);
  return out;
}

Eigen::SparseMatrix<double> assemble_hessian(const Objective& objective,
                                             const Eigen::VectorXd& point,
                                             const SparsityPattern& pattern,
                                             const Coloring& coloring) {
  return HessianAssembler(pattern, coloring).assemble(objective, point);
}

void dump_pattern(const SparsityPattern& pattern, const Coloring& coloring, std::ostream& os) {
  for (int i = 0; i < pattern.num_state_vars; ++i)
    for (int j : pattern.state_neighbors[static_cast<std::size_t>(i)])
      if (j > i) os << i << " " << j << "\n";
  for (int i = 0; i < pattern.num_state_vars; ++i)
    os << "color " << i << " " << coloring.colors[static_cast<std::size_t>(i)] << "\n";
}

}  // namespace sysid
