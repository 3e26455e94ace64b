// Hessian sparsity structure induced by the midpoint stencil, greedy star
// coloring of the state-interaction graph, and exact Hessian assembly from
// colored Hessian-vector products plus directly computed parameter blocks.

#pragma once

#include "sysid/term_library.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <iosfwd>
#include <vector>

namespace sysid {

class Objective;

// Symmetric sparsity structure over the optimization variables.  The leading
// num_state_vars variables carry the banded stencil couplings; the trailing
// num_param_vars variables couple densely with every state (the strip) and
// among themselves per param_neighbors.  Diagonal entries are always
// structurally present (data and penalty contributions).
struct SparsityPattern {
  int num_state_vars = 0;
  int num_param_vars = 0;
  std::vector<std::vector<int>> state_neighbors;  // sorted, self excluded
  std::vector<std::vector<int>> param_neighbors;  // sorted, self excluded

  int dimension() const { return num_state_vars + num_param_vars; }
  bool state_entry(int i, int j) const;
  // Structural test over the full matrix (states, strip, parameter block).
  bool entry(int i, int j) const;
  std::size_t structural_nonzeros() const;
};

// Pattern of the discrete loss for a grid of `grid_size` points: per-interval
// 2d x 2d state couplings, a dense state-parameter strip for every active
// coefficient and inner parameter, and per-equation parameter blocks.
SparsityPattern derive_pattern(int grid_size, const CandidateLibrary& lib,
                               const Eigen::MatrixXi& mask);

struct Coloring {
  std::vector<int> colors;            // per state variable
  int num_colors = 0;
  std::vector<Eigen::VectorXd> seeds; // binary seed vectors, one per color
};

// Greedy approximate star coloring: vertices in natural order, each taking
// the smallest color that violates neither properness nor the star condition
// (no two-colored path on four vertices) against already-colored vertices.
Coloring star_coloring(const SparsityPattern& pattern);

// Exact Hessian-vector product of the objective at `point`; errors on
// non-finite results.
Eigen::VectorXd hessian_vector_product(const Objective& objective, const Eigen::VectorXd& point,
                                       const Eigen::VectorXd& v);

// Reusable assembler: one Hessian-vector product per color recovers the state
// block; the strip and parameter blocks are filled from the objective's
// direct second derivatives.  The assembled matrix is symmetric by
// construction; an unrecoverable entry (coloring bug) is a hard error.
class HessianAssembler {
 public:
  HessianAssembler(const SparsityPattern& pattern, const Coloring& coloring);

  void assemble(const Objective& objective, const Eigen::VectorXd& point,
                Eigen::SparseMatrix<double>& out) const;
  Eigen::SparseMatrix<double> assemble(const Objective& objective,
                                       const Eigen::VectorXd& point) const;

  // Seed products performed per assemble call (== number of colors).
  int hvps_per_assemble() const { return static_cast<int>(seeds_.size()); }
  const std::vector<int>& diagonal_value_indices() const { return diag_value_index_; }

 private:
  struct StateEntry {
    int row;          // matrix row whose seed product holds the value
    int color;        // seed color to read from
    int lower_index;  // flat indices into the compressed value array
    int upper_index;  // == lower_index on the diagonal
  };

  int num_states_ = 0;
  int num_params_ = 0;
  std::vector<Eigen::VectorXd> seeds_;
  Eigen::SparseMatrix<double> structure_;  // full symmetric structure, zero values
  std::vector<StateEntry> state_entries_;
  std::vector<int> strip_value_index_;     // (s, q) row-major -> [lower, upper] pairs
  std::vector<int> param_value_index_;     // param block entries, with -1 holes
  std::vector<int> diag_value_index_;      // diagonal positions, full dimension
};

// One-shot convenience wrapper.
Eigen::SparseMatrix<double> assemble_hessian(const Objective& objective,
                                             const Eigen::VectorXd& point,
                                             const SparsityPattern& pattern,
                                             const Coloring& coloring);

// Debug dump: one "i j" line per state edge, then "color i c" lines.
void dump_pattern(const SparsityPattern& pattern, const Coloring& coloring, std::ostream& os);

}  // namespace sysid
