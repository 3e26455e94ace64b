#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sysid/objective.hpp"
#include "sysid/sparse_curvature.hpp"
#include "support/oracles.hpp"
#include "support/toy_objectives.hpp"

#include <random>

using namespace sysid;
using sysid::testing::chain_pattern;
using sysid::testing::valid_star_coloring;

namespace {

struct Instance {
  CandidateLibrary lib;
  StateGrid grid;
  Observations obs;
  CoefficientState coeffs;
  LossWeights weights;
};

Instance random_instance(unsigned seed, int m, int d, bool with_exp, bool masked) {
  Instance inst;
  inst.lib = build_polynomial_library(d, 2, true);
  if (with_exp) add_exponential_term(inst.lib, 0);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);

  Eigen::VectorXd times(m);
  for (int i = 0; i < m; ++i) times(i) = 0.1 * i + 0.02 * std::abs(dist(rng));
  inst.obs.times = times;
  inst.obs.values.resize(m, d);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d; ++c) inst.obs.values(i, c) = dist(rng);
  inst.obs.mask = Eigen::MatrixXi::Ones(m, d);
  inst.obs.mask(0, 0) = 0;

  inst.grid = build_grid(times, 1, d);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d; ++c) inst.grid.values(i, c) = dist(rng);

  inst.coeffs = make_coefficient_state(inst.lib, 0.0, -0.9, true);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < inst.lib.size(); ++k) inst.coeffs.theta(j, k) = 0.4 * dist(rng) + 0.1;
  if (masked) {
    inst.coeffs.mask(0, 0) = 0;
    inst.coeffs.mask(d - 1, 2) = 0;
    inst.coeffs.apply_mask();
  }
  inst.weights = {1.7, 0.4, 0.05};
  return inst;
}

}  // namespace

TEST_CASE("pattern: d=1 single linear term gives a tridiagonal state block") {
  CandidateLibrary lib = build_polynomial_library(1, 1, false);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(1, 1);
  const auto pat = derive_pattern(5, lib, mask);
  CHECK(pat.num_state_vars == 5);
  CHECK(pat.num_param_vars == 1);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const bool expected = std::abs(i - j) <= 1;
      CHECK(pat.state_entry(i, j) == expected);
    }
}

TEST_CASE("pattern: masked-out parameters are absent") {
  CandidateLibrary lib = build_polynomial_library(2, 2, false);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(2, lib.size());
  const auto full = derive_pattern(4, lib, mask);
  mask(1, 3) = 0;
  mask(0, 0) = 0;
  const auto pruned = derive_pattern(4, lib, mask);
  CHECK(full.num_param_vars == 2 * lib.size());
  CHECK(pruned.num_param_vars == 2 * lib.size() - 2);
  // state couplings unchanged by mask edits
  for (int i = 0; i < pruned.num_state_vars; ++i)
    CHECK(pruned.state_neighbors[i] == full.state_neighbors[i]);
}

TEST_CASE("pattern matches the nonzero set of a dense FD Hessian") {
  const Instance inst = random_instance(77, 8, 2, true, true);
  DiscreteLossObjective obj(inst.grid, inst.obs, inst.lib, inst.coeffs.mask, inst.weights, true);
  const Eigen::VectorXd x = obj.pack(inst.grid.values, inst.coeffs);
  const auto pat = obj.sparsity();
  CHECK(pat.dimension() == obj.dimension());

  const Eigen::MatrixXd h_fd = sysid::testing::fd_hessian(obj, x);
  const double scale = h_fd.cwiseAbs().maxCoeff();
  for (int i = 0; i < pat.dimension(); ++i)
    for (int j = 0; j < pat.dimension(); ++j) {
      const bool numeric = std::abs(h_fd(i, j)) > 1e-8 * std::max(1.0, scale);
      if (numeric) CHECK(pat.entry(i, j));
      if (!pat.entry(i, j)) CHECK(std::abs(h_fd(i, j)) <= 1e-8 * std::max(1.0, scale));
    }
}

TEST_CASE("star coloring: diagonal-only patterns need one color") {
  SparsityPattern p;
  p.num_state_vars = 12;
  p.state_neighbors.resize(12);
  const auto coloring = star_coloring(p);
  CHECK(coloring.num_colors == 1);
  CHECK(valid_star_coloring(p, coloring));
}

TEST_CASE("star coloring: tridiagonal pattern uses three colors") {
  const auto p = chain_pattern(100, 1);
  const auto coloring = star_coloring(p);
  CHECK(coloring.num_colors == 3);
  CHECK(valid_star_coloring(p, coloring));
  // two colors cannot star-color a 4-vertex path: every proper 2-coloring of
  // p4 alternates and repeats both colors
  const auto p4 = chain_pattern(4, 1);
  for (int pattern_bits = 0; pattern_bits < 16; ++pattern_bits) {
    Coloring two;
    two.colors = {pattern_bits & 1, (pattern_bits >> 1) & 1, (pattern_bits >> 2) & 1,
                  (pattern_bits >> 3) & 1};
    two.num_colors = 2;
    CHECK(!valid_star_coloring(p4, two));
  }
}

TEST_CASE("star coloring: color count stays constant as the grid grows") {
  const int d = 3;
  int colors_at_50 = 0;
  for (int n : {50, 500, 5000}) {
    const auto p = chain_pattern(n, d);
    const auto coloring = star_coloring(p);
    if (n == 50) colors_at_50 = coloring.num_colors;
    CHECK(coloring.num_colors == colors_at_50);
    if (n <= 500) CHECK(valid_star_coloring(p, coloring));
  }
  CHECK(colors_at_50 <= 3 * d);
}

TEST_CASE("coloring validity on the real pattern, including spot checks at scale") {
  CandidateLibrary lib = build_polynomial_library(3, 2, false);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(3, lib.size());
  const auto pat = derive_pattern(200, lib, mask);
  const auto coloring = star_coloring(pat);
  CHECK(valid_star_coloring(pat, coloring));
}

TEST_CASE("hessian_vector_product: quadratic recovers A v, zero maps to zero") {
  Eigen::MatrixXd a(3, 3);
  a << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  sysid::testing::QuadraticObjective quad(a, Eigen::Vector3d(1, -1, 2));
  const Eigen::Vector3d x(0.3, -0.2, 0.9);
  const Eigen::Vector3d v(1.0, 2.0, -1.0);
  CHECK((hessian_vector_product(quad, x, v) - a * v).norm() == doctest::Approx(0.0));
  CHECK(hessian_vector_product(quad, x, Eigen::Vector3d::Zero()).norm() == doctest::Approx(0.0));
}

TEST_CASE("hessian-vector products of the discrete loss match the FD Hessian") {
  const Instance inst = random_instance(5, 7, 2, true, false);
  DiscreteLossObjective obj(inst.grid, inst.obs, inst.lib, inst.coeffs.mask, inst.weights, true);
  const Eigen::VectorXd x = obj.pack(inst.grid.values, inst.coeffs);
  const Eigen::MatrixXd h_fd = sysid::testing::fd_hessian(obj, x);

  std::mt19937 rng(9);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd v(obj.dimension());
    for (int i = 0; i < v.size(); ++i) v(i) = dist(rng);
    const Eigen::VectorXd hv = hessian_vector_product(obj, x, v);
    CHECK((hv - h_fd * v).norm() / std::max(1.0, (h_fd * v).norm()) < 1e-5);
  }
}

TEST_CASE("assemble: diagonal objective from a single product") {
  Eigen::MatrixXd a = 2.0 * Eigen::MatrixXd::Identity(6, 6);
  sysid::testing::QuadraticObjective quad(a, Eigen::VectorXd::Zero(6));
  const auto pat = quad.sparsity();
  const auto coloring = star_coloring(pat);
  CHECK(coloring.num_colors == 1);
  HessianAssembler assembler(pat, coloring);
  CHECK(assembler.hvps_per_assemble() == 1);
  const auto h = assembler.assemble(quad, Eigen::VectorXd::Zero(6));
  CHECK((Eigen::MatrixXd(h) - a).norm() == doctest::Approx(0.0));
}

TEST_CASE("assemble: discrete-loss Hessian matches dense FD entrywise") {
  for (unsigned seed : {1u, 2u}) {
    const Instance inst = random_instance(seed, 10, 2, seed == 1, seed == 2);
    DiscreteLossObjective obj(inst.grid, inst.obs, inst.lib, inst.coeffs.mask, inst.weights, true);
    const Eigen::VectorXd x = obj.pack(inst.grid.values, inst.coeffs);
    const auto pat = obj.sparsity();
    const auto coloring = star_coloring(pat);
    const Eigen::MatrixXd h = Eigen::MatrixXd(assemble_hessian(obj, x, pat, coloring));
    CHECK((h - h.transpose()).norm() == 0.0);  // symmetric by construction
    const Eigen::MatrixXd h_fd = sysid::testing::fd_hessian(obj, x);
    CHECK((h - h_fd).norm() / h_fd.norm() < 1e-5);
  }
}

TEST_CASE("assemble uses one product per color at every size") {
  CandidateLibrary lib = build_polynomial_library(2, 2, false);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(2, lib.size());
  int expected = -1;
  for (int n : {20, 60, 180}) {
    const auto pat = derive_pattern(n, lib, mask);
    const auto coloring = star_coloring(pat);
    HessianAssembler assembler(pat, coloring);
    CHECK(assembler.hvps_per_assemble() == coloring.num_colors);
    if (expected < 0) expected = coloring.num_colors;
    CHECK(coloring.num_colors == expected);
  }
}

TEST_CASE("mask changes never add state-state nonzeros") {
  CandidateLibrary lib = build_polynomial_library(2, 3, false);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(2, lib.size());
  const auto before = derive_pattern(12, lib, mask);
  std::mt19937 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXi m = mask;
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < lib.size(); ++k)
        if (rng() % 3 == 0) m(j, k) = 0;
    const auto after = derive_pattern(12, lib, m);
    CHECK(after.num_param_vars <= before.num_param_vars);
    for (int i = 0; i < after.num_state_vars; ++i)
      for (int j : after.state_neighbors[i]) CHECK(before.state_entry(i, j));
  }
}

TEST_CASE("pattern dump emits edges and colors") {
  const auto p = chain_pattern(3, 1);
  const auto coloring = star_coloring(p);
  std::ostringstream os;
  dump_pattern(p, coloring, os);
  CHECK(os.str().find("0 1") != std::string::npos);
  CHECK(os.str().find("color 0") != std::string::npos);
}
