#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sysid/experiment_harness.hpp"
#include "sysid/model_selection.hpp"
#include "sysid/objective.hpp"

#include <cmath>
#include <sstream>

using namespace sysid;

namespace {

Observations full_observations(const Eigen::VectorXd& times, const Eigen::MatrixXd& values) {
  Observations obs;
  obs.times = times;
  obs.values = values;
  obs.mask = Eigen::MatrixXi::Ones(values.rows(), values.cols());
  return obs;
}

// Harmonic oscillator data: x = sin t, y = cos t solves dx/dt = y,
// dy/dt = -x.  A little noise keeps the information criterion in its
// intended regime; on exact data every junk term shrinks the (already
// machine-small) fit by whole factors.
Observations oscillator_data(int m, double t_end, double noise = 0.01) {
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(m, 0.0, t_end);
  Eigen::MatrixXd values(m, 2);
  for (int i = 0; i < m; ++i) {
    values(i, 0) = std::sin(times(i));
    values(i, 1) = std::cos(times(i));
  }
  NoiseSpec spec;
  spec.fraction = noise;
  spec.seed = 2024;
  return add_noise_and_drop(times, values, spec);
}

struct Ready {
  CandidateLibrary lib;
  StateGrid grid;
  CoefficientState init;
};

Ready prepare(const Observations& obs, int degree, bool include_constant) {
  Ready r;
  CandidateLibrary raw = build_polynomial_library(obs.state_dim(), degree, include_constant);
  r.grid = build_grid(obs.times, 1, obs.state_dim());
  r.grid.values = interpolate_onto_grid(obs, r.grid.times);
  r.lib = normalize_library(raw, r.grid.values, Eigen::VectorXd());
  r.init = make_coefficient_state(r.lib, 1.0, 1.0, true);
  return r;
}

int support_index(const CandidateLibrary& lib, std::vector<int> exps) {
  for (int k = 0; k < lib.size(); ++k)
    if (lib.terms[k].kind == TermKind::Monomial && lib.terms[k].exponents == exps) return k;
  return -1;
}

}  // namespace

TEST_CASE("bic formula and edge cases") {
  CHECK(bic(3, 2.0, 100) == doctest::Approx(3.0 * std::log(100.0) + 100.0 * std::log(2.0)));
  CHECK(bic(3, 2.0, 100) == doctest::Approx(83.130).epsilon(1e-4));
  // one extra parameter at identical fit costs ln(n_hat)
  CHECK(bic(4, 2.0, 100) - bic(3, 2.0, 100) == doctest::Approx(std::log(100.0)));
  CHECK(bic(0, 1.0, 50) == doctest::Approx(0.0));
  CHECK_THROWS(bic(1, -1.0, 10));
  CHECK_THROWS(bic(1, 1.0, 0));
  CHECK(bic(0, 0.0, 10) < -1000.0);  // floored perfect fit
  CHECK(information_criterion(Criterion::Aic, 3, 2.0, 100) ==
        doctest::Approx(6.0 + 100.0 * std::log(2.0)));
}

TEST_CASE("metrics: exact recovery, scaling, and support counting") {
  Eigen::MatrixXd theta_true(2, 3);
  theta_true << 1.0, 0.0, -2.0, 0.0, 0.5, 0.0;
  Eigen::MatrixXd u = Eigen::MatrixXd::Random(5, 2);

  const auto exact = metrics(theta_true, theta_true, u, u);
  CHECK(exact.re_theta == doctest::Approx(0.0));
  CHECK(exact.re_u == doctest::Approx(0.0));
  CHECK(exact.tpr == doctest::Approx(1.0));

  const auto doubled = metrics(2.0 * theta_true, theta_true, u, u);
  CHECK(doubled.re_theta == doctest::Approx(1.0));
  CHECK(doubled.tpr == doctest::Approx(1.0));

  Eigen::MatrixXd spurious = theta_true;
  spurious(0, 1) = 0.01;  // one false positive, three true positives
  const auto sp = metrics(spurious, theta_true, u, u);
  CHECK(sp.tp == 3);
  CHECK(sp.fn == 0);
  CHECK(sp.fp == 1);
  CHECK(sp.tpr == doctest::Approx(0.75));

  CHECK_THROWS(metrics(theta_true, Eigen::MatrixXd::Zero(2, 3), u, u));
}

TEST_CASE("select_model recovers the harmonic oscillator support from clean data") {
  const Observations obs = oscillator_data(121, 6.0);
  Ready r = prepare(obs, 2, false);  // terms x, y, x2, xy, y2

  LossWeights w{10.0, 1e-2, 0.01};
  LMConfig lm;
  lm.max_iters = 300;
  const auto out = select_model(obs, r.lib, r.grid, r.init, w, 5, lm);
  REQUIRE(out.success);

  // exact support: dx/dt = y, dy/dt = -x
  const int ix = support_index(r.lib, {1, 0});
  const int iy = support_index(r.lib, {0, 1});
  Eigen::MatrixXi want = Eigen::MatrixXi::Zero(2, r.lib.size());
  want(0, iy) = 1;
  want(1, ix) = 1;
  CHECK(out.coeffs.mask == want);

  // coefficients close to 1 and -1 after undoing normalization
  const auto plain = rescale_coefficients(out.coeffs, r.lib);
  CHECK(plain.theta(0, iy) == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(plain.theta(1, ix) == doctest::Approx(-1.0).epsilon(1e-2));

  // trace semantics
  CHECK(static_cast<int>(out.trace.iterations.size()) <= out.trace.iteration_cap);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& it : out.trace.iterations) {
    if (it.accepted) {
      CHECK(it.ic < best);
      best = it.ic;
    }
    CHECK(it.mask.rows() == 2);
  }
  CHECK(out.ic == doctest::Approx(best));

  // masked coefficients are exactly zero
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < r.lib.size(); ++k)
      if (out.coeffs.mask(j, k) == 0) CHECK(out.coeffs.theta(j, k) == 0.0);
}

TEST_CASE("with R = 0 the first solve is plain hybrid regression") {
  const Observations obs = oscillator_data(61, 5.0);
  Ready r = prepare(obs, 2, false);
  LossWeights w{5.0, 0.0, 0.01};
  LMConfig lm;
  lm.max_iters = 300;

  // direct unpenalized minimization under the full mask
  Eigen::MatrixXi full = Eigen::MatrixXi::Ones(2, r.lib.size());
  DiscreteLossObjective obj(r.grid, obs, r.lib, full, w, false);
  const auto direct = minimize(obj, obj.pack(r.grid.values, r.init), lm);
  Eigen::MatrixXd u_direct;
  CoefficientState c_direct;
  obj.unpack(direct.x, u_direct, c_direct);
  StateGrid g = r.grid;
  g.values = u_direct;
  const double fit_direct = unnormalized_fit(g, obs, r.lib, c_direct, w.lambda);

  const auto out = select_model(obs, r.lib, r.grid, r.init, w, 5, lm);
  REQUIRE(!out.trace.iterations.empty());
  CHECK(out.trace.iterations.front().fit == doctest::Approx(fit_direct).epsilon(1e-10));
}

TEST_CASE("selection bound: cap matches the printed formula for p = 57") {
  CandidateLibrary raw = build_polynomial_library(3, 3, false);
  REQUIRE(raw.size() * 3 == 57);
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(10, 0.0, 0.9);
  Eigen::MatrixXd vals = Eigen::MatrixXd::Random(10, 3);
  const Observations obs = full_observations(times, vals);
  Ready r;
  r.grid = build_grid(obs.times, 1, 3);
  r.grid.values = interpolate_onto_grid(obs, r.grid.times);
  r.lib = normalize_library(raw, r.grid.values, Eigen::VectorXd());
  r.init = make_coefficient_state(r.lib, 1.0, 1.0, true);
  LMConfig lm;
  lm.max_iters = 40;  // rough solves are enough to exercise the loop
  const auto out = select_model(obs, r.lib, r.grid, r.init, {1.0, 1e-2, 0.01}, 5, lm);
  CHECK(out.trace.iteration_cap == 18);
  CHECK(static_cast<int>(out.trace.iterations.size()) <= 18);
}

TEST_CASE("a rejected fine forward step triggers backward recovery") {
  // Van der Pol at 10% noise with k0 = 7: the 14 inactive coefficients fall
  // in two accepted block prunes, the third block empties the model and is
  // rejected, the single-term prune of a needed term is rejected too, and
  // recovery re-adds a term from the 11-coefficient reference solve, which
  // costs more ic and ends the loop.
  const auto& sys = benchmark_system("vdp");
  const Eigen::VectorXd times = default_sample_times(sys);
  const Eigen::MatrixXd clean = rk45_integrate(sys.rhs, sys.initial, times);
  NoiseSpec spec;
  spec.fraction = 0.10;
  spec.seed = 1234;
  const Observations obs = add_noise_and_drop(times, clean, spec);

  Ready r = prepare(obs, 3, false);
  LossWeights w{10.0, 1e-2, 0.01};
  LMConfig lm;
  lm.max_iters = 400;
  const auto out = select_model(obs, r.lib, r.grid, r.init, w, 7, lm);
  REQUIRE(out.success);

  bool saw_backward = false;
  for (const auto& it : out.trace.iterations)
    if (it.mode == 'b') saw_backward = true;
  CHECK(saw_backward);
  CHECK(out.trace.termination == "recovery rejected");
  CHECK(out.coeffs.active_count() == 4);

  Eigen::MatrixXi want = Eigen::MatrixXi::Zero(2, r.lib.size());
  want(0, support_index(r.lib, {0, 1})) = 1;
  want(1, support_index(r.lib, {1, 0})) = 1;
  want(1, support_index(r.lib, {0, 1})) = 1;
  want(1, support_index(r.lib, {2, 1})) = 1;
  CHECK(out.coeffs.mask == want);
}

TEST_CASE("hyperparameter search ranks cells and holds out every third row") {
  const Observations obs = oscillator_data(91, 6.0);
  CandidateLibrary raw = build_polynomial_library(2, 2, false);

  SearchConfig cfg;
  cfg.grid.lambdas = {1.0, 100.0};
  cfg.grid.sparsity_weights = {1e-3, 1e-2};
  cfg.lm.max_iters = 300;
  cfg.workers = 2;
  const auto outcome = hyperparameter_search(obs, raw, cfg);

  const int expected_held_out = (91 - cfg.grid.validation_offset + 2) / 3;
  CHECK(static_cast<int>(outcome.validation_rows.size()) == expected_held_out);
  for (int s : outcome.validation_rows) CHECK(s % 3 == 2);
  CHECK(outcome.training_count == (91 - expected_held_out) * 2);

  REQUIRE(!outcome.ranked.empty());
  CHECK(outcome.ranked.size() == 4);
  for (std::size_t i = 0; i + 1 < outcome.ranked.size(); ++i)
    if (outcome.ranked[i].ok && outcome.ranked[i + 1].ok)
      CHECK(outcome.ranked[i].validation_error <= outcome.ranked[i + 1].validation_error);

  // noise-free data: exact support in most cells
  const int ix = support_index(outcome.normalized_library, {1, 0});
  const int iy = support_index(outcome.normalized_library, {0, 1});
  int exact = 0;
  for (const auto& cell : outcome.ranked) {
    if (!cell.ok) continue;
    Eigen::MatrixXi want = Eigen::MatrixXi::Zero(2, outcome.normalized_library.size());
    want(0, iy) = 1;
    want(1, ix) = 1;
    if (cell.model.coeffs.mask == want) ++exact;
  }
  CHECK(exact >= 2);
  // the winning cell always keeps the true support
  const auto& winner = outcome.ranked.front().model.coeffs;
  CHECK(winner.mask(0, iy) == 1);
  CHECK(winner.mask(1, ix) == 1);
}

TEST_CASE("trace and cell tables export as CSV") {
  const Observations obs = oscillator_data(31, 3.0);
  Ready r = prepare(obs, 2, false);
  LMConfig lm;
  lm.max_iters = 100;
  const auto out = select_model(obs, r.lib, r.grid, r.init, {1.0, 1e-3, 0.01}, 3, lm);
  std::ostringstream os;
  write_selection_trace_csv(out.trace, os);
  CHECK(os.str().rfind("iter,mode,k,active,fit,ic,accepted,mask", 0) == 0);

  std::vector<CellResult> cells(1);
  cells[0].lambda = 1.0;
  cells[0].sparsity_weight = 0.1;
  cells[0].model = out;
  cells[0].ok = out.success;
  std::ostringstream os2;
  write_cells_csv(cells, os2);
  CHECK(os2.str().find("rank,lambda,r,ok") == 0);
}

TEST_CASE("default grid is the 35-cell sweep") {
  const auto g = default_hyper_grid();
  CHECK(g.lambdas.size() == 7);
  CHECK(g.sparsity_weights.size() == 5);
  CHECK(g.lambdas.front() == doctest::Approx(1e-3));
  CHECK(g.lambdas.back() == doctest::Approx(1e3));
  CHECK(g.sparsity_weights.front() == doctest::Approx(1e-4));
  CHECK(g.sparsity_weights.back() == doctest::Approx(1.0));
}
