#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sysid/experiment_harness.hpp"

#include <cmath>
#include <random>

using namespace sysid;

TEST_CASE("rk45: trivial flows") {
  RhsFunction zero = [](double, const double*, double* f) { f[0] = 0.0; };
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(11, 0.0, 2.0);
  Eigen::VectorXd x0(1);
  x0 << 1.5;
  const auto traj = rk45_integrate(zero, x0, times);
  for (int i = 0; i < 11; ++i) CHECK(traj(i, 0) == doctest::Approx(1.5));

  RhsFunction decay = [](double, const double* x, double* f) { f[0] = -x[0]; };
  Eigen::VectorXd tt(2);
  tt << 0.0, 1.0;
  Eigen::VectorXd one(1);
  one << 1.0;
  const auto e = rk45_integrate(decay, one, tt);
  CHECK(std::abs(e(1, 0) - std::exp(-1.0)) < 1e-10);
}

TEST_CASE("rk45: lorenz self-convergence under tolerance halving") {
  // Chaotic amplification bounds how close two tolerance levels can stay
  // over ten time units; the frozen bound reflects the measured 1.5e-6
  // with margin.  Lyapunov growth makes a much tighter bound unattainable
  // for any integrator at these tolerances.
  const auto& sys = benchmark_system("lorenz");
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(101, 0.0, 10.0);
  const auto a = rk45_integrate(sys.rhs, sys.initial, times, 1e-12, 1e-12);
  const auto b = rk45_integrate(sys.rhs, sys.initial, times, 5e-13, 5e-13);
  CHECK((a - b).cwiseAbs().maxCoeff() < 5e-6);
  // over the first half of the horizon the agreement is far tighter
  CHECK((a - b).topRows(51).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("benchmark systems: right-hand sides match the coefficient tables") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (const auto& name : benchmark_names()) {
    const auto& sys = benchmark_system(name);
    const auto lib = default_library(sys);
    const auto theta = true_coefficients(sys, lib);
    const auto inner = true_inner_params(sys, lib);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd x(sys.dim);
      for (int i = 0; i < sys.dim; ++i) x(i) = dist(rng);
      Eigen::VectorXd f(sys.dim);
      sys.rhs(0.0, x.data(), f.data());
      const auto terms = evaluate_terms(lib, x, inner);
      for (int j = 0; j < sys.dim; ++j) {
        const double fit = (theta.row(j) * terms)(0);
        CHECK(std::abs(fit - f(j)) < 1e-12 * std::max(1.0, std::abs(f(j))));
      }
    }
  }
}

TEST_CASE("data counts reproduce the benchmark defaults exactly") {
  struct Expect {
    const char* name;
    int steps;
    int points;
  };
  for (const auto& e : {Expect{"vdp", 501, 1002}, Expect{"lorenz", 501, 1503},
                        Expect{"lorenz96", 251, 1255}, Expect{"colpitts", 500, 1500}}) {
    const auto& sys = benchmark_system(e.name);
    const auto times = default_sample_times(sys);
    CHECK(times.size() == e.steps);
    CHECK(static_cast<int>(times.size()) * sys.dim == e.points);
  }
}

TEST_CASE("noise injection: reproducibility, zero level, and target deviation") {
  const auto& sys = benchmark_system("vdp");
  const auto times = default_sample_times(sys);
  const auto clean = rk45_integrate(sys.rhs, sys.initial, times);

  NoiseSpec none;
  none.fraction = 0.0;
  none.seed = 5;
  const auto clean_obs = add_noise_and_drop(times, clean, none);
  CHECK((clean_obs.values - clean).cwiseAbs().maxCoeff() == 0.0);
  CHECK(clean_obs.available_count() == 1002);

  NoiseSpec spec;
  spec.fraction = 0.2;
  spec.seed = 42;
  const auto a = add_noise_and_drop(times, clean, spec);
  const auto b = add_noise_and_drop(times, clean, spec);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  spec.seed = 43;
  const auto c = add_noise_and_drop(times, clean, spec);
  CHECK((a.values - c.values).cwiseAbs().maxCoeff() > 0.0);

  // empirical noise deviation within 5% of the target per component
  for (int comp = 0; comp < 2; ++comp) {
    const double mean = clean.col(comp).mean();
    const double sd = std::sqrt((clean.col(comp).array() - mean).square().mean());
    const double target = 0.2 * sd;
    const Eigen::VectorXd delta = a.values.col(comp) - clean.col(comp);
    const double got = std::sqrt(delta.squaredNorm() / delta.size());
    CHECK(std::abs(got - target) / target < 0.05);
  }
}

TEST_CASE("continuous gap: the vdp counts after removal") {
  const auto& sys = benchmark_system("vdp");
  Eigen::VectorXd times(251);
  for (int i = 0; i < 251; ++i) times(i) = i * 0.04;
  const auto clean = rk45_integrate(sys.rhs, sys.initial, times);
  NoiseSpec spec;
  spec.fraction = 0.1;
  spec.seed = 7;
  spec.drop = NoiseSpec::Drop::Gap;
  spec.gap_start = 4.0;
  spec.gap_end = 6.0;
  const auto obs = add_noise_and_drop(times, clean, spec);
  CHECK(obs.available_count() == 402);
  CHECK(obs.rows_with_data() == 201);
  for (int s = 0; s < obs.sample_count(); ++s) {
    const bool in_gap = times(s) >= 4.0 && times(s) < 6.0;
    CHECK(obs.mask.row(s).sum() == (in_gap ? 0 : 2));
  }
}

TEST_CASE("random drop: availability near the expected fraction") {
  const auto& sys = benchmark_system("lorenz");
  const auto times = default_sample_times(sys);
  const auto clean = rk45_integrate(sys.rhs, sys.initial, times);
  NoiseSpec spec;
  spec.fraction = 0.2;
  spec.seed = 9;
  spec.drop = NoiseSpec::Drop::Random;
  spec.drop_fraction = 0.3;
  const auto obs = add_noise_and_drop(times, clean, spec);
  const double kept = static_cast<double>(obs.available_count()) / 1503.0;
  CHECK(kept > 0.66);
  CHECK(kept < 0.74);
  NoiseSpec bad;
  bad.drop = NoiseSpec::Drop::Random;
  bad.drop_fraction = 1.0;
  CHECK_THROWS(add_noise_and_drop(times, clean, bad));
}

TEST_CASE("initial_state: identity on full data, interpolation across gaps") {
  Observations obs;
  obs.times = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  obs.values = Eigen::MatrixXd(5, 1);
  obs.values << 0.0, 0.5, 99.0, 1.5, 2.0;
  obs.mask = Eigen::MatrixXi::Ones(5, 1);

  const auto full = initial_state(obs);
  CHECK((full - obs.values).cwiseAbs().maxCoeff() == 0.0);

  obs.mask(2, 0) = 0;  // the 99 never enters
  const auto filled = initial_state(obs);
  CHECK(filled(2, 0) == doctest::Approx(1.0));
  CHECK(filled.allFinite());
  for (int s = 0; s < 5; ++s)
    if (obs.mask(s, 0) != 0) CHECK(filled(s, 0) == obs.values(s, 0));

  Observations starved = obs;
  starved.mask.setZero();
  starved.mask(0, 0) = 1;
  CHECK_THROWS(initial_state(starved));
}

TEST_CASE("gap-filled vdp trajectory is finite and matches available samples") {
  const auto& sys = benchmark_system("vdp");
  Eigen::VectorXd times(251);
  for (int i = 0; i < 251; ++i) times(i) = i * 0.04;
  const auto clean = rk45_integrate(sys.rhs, sys.initial, times);
  NoiseSpec spec;
  spec.fraction = 0.1;
  spec.seed = 3;
  spec.drop = NoiseSpec::Drop::Gap;
  spec.gap_start = 4.0;
  spec.gap_end = 6.0;
  const auto obs = add_noise_and_drop(times, clean, spec);
  const auto filled = initial_state(obs);
  CHECK(filled.allFinite());
  for (int s = 0; s < obs.sample_count(); ++s)
    for (int c = 0; c < 2; ++c)
      if (obs.mask(s, c) != 0) CHECK(filled(s, c) == obs.values(s, c));
}

TEST_CASE("standardization: unit deviation and coefficient back-transform") {
  const auto& sys = benchmark_system("colpitts");
  const auto times = default_sample_times(sys);
  const auto clean = rk45_integrate(sys.rhs, sys.initial, times);
  NoiseSpec spec;
  spec.fraction = 0.0;
  spec.seed = 1;
  const auto obs = add_noise_and_drop(times, clean, spec);
  const auto [std_obs, scales] = standardize_states(obs);

  for (int c = 0; c < 3; ++c) {
    const double mean = std_obs.values.col(c).mean();
    const double sd = std::sqrt((std_obs.values.col(c).array() - mean).square().mean());
    CHECK(sd == doctest::Approx(1.0).epsilon(1e-12));
  }

  // scale the true model into standardized units and invert it again
  auto lib = default_library(sys);
  CoefficientState truth = make_coefficient_state(lib, 0.0, 0.0, false);
  truth.theta = true_coefficients(sys, lib);
  truth.inner = true_inner_params(sys, lib);
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < lib.size(); ++k) truth.mask(j, k) = truth.theta(j, k) != 0.0 ? 1 : 0;
  const auto fwd = scale_coefficients(truth, lib, scales);
  const auto back = rescale_coefficients(fwd, lib, scales);
  CHECK((back.theta - truth.theta).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(back.inner(0) - truth.inner(0)) < 1e-12);

  // standardized truth reproduces the standardized dynamics
  Eigen::VectorXd x = clean.row(123).transpose();
  Eigen::VectorXd f(3);
  sys.rhs(0.0, x.data(), f.data());
  Eigen::VectorXd xbar = x.cwiseQuotient(scales);
  const auto terms = evaluate_terms(lib, xbar, fwd.inner);
  for (int j = 0; j < 3; ++j)
    CHECK((fwd.theta.row(j) * terms)(0) == doctest::Approx(f(j) / scales(j)).epsilon(1e-9));

  Observations flat = obs;
  flat.values.col(1).setConstant(2.0);
  CHECK_THROWS(standardize_states(flat));
}

TEST_CASE("seed derivation separates streams deterministically") {
  CHECK(derive_seed(1, 0, 0) == derive_seed(1, 0, 0));
  CHECK(derive_seed(1, 0, 0) != derive_seed(1, 0, 1));
  CHECK(derive_seed(1, 0, 0) != derive_seed(1, 1, 0));
  CHECK(derive_seed(1, 0, 0) != derive_seed(2, 0, 0));
}

TEST_CASE("summarize computes box-plot statistics") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0, 100.0});
  CHECK(s.median == doctest::Approx(3.0));
  CHECK(s.q1 == doctest::Approx(2.0));
  CHECK(s.q3 == doctest::Approx(4.0));
  CHECK(s.whisker_lo == doctest::Approx(1.0));
  CHECK(s.whisker_hi == doctest::Approx(4.0));  // 100 is an outlier
  CHECK(s.count == 5);
  CHECK(summarize({}).count == 0);
}

TEST_CASE("run_benchmark: per-run records on a tiny configuration") {
  BenchmarkConfig cfg;
  cfg.system = "vdp";
  cfg.noise_levels = {0.05};
  cfg.num_seeds = 2;
  cfg.master_seed = 10;
  cfg.search.grid.lambdas = {10.0, 100.0};
  cfg.search.grid.sparsity_weights = {1e-2};
  cfg.search.lm.max_iters = 250;
  cfg.run_workers = 2;
  const auto records = run_benchmark(cfg);
  REQUIRE(records.size() == 2);
  for (const auto& rec : records) {
    CHECK(rec.ok);
    CHECK(rec.system == "vdp");
    CHECK(rec.noise == doctest::Approx(0.05));
    CHECK(rec.tpr == doctest::Approx(1.0));
    CHECK(rec.re_theta < 0.1);
    CHECK(rec.re_u < 0.05);
    CHECK(rec.selection_iters <= rec.trace.iteration_cap);
    CHECK(!rec.model.scaled);  // reported in original units
  }
  CHECK(records[0].seed != records[1].seed);
}
