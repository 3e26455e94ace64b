// Synthetic-experiment machinery: reference integration of the benchmark
// systems, noise injection with gap/random-drop masks, state standardization,
// and batch benchmark orchestration.

#pragma once

#include "sysid/discrete_model.hpp"
#include "sysid/model_selection.hpp"
#include "sysid/term_library.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sysid {

using RhsFunction = std::function<void(double t, const double* x, double* dxdt)>;

// Embedded Dormand-Prince 4(5) integration sampled exactly at `times`;
// times(0) carries the initial condition.  Errors on step-size underflow.
Eigen::MatrixXd rk45_integrate(const RhsFunction& rhs, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& times, double abs_tol = 1e-12,
                               double rel_tol = 1e-12);

struct BenchmarkSystem {
  std::string name;
  int dim = 0;
  RhsFunction rhs;
  Eigen::VectorXd initial;
  double sample_dt = 0.0;
  int sample_count = 0;  // uniform samples at i * sample_dt, i = 0..count-1
  int library_degree = 0;
  bool include_constant = false;
  std::vector<int> exponential_vars;  // exp(a x_v) columns appended to the library
  bool standardize = false;           // fit against per-component standardized states

  struct TruthEntry {
    int row;
    Term term;
    double value;
  };
  std::vector<TruthEntry> truth;
  double true_inner = 0.0;
};

const BenchmarkSystem& benchmark_system(const std::string& name);
std::vector<std::string> benchmark_names();

Eigen::VectorXd default_sample_times(const BenchmarkSystem& system);
CandidateLibrary default_library(const BenchmarkSystem& system);

// Ground-truth coefficients against `lib`; throws when a truth term is not
// representable (insufficient library).
Eigen::MatrixXd true_coefficients(const BenchmarkSystem& system, const CandidateLibrary& lib);
Eigen::VectorXd true_inner_params(const BenchmarkSystem& system, const CandidateLibrary& lib);

struct NoiseSpec {
  double fraction = 0.0;  // sigma = fraction * componentwise std of the clean data
  std::uint64_t seed = 0;
  enum class Drop { None, Gap, Random } drop = Drop::None;
  double gap_start = 0.0;  // Drop::Gap removes samples with gap_start <= t < gap_end
  double gap_end = 0.0;
  double drop_fraction = 0.0;  // Drop::Random removes each scalar entry independently
};

Observations add_noise_and_drop(const Eigen::VectorXd& times, const Eigen::MatrixXd& clean,
                                const NoiseSpec& spec);

// Gap-filled initial states at the observation times: per-component linear
// interpolation with constant extrapolation at the ends.
Eigen::MatrixXd initial_state(const Observations& obs);

// Per-component scaling x / std(x) over available entries; errors on a
// (numerically) zero variance.
std::pair<Observations, Eigen::VectorXd> standardize_states(const Observations& obs);

// Deterministic per-run stream derivation from one master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t noise_index,
                          std::uint64_t realization);

struct BenchmarkConfig {
  std::string system;
  std::vector<double> noise_levels;
  int num_seeds = 20;
  std::uint64_t master_seed = 0;
  NoiseSpec::Drop drop = NoiseSpec::Drop::None;
  double gap_start = 0.0;
  double gap_end = 0.0;
  double drop_fraction = 0.0;
  double sample_dt = 0.0;   // 0 = system default
  int sample_count = 0;     // 0 = system default
  int library_degree = 0;   // 0 = system default
  int include_constant = -1;  // -1 = system default
  SearchConfig search;
  int run_workers = 1;
};

struct RunRecord {
  std::string system;
  double noise = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double lambda = 0.0;
  double sparsity_weight = 0.0;
  double re_theta = 0.0;
  double re_u = 0.0;
  double tpr = 0.0;
  double ic = 0.0;
  int selection_iters = 0;
  double wall_seconds = 0.0;
  CoefficientState model;  // original units
  SelectionTrace trace;    // winning cell
};

// Seeds and noise levels run concurrently; per-run failures are recorded and
// the batch continues.
std::vector<RunRecord> run_benchmark(const BenchmarkConfig& config);

// Box-plot style aggregation.
struct Summary {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_lo = 0.0;
  double whisker_hi = 0.0;
  int count = 0;
};
Summary summarize(std::vector<double> values);

}  // namespace sysid
