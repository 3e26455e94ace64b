#include "sysid/experiment_harness.hpp"

#include "sysid/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace sysid {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

Eigen::MatrixXd rk45_integrate(const RhsFunction& rhs, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& times, double abs_tol, double rel_tol) {
  const int m = static_cast<int>(times.size());
  const int d = static_cast<int>(x0.size());
  if (m < 1) throw std::invalid_argument("need at least one sample time");
  for (int i = 0; i + 1 < m; ++i)
    if (!(times(i + 1) > times(i))) throw std::invalid_argument("sample times must increase");

  Eigen::MatrixXd out(m, d);
  out.row(0) = x0.transpose();

  Eigen::VectorXd y = x0, ynew(d), yerr(d);
  Eigen::VectorXd k1(d), k2(d), k3(d), k4(d), k5(d), k6(d), k7(d);
  double t = times(0);
  rhs(t, y.data(), k1.data());
  double h = m > 1 ? (times(1) - times(0)) / 16.0 : 0.0;
  double facold = 1e-4;  // step-size stabilization memory

  for (int s = 1; s < m; ++s) {
    const double t_target = times(s);
    while (t < t_target) {
      h = std::min(h, t_target - t);
      if (!(h > 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))))
        throw std::runtime_error("step size underflow in the reference integrator");

      ynew = y + h * a21 * k1;
      rhs(t + c2 * h, ynew.data(), k2.data());
      ynew = y + h * (a31 * k1 + a32 * k2);
      rhs(t + c3 * h, ynew.data(), k3.data());
      ynew = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
      rhs(t + c4 * h, ynew.data(), k4.data());
      ynew = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
      rhs(t + c5 * h, ynew.data(), k5.data());
      ynew = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      rhs(t + h, ynew.data(), k6.data());
      ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      rhs(t + h, ynew.data(), k7.data());
      yerr = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

      double err = 0.0;
      for (int i = 0; i < d; ++i) {
        const double sc = abs_tol + rel_tol * std::max(std::abs(y(i)), std::abs(ynew(i)));
        const double r = yerr(i) / sc;
        err += r * r;
      }
      err = std::sqrt(err / d);

      constexpr double beta = 0.04, safe = 0.9, fac_min = 0.2, fac_max = 5.0;
      const double fac11 = std::pow(std::max(err, 1e-32), 0.2 - beta * 0.75);
      if (err <= 1.0) {
        t += h;
        y.swap(ynew);
        k1.swap(k7);  // first-same-as-last
        const double fac = fac11 / std::pow(facold, beta);
        h /= std::clamp(fac / safe, 1.0 / fac_max, 1.0 / fac_min);
        facold = std::max(err, 1e-4);
      } else {
        h /= std::min(fac11 / safe, 1.0 / fac_min);
      }
    }
    out.row(s) = y.transpose();
  }
  return out;
}

namespace {

Term mono(std::initializer_list<int> exps) {
  Term t;
  t.kind = TermKind::Monomial;
  t.exponents = exps;
  return t;
}

Term mono_vec(std::vector<int> exps) {
  Term t;
  t.kind = TermKind::Monomial;
  t.exponents = std::move(exps);
  return t;
}

std::map<std::string, BenchmarkSystem> build_systems() {
  std::map<std::string, BenchmarkSystem> reg;

  {
    BenchmarkSystem s;
    s.name = "vdp";
    s.dim = 2;
    const double mu = 2.0;
    s.rhs = [mu](double, const double* x, double* f) {
      f[0] = x[1];
      f[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
    };
    s.initial = Eigen::Vector2d(0.0, 2.0);
    s.sample_dt = 0.02;
    s.sample_count = 501;
    s.library_degree = 3;
    s.include_constant = false;
    s.truth = {{0, mono({0, 1}), 1.0},
               {1, mono({1, 0}), -1.0},
               {1, mono({0, 1}), mu},
               {1, mono({2, 1}), -mu}};
    reg[s.name] = s;
  }

  {
    BenchmarkSystem s;
    s.name = "lorenz";
    s.dim = 3;
    const double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
    s.rhs = [sigma, rho, beta](double, const double* x, double* f) {
      f[0] = sigma * (x[1] - x[0]);
      f[1] = x[0] * (rho - x[2]) - x[1];
      f[2] = x[0] * x[1] - beta * x[2];
    };
    s.initial = Eigen::Vector3d(-8.0, 8.0, 27.0);
    s.sample_dt = 0.02;
    s.sample_count = 501;
    s.library_degree = 3;
    s.include_constant = false;
    s.truth = {{0, mono({1, 0, 0}), -sigma}, {0, mono({0, 1, 0}), sigma},
               {1, mono({1, 0, 0}), rho},    {1, mono({0, 1, 0}), -1.0},
               {1, mono({1, 0, 1}), -1.0},   {2, mono({1, 1, 0}), 1.0},
               {2, mono({0, 0, 1}), -beta}};
    reg[s.name] = s;
  }

  {
    BenchmarkSystem s;
    s.name = "lorenz96";
    s.dim = 5;
    const double forcing = 8.0;
    const int n = 5;
    s.rhs = [forcing, n](double, const double* x, double* f) {
      for (int i = 0; i < n; ++i) {
        const int ip1 = (i + 1) % n;
        const int im1 = (i - 1 + n) % n;
        const int im2 = (i - 2 + n) % n;
        f[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
      }
    };
    s.initial = Eigen::VectorXd::Constant(5, forcing);
    s.initial(0) += 0.01;
    s.sample_dt = 0.04;
    s.sample_count = 251;
    s.library_degree = 2;
    s.include_constant = true;
    for (int i = 0; i < n; ++i) {
      const int ip1 = (i + 1) % n;
      const int im1 = (i - 1 + n) % n;
      const int im2 = (i - 2 + n) % n;
      std::vector<int> lin(5, 0), quad_pos(5, 0), quad_neg(5, 0);
      lin[static_cast<std::size_t>(i)] = 1;
      quad_pos[static_cast<std::size_t>(ip1)] = 1;
      quad_pos[static_cast<std::size_t>(im1)] = 1;
      quad_neg[static_cast<std::size_t>(im2)] = 1;
      quad_neg[static_cast<std::size_t>(im1)] = 1;
      s.truth.push_back({i, mono_vec(std::vector<int>(5, 0)), forcing});
      s.truth.push_back({i, mono_vec(lin), -1.0});
      s.truth.push_back({i, mono_vec(quad_pos), 1.0});
      s.truth.push_back({i, mono_vec(quad_neg), -1.0});
    }
    reg[s.name] = s;
  }

  {
    BenchmarkSystem s;
    s.name = "colpitts";
    s.dim = 3;
    const double alpha_c = 5.0, eta = 6.2723, gamma = 0.0797, q = 0.6898, a = -1.0;
    s.rhs = [alpha_c, eta, gamma, q, a](double, const double* x, double* f) {
      f[0] = alpha_c * x[2];
      f[1] = eta * (1.0 - std::exp(a * x[0]) + x[2]);
      f[2] = -gamma * (x[0] + x[1]) - q * x[2];
    };
    s.initial = Eigen::Vector3d(0.01, 0.0, 0.0);
    s.sample_dt = 0.1;
    s.sample_count = 500;
    s.library_degree = 2;
    s.include_constant = true;
    s.exponential_vars = {0};
    s.standardize = true;
    s.true_inner = a;
    Term exp_term;
    exp_term.kind = TermKind::ParametricExponential;
    exp_term.variable_index = 0;
    exp_term.inner_param_id = 0;
    s.truth = {{0, mono({0, 0, 1}), alpha_c}, {1, mono({0, 0, 0}), eta},
               {1, exp_term, -eta},           {1, mono({0, 0, 1}), eta},
               {2, mono({1, 0, 0}), -gamma},  {2, mono({0, 1, 0}), -gamma},
               {2, mono({0, 0, 1}), -q}};
    reg[s.name] = s;
  }

  return reg;
}

const std::map<std::string, BenchmarkSystem>& systems() {
  static const std::map<std::string, BenchmarkSystem> reg = build_systems();
  return reg;
}

}  // namespace

const BenchmarkSystem& benchmark_system(const std::string& name) {
  const auto& reg = systems();
  auto it = reg.find(name);
  if (it == reg.end()) throw std::invalid_argument("unknown benchmark system: " + name);
  return it->second;
}

std::vector<std::string> benchmark_names() {
  std::vector<std::string> names;
  for (const auto& [name, sys] : systems()) names.push_back(name);
  return names;
}

Eigen::VectorXd default_sample_times(const BenchmarkSystem& system) {
  Eigen::VectorXd t(system.sample_count);
  for (int i = 0; i < system.sample_count; ++i) t(i) = i * system.sample_dt;
  return t;
}

CandidateLibrary default_library(const BenchmarkSystem& system) {
  CandidateLibrary lib =
      build_polynomial_library(system.dim, system.library_degree, system.include_constant);
  for (int v : system.exponential_vars) add_exponential_term(lib, v);
  return lib;
}

Eigen::MatrixXd true_coefficients(const BenchmarkSystem& system, const CandidateLibrary& lib) {
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(system.dim, lib.size());
  for (const auto& entry : system.truth) {
    int idx = -1;
    for (int k = 0; k < lib.size(); ++k) {
      const Term& t = lib.terms[static_cast<std::size_t>(k)];
      if (t.kind != entry.term.kind) continue;
      if (t.kind == TermKind::Monomial ? t.exponents == entry.term.exponents
                                       : t.variable_index == entry.term.variable_index)
        idx = k;
    }
    if (idx < 0)
      throw std::runtime_error("library cannot represent truth term " + entry.term.name());
    theta(entry.row, idx) = entry.value;
  }
  return theta;
}

Eigen::VectorXd true_inner_params(const BenchmarkSystem& system, const CandidateLibrary& lib) {
  Eigen::VectorXd inner = Eigen::VectorXd::Zero(lib.num_inner_params);
  for (const Term& t : lib.terms)
    if (t.kind == TermKind::ParametricExponential) inner(t.inner_param_id) = system.true_inner;
  return inner;
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic standard normals; the engine's stream is fixed by the seed.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : engine_(seed) {}

  double operator()() {
    if (have_) {
      have_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    cached_ = r * std::sin(2.0 * M_PI * u2);
    have_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  double uniform() { return (engine_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 engine_;
  bool have_ = false;
  double cached_ = 0.0;
};

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t noise_index,
                          std::uint64_t realization) {
  return splitmix64(splitmix64(master ^ (noise_index + 1) * 0x9e3779b97f4a7c15ULL) ^
                    (realization + 1) * 0xd1b54a32d192ed03ULL);
}

Observations add_noise_and_drop(const Eigen::VectorXd& times, const Eigen::MatrixXd& clean,
                                const NoiseSpec& spec) {
  if (times.size() != clean.rows()) throw std::invalid_argument("times and data disagree");
  if (spec.drop == NoiseSpec::Drop::Random && !(spec.drop_fraction >= 0.0 && spec.drop_fraction < 1.0))
    throw std::invalid_argument("drop fraction must lie in [0, 1)");

  const int m = static_cast<int>(times.size());
  const int d = static_cast<int>(clean.cols());
  Observations obs;
  obs.times = times;
  obs.values = clean;
  obs.mask = Eigen::MatrixXi::Ones(m, d);

  GaussianSampler normal(spec.seed);
  if (spec.fraction > 0.0) {
    for (int c = 0; c < d; ++c) {
      const double mean = clean.col(c).mean();
      const double sd = std::sqrt((clean.col(c).array() - mean).square().mean());
      const double sigma = spec.fraction * sd;
      for (int s = 0; s < m; ++s) obs.values(s, c) += sigma * normal();
    }
  }

  if (spec.drop == NoiseSpec::Drop::Gap) {
    for (int s = 0; s < m; ++s)
      if (times(s) >= spec.gap_start && times(s) < spec.gap_end) obs.mask.row(s).setZero();
  } else if (spec.drop == NoiseSpec::Drop::Random && spec.drop_fraction > 0.0) {
    std::mt19937_64 engine(splitmix64(spec.seed ^ 0xabcdef1234567890ULL));
    for (int s = 0; s < m; ++s)
      for (int c = 0; c < d; ++c) {
        const double u = (engine() >> 11) * 0x1.0p-53;
        if (u < spec.drop_fraction) obs.mask(s, c) = 0;
      }
  }
  return obs;
}

Eigen::MatrixXd initial_state(const Observations& obs) {
  return interpolate_onto_grid(obs, obs.times);
}

std::pair<Observations, Eigen::VectorXd> standardize_states(const Observations& obs) {
  const int d = obs.state_dim();
  Eigen::VectorXd scales(d);
  for (int c = 0; c < d; ++c) {
    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    for (int s = 0; s < obs.sample_count(); ++s) {
      if (obs.mask(s, c) == 0) continue;
      sum += obs.values(s, c);
      sum2 += obs.values(s, c) * obs.values(s, c);
      ++count;
    }
    if (count < 2) throw std::runtime_error("not enough data to standardize a component");
    const double mean = sum / count;
    const double var = sum2 / count - mean * mean;
    if (!(var > 1e-24)) throw std::runtime_error("component has (numerically) zero variance");
    scales(c) = std::sqrt(var);
  }
  Observations out = obs;
  for (int c = 0; c < d; ++c) out.values.col(c) /= scales(c);
  return {out, scales};
}

std::vector<RunRecord> run_benchmark(const BenchmarkConfig& config) {
  const BenchmarkSystem& base = benchmark_system(config.system);
  BenchmarkSystem system = base;
  if (config.sample_dt > 0.0) system.sample_dt = config.sample_dt;
  if (config.sample_count > 0) system.sample_count = config.sample_count;
  if (config.library_degree > 0) system.library_degree = config.library_degree;
  if (config.include_constant >= 0) system.include_constant = config.include_constant != 0;

  const Eigen::VectorXd times = default_sample_times(system);
  const Eigen::MatrixXd clean = rk45_integrate(system.rhs, system.initial, times);
  const CandidateLibrary lib = default_library(system);

  Eigen::MatrixXd theta_true;
  bool have_truth = true;
  try {
    theta_true = true_coefficients(system, lib);
  } catch (const std::exception&) {
    have_truth = false;
  }

  struct Task {
    double noise;
    std::uint64_t noise_index;
    std::uint64_t realization;
  };
  std::vector<Task> tasks;
  for (std::size_t ni = 0; ni < config.noise_levels.size(); ++ni)
    for (int r = 0; r < config.num_seeds; ++r)
      tasks.push_back({config.noise_levels[ni], ni, static_cast<std::uint64_t>(r)});

  std::vector<RunRecord> records(tasks.size());
  parallel_for(static_cast<int>(tasks.size()), config.run_workers, [&](int idx) {
    const Task& task = tasks[static_cast<std::size_t>(idx)];
    RunRecord& rec = records[static_cast<std::size_t>(idx)];
    rec.system = system.name;
    rec.noise = task.noise;
    rec.seed = derive_seed(config.master_seed, task.noise_index, task.realization);
    const auto t_start = std::chrono::steady_clock::now();
    try {
      NoiseSpec spec;
      spec.fraction = task.noise;
      spec.seed = rec.seed;
      spec.drop = config.drop;
      spec.gap_start = config.gap_start;
      spec.gap_end = config.gap_end;
      spec.drop_fraction = config.drop_fraction;
      const Observations obs = add_noise_and_drop(times, clean, spec);

      Observations work = obs;
      Eigen::VectorXd scales = Eigen::VectorXd::Ones(system.dim);
      if (system.standardize) std::tie(work, scales) = standardize_states(obs);

      DiscoveryOutcome outcome = hyperparameter_search(work, lib, config.search);
      const CellResult& winner = pick_winner(outcome.ranked);

      CoefficientState unscaled = rescale_coefficients(
          winner.model.coeffs, outcome.normalized_library,
          system.standardize ? scales : Eigen::VectorXd());

      Eigen::MatrixXd u_inferred(obs.sample_count(), system.dim);
      for (int s = 0; s < obs.sample_count(); ++s)
        u_inferred.row(s) = winner.model.states.row(outcome.grid.data_rows[static_cast<std::size_t>(s)]);
      if (system.standardize)
        for (int c = 0; c < system.dim; ++c) u_inferred.col(c) *= scales(c);

      rec.lambda = winner.lambda;
      rec.sparsity_weight = winner.sparsity_weight;
      rec.ic = winner.model.ic;
      rec.selection_iters = static_cast<int>(winner.model.trace.iterations.size());
      rec.model = unscaled;
      rec.trace = winner.model.trace;
      if (have_truth) {
        const Metrics m = metrics(unscaled.theta, theta_true, u_inferred, clean);
        rec.re_theta = m.re_theta;
        rec.re_u = m.re_u;
        rec.tpr = m.tpr;
      } else {
        rec.re_theta = rec.re_u = rec.tpr = std::numeric_limits<double>::quiet_NaN();
      }
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  });
  return records;
}

Summary summarize(std::vector<double> values) {
  Summary s;
  values.erase(std::remove_if(values.begin(), values.end(),
                              [](double v) { return !std::isfinite(v); }),
               values.end());
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * (values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - lo;
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  s.median = quantile(0.5);
  s.q1 = quantile(0.25);
  s.q3 = quantile(0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  s.whisker_lo = values.back();
  s.whisker_hi = values.front();
  for (double v : values) {
    if (v >= lo_fence) {
      s.whisker_lo = v;
      break;
    }
  }
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (*it <= hi_fence) {
      s.whisker_hi = *it;
      break;
    }
  }
  return s;
}

}  // namespace sysid
