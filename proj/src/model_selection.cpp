#include "sysid/model_selection.hpp"

#include "sysid/objective.hpp"
#include "sysid/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace sysid {

double bic(int param_count, double fit, int n_hat) {
  if (n_hat < 1) throw std::invalid_argument("observation count must be positive");
  if (fit < 0.0) throw std::invalid_argument("fit must be nonnegative");
  if (fit == 0.0) {
    std::cerr << "warning: perfect fit in information criterion; flooring at 1e-300\n";
    fit = 1e-300;
  }
  return std::log(static_cast<double>(n_hat)) * param_count + n_hat * std::log(fit);
}

double information_criterion(Criterion crit, int param_count, double fit, int n_hat) {
  if (crit == Criterion::Bic) return bic(param_count, fit, n_hat);
  if (n_hat < 1) throw std::invalid_argument("observation count must be positive");
  if (fit < 0.0) throw std::invalid_argument("fit must be nonnegative");
  if (fit == 0.0) fit = 1e-300;
  return 2.0 * param_count + n_hat * std::log(fit);
}

namespace {

// Fitted degrees of freedom: active coefficients plus inner parameters whose
// host term is active somewhere.
int fitted_parameter_count(const CandidateLibrary& lib, const Eigen::MatrixXi& mask) {
  int count = mask.sum();
  for (int k = 0; k < lib.size(); ++k) {
    if (lib.terms[static_cast<std::size_t>(k)].kind != TermKind::ParametricExponential) continue;
    if (mask.col(k).sum() > 0) ++count;
  }
  return count;
}

struct Entry {
  double magnitude;
  int term;
  int row;
};

// Ascending by magnitude; equal magnitudes break toward lower term index.
bool entry_less(const Entry& a, const Entry& b) {
  if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
  if (a.term != b.term) return a.term < b.term;
  return a.row < b.row;
}

struct SolvePair {
  bool ok = false;
  Eigen::MatrixXd states;
  CoefficientState unpenalized;
  CoefficientState penalized;
  double fit = 0.0;
};

}  // namespace

SelectionResult select_model(const Observations& obs, const CandidateLibrary& lib,
                             const StateGrid& initial_grid, const CoefficientState& init,
                             const LossWeights& weights, int k0, const LMConfig& lm_config,
                             Criterion criterion) {
  validate(weights);
  if (k0 < 1) throw std::invalid_argument("k0 must be >= 1");
  const int d = lib.state_dim;
  const int p_total = d * lib.size();
  const int cap = (p_total + k0 - 1) / k0 + k0 + 1;

  SelectionResult result;
  result.trace.iteration_cap = cap;

  StateGrid grid = initial_grid;  // times + data-row map; values updated per solve

  Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(d, lib.size());
  char mode = 'f';
  bool adaptive = true;
  int k = k0;

  // Best-so-far record plus the penalized coefficients used for ranking.
  bool have_best = false;
  Eigen::MatrixXd best_states;
  CoefficientState best_coeffs;
  Eigen::MatrixXi best_mask;
  Eigen::MatrixXd best_penalized;  // theta-dagger of the best iteration
  double best_ic = std::numeric_limits<double>::infinity();
  int best_record = -1;

  // Backward-recovery bookkeeping.
  std::vector<Eigen::MatrixXd> penalized_history;
  std::vector<Eigen::MatrixXi> mask_history;
  std::vector<Entry> recover_pool;  // ranked candidates, largest first
  Eigen::MatrixXd recover_source;   // theta-dagger of the reference solve

  Eigen::MatrixXd warm_states = initial_grid.values;
  CoefficientState warm = init;

  // The penalized problem runs first and its solution seeds the likelihood
  // refit: the penalty concentrates the coefficients, and a refit seeded
  // there stays out of the cancellation-heavy basins that the near-collinear
  // library admits (seeding the refit from the previous accepted iterate
  // inflates the fit of large masks and stalls pruning).  The penalized
  // solves chain their own warm starts for the same reason.
  Eigen::MatrixXd pen_states = initial_grid.values;
  CoefficientState pen_warm = init;
  auto solve_pair = [&](const Eigen::MatrixXi& m) -> SolvePair {
    SolvePair out;
    try {
      Eigen::MatrixXd seed_states = warm_states;
      CoefficientState seed_coeffs = warm;
      if (weights.sparsity_weight > 0.0) {
        DiscreteLossObjective pen(grid, obs, lib, m, weights, true);
        CoefficientState pw = pen_warm;
        pw.mask = m;
        for (int j = 0; j < lib.state_dim; ++j)
          for (int t = 0; t < lib.size(); ++t)
            if (m(j, t) != 0 && pen_warm.mask(j, t) == 0) pw.theta(j, t) = warm.theta(j, t);
        // inner parameters restart from the configured anchor: while masks are
        // dense the polynomial columns shadow the exponential and the carried
        // value drifts into spike regimes it cannot leave
        pw.inner = init.inner;
        pw.apply_mask();
        LMResult run_pen = minimize(pen, pen.pack(pen_states, pw), lm_config);
        pen.unpack(run_pen.x, seed_states, seed_coeffs);
        out.penalized = seed_coeffs;
        pen_states = seed_states;
        pen_warm = seed_coeffs;
      }
      DiscreteLossObjective unpen(grid, obs, lib, m, weights, false);
      LMResult run = minimize(unpen, unpen.pack(seed_states, seed_coeffs), lm_config);
      unpen.unpack(run.x, out.states, out.unpenalized);
      grid.values = out.states;
      out.fit = unnormalized_fit(grid, obs, lib, out.unpenalized, weights.lambda);
      if (weights.sparsity_weight <= 0.0) out.penalized = out.unpenalized;
      out.ok = true;
    } catch (const std::exception&) {
      out.ok = false;
    }
    return out;
  };

  while (static_cast<int>(result.trace.iterations.size()) < cap) {
    SolvePair pair = solve_pair(mask);

    SelectionIteration rec;
    rec.mask = mask;
    rec.mode = mode;
    rec.k = k;
    rec.active = mask.sum();
    double ic = std::numeric_limits<double>::infinity();
    if (pair.ok) {
      rec.fit = pair.fit;
      ic = information_criterion(criterion, fitted_parameter_count(lib, mask), pair.fit,
                                 obs.available_count());
    }
    rec.ic = ic;

    const bool accept = ic < best_ic;
    rec.accepted = accept;
    result.trace.iterations.push_back(rec);
    penalized_history.push_back(pair.ok ? pair.penalized.theta : Eigen::MatrixXd());
    mask_history.push_back(mask);

    if (accept) {
      have_best = true;
      best_states = pair.states;
      best_coeffs = pair.unpenalized;
      best_mask = mask;
      best_penalized = pair.penalized.theta;
      best_ic = ic;
      best_record = static_cast<int>(result.trace.iterations.size()) - 1;
      result.fit = pair.fit;
      if (adaptive && k == 1) adaptive = false;
    } else {
      if (!have_best) {
        result.trace.termination = "initial solve failed";
        break;
      }
      if (adaptive && k > 1) {
        k = 1;
      } else if (adaptive && k == 1) {
        mode = 'b';
        adaptive = false;
        k = 1;
        // Candidates come from the solve just prior to the current minimum.
        recover_pool.clear();
        if (best_record > 0 && penalized_history[static_cast<std::size_t>(best_record - 1)].size() > 0) {
          recover_source = penalized_history[static_cast<std::size_t>(best_record - 1)];
          const Eigen::MatrixXi& ref_mask = mask_history[static_cast<std::size_t>(best_record - 1)];
          for (int j = 0; j < d; ++j)
            for (int t = 0; t < lib.size(); ++t)
              if (ref_mask(j, t) != 0 && best_mask(j, t) == 0)
                recover_pool.push_back({std::abs(recover_source(j, t)), t, j});
          std::sort(recover_pool.begin(), recover_pool.end(),
                    [](const Entry& a, const Entry& b) { return entry_less(b, a); });
        }
        if (recover_pool.empty()) {
          result.trace.termination = "no terms to recover";
          break;
        }
      } else {
        result.trace.termination = mode == 'b' ? "recovery rejected" : "refinement rejected";
        break;
      }
    }

    // Mask update for the next iteration.
    if (mode == 'f') {
      std::vector<Entry> active;
      for (int j = 0; j < d; ++j)
        for (int t = 0; t < lib.size(); ++t)
          if (best_mask(j, t) != 0) active.push_back({std::abs(best_penalized(j, t)), t, j});
      if (active.empty()) {
        result.trace.termination = "library exhausted";
        break;
      }
      std::sort(active.begin(), active.end(), entry_less);
      Eigen::MatrixXi next = best_mask;
      const int remove = std::min<int>(k, static_cast<int>(active.size()));
      for (int i = 0; i < remove; ++i)
        next(active[static_cast<std::size_t>(i)].row, active[static_cast<std::size_t>(i)].term) = 0;
      mask = next;
    } else {
      // Re-add the highest-ranked recovery candidate absent from the best mask.
      Eigen::MatrixXi next = best_mask;
      bool added = false;
      for (const Entry& e : recover_pool) {
        if (next(e.row, e.term) == 0) {
          next(e.row, e.term) = 1;
          added = true;
          break;
        }
      }
      if (!added) {
        result.trace.termination = "no terms to recover";
        break;
      }
      mask = next;
    }

    // Warm start from the best accepted solution; terms re-entering in
    // backward mode start from the reference solve's coefficients.
    warm_states = best_states;
    warm = best_coeffs;
    warm.mask = mask;
    for (int j = 0; j < d; ++j)
      for (int t = 0; t < lib.size(); ++t) {
        if (mask(j, t) != 0 && best_mask(j, t) == 0)
          warm.theta(j, t) = recover_source.size() > 0 ? recover_source(j, t) : 0.0;
      }
    warm.apply_mask();
  }

  if (result.trace.termination.empty()) result.trace.termination = "iteration cap";

  result.success = have_best;
  if (have_best) {
    result.states = best_states;
    result.coeffs = best_coeffs;
    result.coeffs.apply_mask();
    result.ic = best_ic;
  }
  return result;
}

void write_selection_trace_csv(const SelectionTrace& trace, std::ostream& os) {
  os << "iter,mode,k,active,fit,ic,accepted,mask\n";
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const auto& r = trace.iterations[i];
    os << i << "," << r.mode << "," << r.k << "," << r.active << "," << r.fit << "," << r.ic << ","
       << (r.accepted ? 1 : 0) << ",";
    for (int j = 0; j < r.mask.rows(); ++j)
      for (int t = 0; t < r.mask.cols(); ++t) os << r.mask(j, t);
    os << "\n";
  }
}

HyperGrid default_hyper_grid() {
  HyperGrid g;
  for (int i = -3; i <= 3; ++i) g.lambdas.push_back(std::pow(10.0, i));
  for (int j = -4; j <= 0; ++j) g.sparsity_weights.push_back(std::pow(10.0, j));
  return g;
}

DiscoveryOutcome hyperparameter_search(const Observations& obs, const CandidateLibrary& lib,
                                       const SearchConfig& config) {
  if (config.grid.lambdas.empty() || config.grid.sparsity_weights.empty())
    throw std::invalid_argument("hyperparameter grid is empty");

  DiscoveryOutcome out;

  // Hold out every stride-th sample row for validation.
  Observations training = obs;
  for (int s = 0; s < obs.sample_count(); ++s)
    if (s % config.grid.validation_stride == config.grid.validation_offset) {
      if (obs.mask.row(s).sum() > 0) out.validation_rows.push_back(s);
      training.mask.row(s).setZero();
    }
  out.training_count = training.available_count();
  if (out.training_count == 0) throw std::runtime_error("no training observations left");

  out.grid = build_grid(obs.times, config.refinement, lib.state_dim);
  out.grid.values = interpolate_onto_grid(training, out.grid.times);

  Eigen::VectorXd inner0 = Eigen::VectorXd::Constant(lib.num_inner_params, config.inner_init);
  out.normalized_library = normalize_library(lib, out.grid.values, inner0);

  CoefficientState init = make_coefficient_state(out.normalized_library, config.theta_init,
                                                 config.inner_init, true);

  std::vector<CellResult> cells(config.grid.lambdas.size() * config.grid.sparsity_weights.size());
  const int n_r = static_cast<int>(config.grid.sparsity_weights.size());

  parallel_for(static_cast<int>(cells.size()), config.workers, [&](int idx) {
    CellResult& cell = cells[static_cast<std::size_t>(idx)];
    cell.lambda = config.grid.lambdas[static_cast<std::size_t>(idx / n_r)];
    cell.sparsity_weight = config.grid.sparsity_weights[static_cast<std::size_t>(idx % n_r)];
    LossWeights w;
    w.lambda = cell.lambda;
    w.sparsity_weight = cell.sparsity_weight;
    w.epsilon = config.epsilon;
    try {
      cell.model = select_model(training, out.normalized_library, out.grid, init, w, config.k0,
                                config.lm, config.criterion);
      if (!cell.model.success) {
        cell.error = "no model accepted";
        return;
      }
      double err = 0.0, err2 = 0.0;
      int count = 0;
      for (int s : out.validation_rows) {
        const int row = out.grid.data_rows[static_cast<std::size_t>(s)];
        for (int c = 0; c < obs.state_dim(); ++c) {
          if (obs.mask(s, c) == 0) continue;
          const double sq = std::pow(obs.values(s, c) - cell.model.states(row, c), 2);
          err += sq;
          err2 += sq * sq;
          ++count;
        }
      }
      cell.validation_error = err;
      if (count > 1) {
        const double mean = err / count;
        const double var = std::max(0.0, err2 / count - mean * mean);
        cell.validation_se = std::sqrt(var * count);  // SE of the sum
      }
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });

  std::stable_sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
    if (a.ok != b.ok) return a.ok;
    return a.validation_error < b.validation_error;
  });
  if (cells.empty() || !cells.front().ok) throw std::runtime_error("every hyperparameter cell failed");
  out.ranked = std::move(cells);
  return out;
}

const CellResult& pick_winner(const std::vector<CellResult>& ranked) {
  const CellResult* best = nullptr;
  for (const auto& c : ranked)
    if (c.ok) {
      best = &c;
      break;
    }
  if (best == nullptr) throw std::invalid_argument("no successful cell to pick from");
  const double cutoff = best->validation_error + best->validation_se;
  const CellResult* winner = best;
  for (const auto& c : ranked) {
    if (!c.ok || c.validation_error > cutoff) continue;
    const int active = c.model.coeffs.active_count();
    const int winner_active = winner->model.coeffs.active_count();
    if (active < winner_active ||
        (active == winner_active && c.validation_error < winner->validation_error))
      winner = &c;
  }
  return *winner;
}

Metrics metrics(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_true,
                const Eigen::MatrixXd& u, const Eigen::MatrixXd& u_true) {
  if (theta.rows() != theta_true.rows() || theta.cols() != theta_true.cols() ||
      u.rows() != u_true.rows() || u.cols() != u_true.cols())
    throw std::invalid_argument("metric shapes disagree");
  const double tn = theta_true.norm();
  const double un = u_true.norm();
  if (tn == 0.0 || un == 0.0) throw std::invalid_argument("ground truth has zero norm");

  Metrics m;
  m.re_theta = (theta - theta_true).norm() / tn;
  m.re_u = (u - u_true).norm() / un;
  for (int j = 0; j < theta.rows(); ++j)
    for (int t = 0; t < theta.cols(); ++t) {
      const bool got = theta(j, t) != 0.0;
      const bool want = theta_true(j, t) != 0.0;
      if (got && want) ++m.tp;
      if (!got && want) ++m.fn;
      if (got && !want) ++m.fp;
    }
  m.tpr = static_cast<double>(m.tp) / (m.tp + m.fn + m.fp);
  return m;
}

void write_cells_csv(const std::vector<CellResult>& cells, std::ostream& os) {
  os << "rank,lambda,r,ok,validation_error,validation_se,ic,fit,active,iterations,error\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    os << i << "," << c.lambda << "," << c.sparsity_weight << "," << (c.ok ? 1 : 0) << ","
       << c.validation_error << "," << c.validation_se << "," << c.model.ic << ","
       << c.model.fit << ","
       << (c.ok ? c.model.coeffs.active_count() : 0) << "," << c.model.trace.iterations.size()
       << "," << c.error << "\n";
  }
}

}  // namespace sysid
