// sysid: sparse ODE discovery from noisy time series.
// Subcommands: simulate, discover, benchmark, report.

#include "CLI11.hpp"
#include "json.hpp"

#include "sysid/csv_io.hpp"
#include "sysid/experiment_harness.hpp"
#include "sysid/model_selection.hpp"
#include "sysid/objective.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sysid;

namespace {

int default_workers() {
  if (const char* env = std::getenv("SYSID_WORKERS")) {
    const int w = std::atoi(env);
    if (w >= 1) return w;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path resolve_out(std::string out) {
  if (!out.empty()) return out;
  if (const char* env = std::getenv("SYSID_OUT")) return env;
  return ".";
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string system = "vdp";
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string gap;   // "start:end"
  double drop = 0.0;
  double dt = 0.0;
  int samples = 0;
  std::string out;
};

json to_json(const SimulateOptions& o) {
  return json{{"command", "simulate"}, {"system", o.system}, {"noise", o.noise},
              {"seed", o.seed},        {"gap", o.gap},       {"drop", o.drop},
              {"dt", o.dt},            {"samples", o.samples}};
}

void from_json_opts(const json& j, SimulateOptions& o) {
  o.system = j.value("system", o.system);
  o.noise = j.value("noise", o.noise);
  o.seed = j.value("seed", o.seed);
  o.gap = j.value("gap", o.gap);
  o.drop = j.value("drop", o.drop);
  o.dt = j.value("dt", o.dt);
  o.samples = j.value("samples", o.samples);
}

NoiseSpec make_noise_spec(double noise, std::uint64_t seed, const std::string& gap, double drop) {
  NoiseSpec spec;
  spec.fraction = noise;
  spec.seed = seed;
  if (!gap.empty()) {
    const auto pos = gap.find(':');
    if (pos == std::string::npos) throw CLI::ValidationError("--gap expects start:end");
    spec.drop = NoiseSpec::Drop::Gap;
    spec.gap_start = std::stod(gap.substr(0, pos));
    spec.gap_end = std::stod(gap.substr(pos + 1));
  } else if (drop > 0.0) {
    spec.drop = NoiseSpec::Drop::Random;
    spec.drop_fraction = drop;
  }
  return spec;
}

int cmd_simulate(const SimulateOptions& opt) {
  const auto& base = benchmark_system(opt.system);
  BenchmarkSystem sys = base;
  if (opt.dt > 0.0) {
    const double horizon = (base.sample_count - 1) * base.sample_dt;
    sys.sample_dt = opt.dt;
    sys.sample_count = static_cast<int>(std::lround(horizon / opt.dt)) + 1;
  }
  if (opt.samples > 0) sys.sample_count = opt.samples;

  const Eigen::VectorXd times = default_sample_times(sys);
  const Eigen::MatrixXd clean = rk45_integrate(sys.rhs, sys.initial, times);
  const NoiseSpec spec = make_noise_spec(opt.noise, opt.seed, opt.gap, opt.drop);
  const Observations obs = add_noise_and_drop(times, clean, spec);

  const fs::path dir = resolve_out(opt.out);
  atomic_write(dir / "observations.csv", format_observations_csv(obs));
  atomic_write(dir / "truth.csv", format_states_csv(times, clean));

  json noise_meta{{"noise", opt.noise},
                  {"seed", opt.seed},
                  {"available", obs.available_count()},
                  {"rows_with_data", obs.rows_with_data()},
                  {"sigma", json::array()}};
  for (int c = 0; c < sys.dim; ++c) {
    const double mean = clean.col(c).mean();
    const double sd = std::sqrt((clean.col(c).array() - mean).square().mean());
    noise_meta["sigma"].push_back(opt.noise * sd);
  }
  atomic_write(dir / "noise.json", noise_meta.dump(2) + "\n");

  json manifest = to_json(opt);
  manifest["resolved_dt"] = sys.sample_dt;
  manifest["resolved_samples"] = sys.sample_count;
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << obs.sample_count() << " rows (" << obs.available_count()
            << " data points) to " << (dir / "observations.csv").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// discover

struct DiscoverOptions {
  std::string data;
  std::string truth;
  bool standardize = false;
  int degree = 3;
  bool include_constant = false;
  std::vector<std::string> nonlinear;  // "exp:VAR" (1-based variable)
  std::string lambda_grid;
  std::string r_grid;
  double epsilon = 0.01;
  int k0 = 5;
  int refine = 1;
  std::string criterion = "bic";
  double theta_init = 1.0;
  double inner_init = 1.0;
  int max_iters = 500;
  double grad_tol = 1e-8;
  int workers = 0;
  std::string out;
};

json to_json(const DiscoverOptions& o) {
  return json{{"command", "discover"},
              {"data", o.data},
              {"truth", o.truth},
              {"standardize", o.standardize},
              {"library_degree", o.degree},
              {"include_constant", o.include_constant},
              {"nonlinear", o.nonlinear},
              {"lambda_grid", o.lambda_grid},
              {"r_grid", o.r_grid},
              {"epsilon", o.epsilon},
              {"k0", o.k0},
              {"refine", o.refine},
              {"criterion", o.criterion},
              {"theta_init", o.theta_init},
              {"inner_init", o.inner_init},
              {"max_iters", o.max_iters},
              {"grad_tol", o.grad_tol}};
}

void from_json_opts(const json& j, DiscoverOptions& o) {
  o.data = j.value("data", o.data);
  o.truth = j.value("truth", o.truth);
  o.standardize = j.value("standardize", o.standardize);
  o.degree = j.value("library_degree", o.degree);
  o.include_constant = j.value("include_constant", o.include_constant);
  o.nonlinear = j.value("nonlinear", o.nonlinear);
  o.lambda_grid = j.value("lambda_grid", o.lambda_grid);
  o.r_grid = j.value("r_grid", o.r_grid);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.k0 = j.value("k0", o.k0);
  o.refine = j.value("refine", o.refine);
  o.criterion = j.value("criterion", o.criterion);
  o.theta_init = j.value("theta_init", o.theta_init);
  o.inner_init = j.value("inner_init", o.inner_init);
  o.max_iters = j.value("max_iters", o.max_iters);
  o.grad_tol = j.value("grad_tol", o.grad_tol);
}

std::string equations_text(const CandidateLibrary& lib, const CoefficientState& coeffs) {
  std::ostringstream os;
  for (int j = 0; j < coeffs.rows(); ++j) {
    os << "dx" << (j + 1) << "/dt =";
    bool any = false;
    for (int k = 0; k < lib.size(); ++k) {
      if (coeffs.mask(j, k) == 0) continue;
      const double v = coeffs.theta(j, k);
      os << (any ? (v >= 0 ? " + " : " - ") : (v >= 0 ? " " : " -")) << std::abs(v);
      if (!lib.terms[static_cast<std::size_t>(k)].is_constant())
        os << "*" << lib.terms[static_cast<std::size_t>(k)].name();
      any = true;
    }
    if (!any) os << " 0";
    os << "\n";
  }
  for (int q = 0; q < coeffs.inner.size(); ++q)
    os << "a" << (q + 1) << " = " << coeffs.inner(q) << "\n";
  return os.str();
}

json model_json(const CandidateLibrary& lib, const CoefficientState& coeffs) {
  json out;
  out["state_dim"] = lib.state_dim;
  out["equations"] = json::array();
  for (int j = 0; j < coeffs.rows(); ++j) {
    json row = json::array();
    for (int k = 0; k < lib.size(); ++k)
      row.push_back(json{{"term", lib.terms[static_cast<std::size_t>(k)].name()},
                         {"coefficient", coeffs.theta(j, k)},
                         {"active", coeffs.mask(j, k) != 0}});
    out["equations"].push_back(row);
  }
  out["inner_parameters"] = json::array();
  for (int q = 0; q < coeffs.inner.size(); ++q) out["inner_parameters"].push_back(coeffs.inner(q));
  return out;
}

int cmd_discover(const DiscoverOptions& opt) {
  if (opt.data.empty()) throw CLI::ValidationError("--data is required");
  Observations obs = read_observations_csv(opt.data);

  Eigen::VectorXd scales = Eigen::VectorXd::Ones(obs.state_dim());
  Observations work = obs;
  if (opt.standardize) std::tie(work, scales) = standardize_states(obs);

  CandidateLibrary lib = build_polynomial_library(obs.state_dim(), opt.degree, opt.include_constant);
  for (const std::string& spec : opt.nonlinear) {
    if (spec.rfind("exp:", 0) != 0) throw CLI::ValidationError("--nonlinear expects exp:VAR");
    const int var = std::stoi(spec.substr(4));
    if (var < 1 || var > obs.state_dim()) throw CLI::ValidationError("nonlinear variable out of range");
    add_exponential_term(lib, var - 1);
  }

  SearchConfig cfg;
  cfg.grid = default_hyper_grid();
  if (!opt.lambda_grid.empty()) cfg.grid.lambdas = parse_list(opt.lambda_grid);
  if (!opt.r_grid.empty()) cfg.grid.sparsity_weights = parse_list(opt.r_grid);
  cfg.k0 = opt.k0;
  cfg.refinement = opt.refine;
  cfg.epsilon = opt.epsilon;
  cfg.criterion = opt.criterion == "aic" ? Criterion::Aic : Criterion::Bic;
  cfg.theta_init = opt.theta_init;
  cfg.inner_init = opt.inner_init;
  cfg.lm.max_iters = opt.max_iters;
  cfg.lm.grad_tol = opt.grad_tol;
  cfg.workers = opt.workers > 0 ? opt.workers : default_workers();

  const DiscoveryOutcome outcome = hyperparameter_search(work, lib, cfg);
  const CellResult& winner = pick_winner(outcome.ranked);
  const CoefficientState plain = rescale_coefficients(
      winner.model.coeffs, outcome.normalized_library,
      opt.standardize ? scales : Eigen::VectorXd());

  const fs::path dir = resolve_out(opt.out);
  atomic_write(dir / "model.txt", equations_text(lib, plain));
  json mj = model_json(lib, plain);
  mj["lambda"] = winner.lambda;
  mj["sparsity_weight"] = winner.sparsity_weight;
  mj["ic"] = winner.model.ic;
  mj["validation_error"] = winner.validation_error;
  atomic_write(dir / "model.json", mj.dump(2) + "\n");

  std::ostringstream trace_csv;
  write_selection_trace_csv(winner.model.trace, trace_csv);
  atomic_write(dir / "trace.csv", trace_csv.str());

  std::ostringstream cells_csv;
  write_cells_csv(outcome.ranked, cells_csv);
  atomic_write(dir / "cells.csv", cells_csv.str());

  Eigen::MatrixXd states = winner.model.states;
  if (opt.standardize)
    for (int c = 0; c < obs.state_dim(); ++c) states.col(c) *= scales(c);
  atomic_write(dir / "states.csv", format_states_csv(outcome.grid.times, states));

  if (!opt.truth.empty()) {
    const Observations truth = read_observations_csv(opt.truth);
    Eigen::MatrixXd u(obs.sample_count(), obs.state_dim());
    for (int s = 0; s < obs.sample_count(); ++s)
      u.row(s) = states.row(outcome.grid.data_rows[static_cast<std::size_t>(s)]);
    std::ostringstream mcsv;
    mcsv << "re_u\n" << format_double((u - truth.values).norm() / truth.values.norm()) << "\n";
    atomic_write(dir / "metrics.csv", mcsv.str());
  }

  atomic_write(dir / "manifest.json", to_json(opt).dump(2) + "\n");
  std::cout << equations_text(lib, plain);
  std::cout << "winner: lambda=" << winner.lambda << " R=" << winner.sparsity_weight
            << " validation_error=" << winner.validation_error << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkCliOptions {
  std::string system = "vdp";
  std::string noise_levels = "0.1";
  int seeds = 20;
  std::uint64_t master_seed = 0;
  std::string gap;
  double drop = 0.0;
  std::string dt_list;      // optional sampling-interval sweep
  std::string refine_list;  // optional refinement sweep
  int degree = 0;
  int include_constant = -1;
  std::string lambda_grid;
  std::string r_grid;
  double epsilon = 0.01;
  int k0 = 5;
  std::string criterion = "bic";
  double inner_init = 1.0;
  int max_iters = 250;
  int workers = 0;
  bool emit_traces = false;
  std::string out;
};

json to_json(const BenchmarkCliOptions& o) {
  return json{{"command", "benchmark"},
              {"system", o.system},
              {"noise_levels", o.noise_levels},
              {"seeds", o.seeds},
              {"master_seed", o.master_seed},
              {"gap", o.gap},
              {"drop", o.drop},
              {"dt_list", o.dt_list},
              {"refine_list", o.refine_list},
              {"library_degree", o.degree},
              {"include_constant", o.include_constant},
              {"lambda_grid", o.lambda_grid},
              {"r_grid", o.r_grid},
              {"epsilon", o.epsilon},
              {"k0", o.k0},
              {"criterion", o.criterion},
              {"inner_init", o.inner_init},
              {"max_iters", o.max_iters},
              {"emit_traces", o.emit_traces}};
}

void from_json_opts(const json& j, BenchmarkCliOptions& o) {
  o.system = j.value("system", o.system);
  o.noise_levels = j.value("noise_levels", o.noise_levels);
  o.seeds = j.value("seeds", o.seeds);
  o.master_seed = j.value("master_seed", o.master_seed);
  o.gap = j.value("gap", o.gap);
  o.drop = j.value("drop", o.drop);
  o.dt_list = j.value("dt_list", o.dt_list);
  o.refine_list = j.value("refine_list", o.refine_list);
  o.degree = j.value("library_degree", o.degree);
  o.include_constant = j.value("include_constant", o.include_constant);
  o.lambda_grid = j.value("lambda_grid", o.lambda_grid);
  o.r_grid = j.value("r_grid", o.r_grid);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.k0 = j.value("k0", o.k0);
  o.criterion = j.value("criterion", o.criterion);
  o.inner_init = j.value("inner_init", o.inner_init);
  o.max_iters = j.value("max_iters", o.max_iters);
  o.emit_traces = j.value("emit_traces", o.emit_traces);
}

struct ResultRow {
  std::string system;
  double noise_pct = 0.0;
  std::uint64_t seed = 0;
  double lambda = 0.0, r = 0.0, re_theta = 0.0, re_u = 0.0, tpr = 0.0, bic = 0.0;
  int iters = 0;
  double wall_time = 0.0;
  double dt = 0.0;
  int refine = 1;
  bool ok = false;
  std::string error;
};

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "system,noise_pct,seed,lambda,R,RE_theta,RE_u,TPR,bic,iters,wall_time,dt,refine,ok,error\n";
  for (const auto& r : rows) {
    os << r.system << "," << format_double(r.noise_pct) << "," << r.seed << ","
       << format_double(r.lambda) << "," << format_double(r.r) << "," << format_double(r.re_theta)
       << "," << format_double(r.re_u) << "," << format_double(r.tpr) << ","
       << format_double(r.bic) << "," << r.iters << "," << format_double(r.wall_time) << ","
       << format_double(r.dt) << "," << r.refine << "," << (r.ok ? 1 : 0) << "," << r.error
       << "\n";
  }
  return os.str();
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty results file");
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 15) throw std::runtime_error("results row has too few columns");
    ResultRow r;
    r.system = cells[0];
    r.noise_pct = std::stod(cells[1]);
    r.seed = std::stoull(cells[2]);
    r.lambda = std::stod(cells[3]);
    r.r = std::stod(cells[4]);
    r.re_theta = std::stod(cells[5]);
    r.re_u = std::stod(cells[6]);
    r.tpr = std::stod(cells[7]);
    r.bic = std::stod(cells[8]);
    r.iters = std::stoi(cells[9]);
    r.wall_time = std::stod(cells[10]);
    r.dt = std::stod(cells[11]);
    r.refine = std::stoi(cells[12]);
    r.ok = cells[13] == "1";
    r.error = cells[14];
    rows.push_back(r);
  }
  return rows;
}

std::string summary_csv(const std::vector<ResultRow>& rows) {
  // keyed aggregation over (system, noise, dt, refine)
  struct Key {
    std::string system;
    double noise, dt;
    int refine;
    bool operator<(const Key& o) const {
      return std::tie(system, noise, dt, refine) < std::tie(o.system, o.noise, o.dt, o.refine);
    }
  };
  std::map<Key, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows)
    if (r.ok) groups[{r.system, r.noise_pct, r.dt, r.refine}].push_back(&r);

  std::ostringstream os;
  os << "system,noise_pct,dt,refine,metric,count,median,q1,q3,whisker_lo,whisker_hi\n";
  for (const auto& [key, group] : groups) {
    const auto emit = [&](const char* metric, auto getter) {
      std::vector<double> vals;
      for (const ResultRow* r : group) vals.push_back(getter(*r));
      const Summary s = summarize(vals);
      os << key.system << "," << format_double(key.noise) << "," << format_double(key.dt) << ","
         << key.refine << "," << metric << "," << s.count << "," << format_double(s.median) << ","
         << format_double(s.q1) << "," << format_double(s.q3) << "," << format_double(s.whisker_lo)
         << "," << format_double(s.whisker_hi) << "\n";
    };
    emit("RE_theta", [](const ResultRow& r) { return r.re_theta; });
    emit("RE_u", [](const ResultRow& r) { return r.re_u; });
    emit("TPR", [](const ResultRow& r) { return r.tpr; });
  }
  return os.str();
}

int cmd_benchmark(const BenchmarkCliOptions& opt) {
  const auto& base = benchmark_system(opt.system);
  std::vector<double> dts = opt.dt_list.empty() ? std::vector<double>{base.sample_dt}
                                                : parse_list(opt.dt_list);
  std::vector<double> refines = opt.refine_list.empty() ? std::vector<double>{1.0}
                                                        : parse_list(opt.refine_list);
  const double horizon = (base.sample_count - 1) * base.sample_dt;

  std::vector<ResultRow> rows;
  const fs::path dir = resolve_out(opt.out);
  int failures = 0, total = 0;
  for (double dt : dts) {
    for (double refine_d : refines) {
      const int refine = static_cast<int>(refine_d);
      BenchmarkConfig cfg;
      cfg.system = opt.system;
      cfg.noise_levels = parse_list(opt.noise_levels);
      cfg.num_seeds = opt.seeds;
      cfg.master_seed = opt.master_seed;
      if (!opt.gap.empty()) {
        const NoiseSpec spec = make_noise_spec(0, 0, opt.gap, 0);
        cfg.drop = spec.drop;
        cfg.gap_start = spec.gap_start;
        cfg.gap_end = spec.gap_end;
      } else if (opt.drop > 0.0) {
        cfg.drop = NoiseSpec::Drop::Random;
        cfg.drop_fraction = opt.drop;
      }
      if (opt.dt_list.empty()) {
        cfg.sample_dt = 0.0;
        cfg.sample_count = 0;
      } else {
        cfg.sample_dt = dt;
        cfg.sample_count = static_cast<int>(std::lround(horizon / dt)) + 1;
      }
      cfg.library_degree = opt.degree;
      cfg.include_constant = opt.include_constant;
      cfg.search.grid = default_hyper_grid();
      if (!opt.lambda_grid.empty()) cfg.search.grid.lambdas = parse_list(opt.lambda_grid);
      if (!opt.r_grid.empty()) cfg.search.grid.sparsity_weights = parse_list(opt.r_grid);
      cfg.search.k0 = opt.k0;
      cfg.search.refinement = refine;
      cfg.search.epsilon = opt.epsilon;
      cfg.search.criterion = opt.criterion == "aic" ? Criterion::Aic : Criterion::Bic;
      cfg.search.inner_init = opt.inner_init;
      cfg.search.lm.max_iters = opt.max_iters;
      cfg.run_workers = opt.workers > 0 ? opt.workers : default_workers();

      const auto records = run_benchmark(cfg);
      for (const auto& rec : records) {
        ResultRow row;
        row.system = rec.system;
        row.noise_pct = rec.noise * 100.0;
        row.seed = rec.seed;
        row.ok = rec.ok;
        row.error = rec.error;
        row.dt = cfg.sample_dt > 0 ? cfg.sample_dt : base.sample_dt;
        row.refine = refine;
        if (rec.ok) {
          row.lambda = rec.lambda;
          row.r = rec.sparsity_weight;
          row.re_theta = rec.re_theta;
          row.re_u = rec.re_u;
          row.tpr = rec.tpr;
          row.bic = rec.ic;
          row.iters = rec.selection_iters;
          row.wall_time = rec.wall_seconds;
          if (opt.emit_traces) {
            std::ostringstream tcsv;
            write_selection_trace_csv(rec.trace, tcsv);
            std::ostringstream name;
            name << "trace_" << rec.system << "_n" << row.noise_pct << "_s" << rec.seed << ".csv";
            atomic_write(dir / name.str(), tcsv.str());
          }
        } else {
          ++failures;
        }
        ++total;
        rows.push_back(row);
      }
    }
  }

  atomic_write(dir / "results.csv", results_csv(rows));
  atomic_write(dir / "summary.csv", summary_csv(rows));
  atomic_write(dir / "manifest.json", to_json(opt).dump(2) + "\n");
  std::cout << "benchmark complete: " << total - failures << "/" << total << " runs succeeded\n";
  if (failures > 0)
    std::cerr << "warning: " << failures << " runs failed; see results.csv\n";
  return failures == total && total > 0 ? 1 : 0;
}

int cmd_report(const std::string& results_dir, const std::string& out) {
  const fs::path src = fs::path(results_dir) / "results.csv";
  if (!fs::exists(src)) throw std::runtime_error("no results.csv under " + results_dir);
  const auto rows = parse_results_csv(read_file(src));
  if (rows.empty()) throw std::runtime_error("results.csv has no data rows");
  const fs::path dir = resolve_out(out.empty() ? results_dir : out);
  atomic_write(dir / "summary.csv", summary_csv(rows));
  std::cout << "wrote " << (dir / "summary.csv").string() << "\n";
  return 0;
}

template <typename Options>
void maybe_load_manifest(const std::string& manifest_path, Options& opt) {
  if (manifest_path.empty()) return;
  const json j = json::parse(read_file(manifest_path));
  from_json_opts(j, opt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse ODE discovery from noisy, incomplete time series"};
  app.require_subcommand(1);

  SimulateOptions sim;
  std::string sim_manifest;
  auto* simulate = app.add_subcommand("simulate", "generate synthetic observations");
  simulate->add_option("--system", sim.system, "benchmark system (vdp, lorenz, lorenz96, colpitts)");
  simulate->add_option("--noise", sim.noise, "noise fraction, e.g. 0.2 for 20%");
  simulate->add_option("--seed", sim.seed, "noise seed");
  simulate->add_option("--gap", sim.gap, "remove samples with start <= t < end (start:end)");
  simulate->add_option("--drop", sim.drop, "randomly drop this fraction of entries");
  simulate->add_option("--dt", sim.dt, "sampling interval override");
  simulate->add_option("--samples", sim.samples, "sample count override");
  simulate->add_option("--out", sim.out, "output directory");
  simulate->add_option("--manifest", sim_manifest, "load options from a manifest file");

  DiscoverOptions dis;
  std::string dis_manifest;
  auto* discover = app.add_subcommand("discover", "discover a sparse model from data");
  discover->add_option("--data", dis.data, "observations CSV");
  discover->add_option("--truth", dis.truth, "noise-free trajectory CSV for metrics");
  discover->add_flag("--standardize", dis.standardize, "fit against standardized states");
  discover->add_option("--library-degree", dis.degree, "max monomial degree");
  discover->add_flag("--include-constant", dis.include_constant, "include the constant term");
  discover->add_option("--nonlinear", dis.nonlinear, "extra terms, e.g. exp:1");
  discover->add_option("--lambda-grid", dis.lambda_grid, "comma-separated lambda values");
  discover->add_option("--r-grid", dis.r_grid, "comma-separated sparsity weights");
  discover->add_option("--epsilon", dis.epsilon, "smooth-L0 width");
  discover->add_option("--k0", dis.k0, "pruning block size");
  discover->add_option("--refine", dis.refine, "grid refinement factor");
  discover->add_option("--criterion", dis.criterion, "bic or aic")
      ->check(CLI::IsMember({"bic", "aic"}));
  discover->add_option("--theta-init", dis.theta_init, "initial coefficient value");
  discover->add_option("--inner-init", dis.inner_init, "initial inner-parameter value");
  discover->add_option("--max-iters", dis.max_iters, "optimizer iteration budget");
  discover->add_option("--grad-tol", dis.grad_tol, "optimizer gradient tolerance");
  discover->add_option("--workers", dis.workers, "concurrent grid cells");
  discover->add_option("--out", dis.out, "output directory");
  discover->add_option("--manifest", dis_manifest, "load options from a manifest file");

  BenchmarkCliOptions ben;
  std::string ben_manifest;
  auto* benchmark = app.add_subcommand("benchmark", "run a seed x noise benchmark matrix");
  benchmark->add_option("--system", ben.system, "benchmark system");
  benchmark->add_option("--noise-levels", ben.noise_levels, "comma-separated noise fractions");
  benchmark->add_option("--seeds", ben.seeds, "realizations per noise level");
  benchmark->add_option("--master-seed", ben.master_seed, "master seed");
  benchmark->add_option("--gap", ben.gap, "continuous gap start:end");
  benchmark->add_option("--drop", ben.drop, "random drop fraction");
  benchmark->add_option("--dt-list", ben.dt_list, "sampling-interval sweep");
  benchmark->add_option("--refine-list", ben.refine_list, "refinement-factor sweep");
  benchmark->add_option("--library-degree", ben.degree, "max monomial degree (0 = default)");
  benchmark->add_option("--include-constant", ben.include_constant,
                        "0/1 constant-term override (-1 = default)");
  benchmark->add_option("--lambda-grid", ben.lambda_grid, "comma-separated lambda values");
  benchmark->add_option("--r-grid", ben.r_grid, "comma-separated sparsity weights");
  benchmark->add_option("--epsilon", ben.epsilon, "smooth-L0 width");
  benchmark->add_option("--k0", ben.k0, "pruning block size");
  benchmark->add_option("--criterion", ben.criterion, "bic or aic")
      ->check(CLI::IsMember({"bic", "aic"}));
  benchmark->add_option("--inner-init", ben.inner_init, "initial inner-parameter value");
  benchmark->add_option("--max-iters", ben.max_iters, "optimizer iteration budget");
  benchmark->add_option("--workers", ben.workers, "concurrent runs");
  benchmark->add_flag("--emit-traces", ben.emit_traces, "write per-run selection traces");
  benchmark->add_option("--out", ben.out, "output directory");
  benchmark->add_option("--manifest", ben_manifest, "load options from a manifest file");

  std::string rep_results, rep_out;
  auto* report = app.add_subcommand("report", "aggregate results into box-plot summaries");
  report->add_option("--results", rep_results, "directory holding results.csv")->required();
  report->add_option("--out", rep_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (simulate->parsed()) {
      maybe_load_manifest(sim_manifest, sim);
      return cmd_simulate(sim);
    }
    if (discover->parsed()) {
      maybe_load_manifest(dis_manifest, dis);
      return cmd_discover(dis);
    }
    if (benchmark->parsed()) {
      maybe_load_manifest(ben_manifest, ben);
      return cmd_benchmark(ben);
    }
    if (report->parsed()) return cmd_report(rep_results, rep_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
