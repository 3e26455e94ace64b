#include "sysid/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sysid {

void Objective::parameter_hessian(const Eigen::VectorXd& x, Eigen::MatrixXd& strip,
                                  Eigen::MatrixXd& param_block) const {
  // Fallback: one exact product per parameter column.
  const int S = state_count();
  const int P = parameter_count();
  strip.setZero(S, P);
  param_block.setZero(P, P);
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(dimension());
  Eigen::VectorXd col(dimension());
  for (int q = 0; q < P; ++q) {
    unit(S + q) = 1.0;
    hessian_vector(x, unit, col);
    unit(S + q) = 0.0;
    strip.col(q) = col.head(S);
    param_block.col(q) = col.tail(P);
  }
}

namespace {

double phi_prime(double t, double eps) {
  return t / (eps * eps) * std::exp(-t * t / (2.0 * eps * eps));
}

double phi_second(double t, double eps) {
  const double e2 = eps * eps;
  return (1.0 / e2 - t * t / (e2 * e2)) * std::exp(-t * t / (2.0 * e2));
}


}  // namespace

struct DiscreteLossObjective::Impl {
  // Problem data
  Eigen::VectorXd times;
  Eigen::VectorXd dt;
  int n = 0;  // grid points
  int d = 0;
  CandidateLibrary lib;
  Eigen::MatrixXi mask;
  LossWeights weights;
  bool with_penalty = false;
  Observations obs;

  struct DataEntry {
    int grid_row;
    int comp;
    double value;
  };
  std::vector<DataEntry> data;
  std::vector<int> data_rows;
  int n_hat = 0;

  // Active layout
  std::vector<std::pair<int, int>> active_coeffs;  // (row, term), row-major
  Eigen::MatrixXi coeff_index;                     // d x p -> local index or -1
  std::vector<int> active_cols;                    // library columns active in some row
  std::vector<int> col_of_term;                    // term -> active column slot or -1

  struct InnerInfo {
    int slot;       // declared inner-parameter id
    int host_term;  // library column of exp(a x_v)
    int host_col;   // position of host term in active_cols
    int var;        // state index inside the exponential
    bool anchored;  // dynamic unit-norm scaling against anchor samples
  };
  std::vector<InnerInfo> inner;
  mutable std::vector<ExpAnchorStats> inner_stats;  // per local inner, at cached x
  int nc = 0, nq = 0, nk = 0;
  int S = 0, P = 0, dim = 0;
  int max_exp = 0;  // largest monomial exponent, for the power table

  // Cache of evaluation work at the last point (single-threaded use).
  mutable Eigen::VectorXd cached_x;
  mutable int cache_level = 0;  // 0 none, 1 values+residuals, 3 full derivatives
  mutable Eigen::MatrixXd U;           // n x d
  mutable Eigen::MatrixXd theta;       // d x p, masked entries zero
  mutable Eigen::VectorXd inner_vals;  // per local inner parameter
  mutable std::vector<double> tv;      // [nI][nk]
  mutable std::vector<double> resid;   // [nI][d]
  mutable std::vector<double> tdx;     // [nI][nk][d]
  mutable std::vector<double> tdxx;    // [nI][nk][d][d]
  mutable std::vector<double> G;       // [nI][d][d]   d f_c / d x_a
  mutable std::vector<double> W;       // [nI][d][d]   sum_c r_c d2 f_c / dx dx
  mutable std::vector<double> rho;     // [nI][nk]     sum_c r_c theta(c, k)
  mutable std::vector<double> tda;     // [nI][nq]
  mutable std::vector<double> tdaa;    // [nI][nq]
  mutable std::vector<double> tdxda;   // [nI][nq]     d/dx_v of dN/da
  mutable std::vector<double> powtab;  // [d][max_exp+1] scratch per midpoint

  int intervals() const { return n - 1; }

  void unpack_into_cache(const Eigen::VectorXd& x) const {
    U.resize(n, d);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < d; ++a) U(i, a) = x(i * d + a);
    theta = Eigen::MatrixXd::Zero(d, lib.size());
    for (int ci = 0; ci < nc; ++ci) {
      const auto [row, term] = active_coeffs[static_cast<std::size_t>(ci)];
      theta(row, term) = x(S + ci);
    }
    inner_vals.resize(nq);
    for (int q = 0; q < nq; ++q) inner_vals(q) = x(S + nc + q);
  }

  // Evaluates term values (and derivatives at level 3) at every interval
  // midpoint and accumulates residuals and contraction tensors.
  void fill(const Eigen::VectorXd& x, int level) const {
    if (level >= 2) level = 3;
    if (cached_x.size() == x.size() && cache_level >= level && cached_x == x) return;
    unpack_into_cache(x);

    const int nI = intervals();
    tv.assign(static_cast<std::size_t>(nI) * nk, 0.0);
    resid.assign(static_cast<std::size_t>(nI) * d, 0.0);
    if (nq > 0) {
      tda.assign(static_cast<std::size_t>(nI) * nq, 0.0);
      tdaa.assign(static_cast<std::size_t>(nI) * nq, 0.0);
      tdxda.assign(static_cast<std::size_t>(nI) * nq, 0.0);
    }
    const bool full = level >= 3;
    if (full) {
      tdx.assign(static_cast<std::size_t>(nI) * nk * d, 0.0);
      tdxx.assign(static_cast<std::size_t>(nI) * nk * d * d, 0.0);
      G.assign(static_cast<std::size_t>(nI) * d * d, 0.0);
      W.assign(static_cast<std::size_t>(nI) * d * d, 0.0);
      rho.assign(static_cast<std::size_t>(nI) * nk, 0.0);
    }

    powtab.assign(static_cast<std::size_t>(d) * (max_exp + 1), 1.0);
    std::vector<double> mid(static_cast<std::size_t>(d));

    inner_stats.assign(static_cast<std::size_t>(nq), ExpAnchorStats{});
    for (int q = 0; q < nq; ++q) {
      const auto& info = inner[static_cast<std::size_t>(q)];
      if (info.anchored)
        inner_stats[static_cast<std::size_t>(q)] = exp_anchor_stats(
            lib.exp_anchors[static_cast<std::size_t>(info.slot)], inner_vals(q));
    }

    for (int i = 0; i < nI; ++i) {
      for (int a = 0; a < d; ++a) {
        mid[static_cast<std::size_t>(a)] = 0.5 * (U(i, a) + U(i + 1, a));
        double* row = &powtab[static_cast<std::size_t>(a) * (max_exp + 1)];
        row[0] = 1.0;
        for (int e = 1; e <= max_exp; ++e) row[e] = row[e - 1] * mid[static_cast<std::size_t>(a)];
      }
      auto pw = [&](int a, int e) { return powtab[static_cast<std::size_t>(a) * (max_exp + 1) + e]; };

      double* tvi = &tv[static_cast<std::size_t>(i) * nk];
      for (int kk = 0; kk < nk; ++kk) {
        const int k = active_cols[static_cast<std::size_t>(kk)];
        const Term& t = lib.terms[static_cast<std::size_t>(k)];
        const double inv_s = 1.0 / lib.scales(k);
        if (t.kind == TermKind::Monomial) {
          double v = 1.0;
          for (int a = 0; a < d; ++a) v *= pw(a, t.exponents[static_cast<std::size_t>(a)]);
          tvi[kk] = v * inv_s;
          if (full) {
            double* dxk = &tdx[(static_cast<std::size_t>(i) * nk + kk) * d];
            double* dxxk = &tdxx[((static_cast<std::size_t>(i) * nk + kk) * d) * d];
            for (int a = 0; a < d; ++a) {
              const int ea = t.exponents[static_cast<std::size_t>(a)];
              if (ea == 0) continue;
              double g = ea * pw(a, ea - 1);
              for (int b = 0; b < d; ++b)
                if (b != a) g *= pw(b, t.exponents[static_cast<std::size_t>(b)]);
              dxk[a] = g * inv_s;
            }
            for (int a = 0; a < d; ++a) {
              const int ea = t.exponents[static_cast<std::size_t>(a)];
              if (ea >= 2) {
                double h = static_cast<double>(ea) * (ea - 1) * pw(a, ea - 2);
                for (int b = 0; b < d; ++b)
                  if (b != a) h *= pw(b, t.exponents[static_cast<std::size_t>(b)]);
                dxxk[a * d + a] = h * inv_s;
              }
              for (int b = a + 1; b < d; ++b) {
                const int eb = t.exponents[static_cast<std::size_t>(b)];
                if (ea == 0 || eb == 0) continue;
                double h = static_cast<double>(ea) * eb * pw(a, ea - 1) * pw(b, eb - 1);
                for (int c = 0; c < d; ++c)
                  if (c != a && c != b) h *= pw(c, t.exponents[static_cast<std::size_t>(c)]);
                h *= inv_s;
                dxxk[a * d + b] = h;
                dxxk[b * d + a] = h;
              }
            }
          }
        } else {
          // Locate the local inner index for this term.
          int q = -1;
          for (int qi = 0; qi < nq; ++qi)
            if (inner[static_cast<std::size_t>(qi)].host_term == k) q = qi;
          const auto& info = inner[static_cast<std::size_t>(q)];
          const double a_val = inner_vals(q);
          const int v_idx = t.variable_index;
          const double xv = mid[static_cast<std::size_t>(v_idx)];
          double v, da, daa, dxda;
          if (info.anchored) {
            const ExpAnchorStats& st = inner_stats[static_cast<std::size_t>(q)];
            const double centered = xv - st.mean;
            v = std::exp(a_val * xv - st.log_norm);
            da = centered * v;
            daa = (centered * centered - 2.0 * st.variance) * v;
            dxda = (1.0 + a_val * centered) * v;
          } else {
            v = std::exp(a_val * xv) * inv_s;
            da = xv * v;
            daa = xv * xv * v;
            dxda = (1.0 + a_val * xv) * v;
          }
          tvi[kk] = v;
          tda[static_cast<std::size_t>(i) * nq + q] = da;
          tdaa[static_cast<std::size_t>(i) * nq + q] = daa;
          tdxda[static_cast<std::size_t>(i) * nq + q] = dxda;
          if (full) {
            tdx[(static_cast<std::size_t>(i) * nk + kk) * d + v_idx] = a_val * v;
            tdxx[((static_cast<std::size_t>(i) * nk + kk) * d + v_idx) * d + v_idx] = a_val * a_val * v;
          }
        }
      }

      const double inv_dt = 1.0 / dt(i);
      double* ri = &resid[static_cast<std::size_t>(i) * d];
      for (int c = 0; c < d; ++c) {
        double f = 0.0;
        for (int kk = 0; kk < nk; ++kk)
          f += theta(c, active_cols[static_cast<std::size_t>(kk)]) * tvi[kk];
        ri[c] = (U(i + 1, c) - U(i, c)) * inv_dt - f;
      }

      if (full) {
        double* Gi = &G[static_cast<std::size_t>(i) * d * d];
        double* Wi = &W[static_cast<std::size_t>(i) * d * d];
        double* rhoi = &rho[static_cast<std::size_t>(i) * nk];
        for (int kk = 0; kk < nk; ++kk) {
          const int k = active_cols[static_cast<std::size_t>(kk)];
          double rk = 0.0;
          for (int c = 0; c < d; ++c) rk += ri[c] * theta(c, k);
          rhoi[kk] = rk;
          const double* dxk = &tdx[(static_cast<std::size_t>(i) * nk + kk) * d];
          for (int c = 0; c < d; ++c) {
            const double th = theta(c, k);
            if (th == 0.0) continue;
            for (int a = 0; a < d; ++a) Gi[c * d + a] += th * dxk[a];
          }
          if (rk != 0.0) {
            const double* dxxk = &tdxx[((static_cast<std::size_t>(i) * nk + kk) * d) * d];
            for (int a = 0; a < d; ++a)
              for (int b = 0; b < d; ++b) Wi[a * d + b] += rk * dxxk[a * d + b];
          }
        }
      }
    }

    cached_x = x;
    cache_level = level;
  }
};

DiscreteLossObjective::DiscreteLossObjective(const StateGrid& grid, const Observations& obs,
                                             const CandidateLibrary& lib,
                                             const Eigen::MatrixXi& mask,
                                             const LossWeights& weights, bool with_penalty)
    : impl_(new Impl) {
  validate(weights);
  if (mask.rows() != lib.state_dim || mask.cols() != lib.size())
    throw std::invalid_argument("mask does not match the library");
  if (static_cast<int>(grid.data_rows.size()) != obs.sample_count())
    throw std::invalid_argument("grid does not match the observations");

  Impl& im = *impl_;
  im.times = grid.times;
  im.n = grid.size();
  im.d = lib.state_dim;
  im.dt.resize(im.n - 1);
  for (int i = 0; i + 1 < im.n; ++i) im.dt(i) = grid.times(i + 1) - grid.times(i);
  im.lib = lib;
  im.mask = mask;
  im.weights = weights;
  im.with_penalty = with_penalty;
  im.obs = obs;
  im.data_rows = grid.data_rows;

  for (int s = 0; s < obs.sample_count(); ++s)
    for (int c = 0; c < obs.state_dim(); ++c)
      if (obs.mask(s, c) != 0)
        im.data.push_back({grid.data_rows[static_cast<std::size_t>(s)], c, obs.values(s, c)});
  im.n_hat = static_cast<int>(im.data.size());

  im.coeff_index = Eigen::MatrixXi::Constant(im.d, lib.size(), -1);
  for (int j = 0; j < im.d; ++j)
    for (int k = 0; k < lib.size(); ++k)
      if (mask(j, k) != 0) {
        im.coeff_index(j, k) = static_cast<int>(im.active_coeffs.size());
        im.active_coeffs.emplace_back(j, k);
      }
  im.col_of_term.assign(static_cast<std::size_t>(lib.size()), -1);
  for (int k = 0; k < lib.size(); ++k) {
    bool active = false;
    for (int j = 0; j < im.d; ++j) active = active || mask(j, k) != 0;
    if (active) {
      im.col_of_term[static_cast<std::size_t>(k)] = static_cast<int>(im.active_cols.size());
      im.active_cols.push_back(k);
    }
  }
  for (int k = 0; k < lib.size(); ++k) {
    const Term& t = lib.terms[static_cast<std::size_t>(k)];
    if (t.kind != TermKind::ParametricExponential) continue;
    if (im.col_of_term[static_cast<std::size_t>(k)] < 0) continue;
    const bool anchored =
        lib.exp_anchors[static_cast<std::size_t>(t.inner_param_id)].size() > 0;
    im.inner.push_back({t.inner_param_id, k, im.col_of_term[static_cast<std::size_t>(k)],
                        t.variable_index, anchored});
  }

  im.nc = static_cast<int>(im.active_coeffs.size());
  im.nq = static_cast<int>(im.inner.size());
  im.nk = static_cast<int>(im.active_cols.size());
  im.S = im.n * im.d;
  im.P = im.nc + im.nq;
  im.dim = im.S + im.P;
  im.max_exp = 1;
  for (const Term& t : lib.terms)
    if (t.kind == TermKind::Monomial)
      for (int e : t.exponents) im.max_exp = std::max(im.max_exp, e);
}

DiscreteLossObjective::~DiscreteLossObjective() = default;

int DiscreteLossObjective::dimension() const { return impl_->dim; }
int DiscreteLossObjective::parameter_count() const { return impl_->P; }
int DiscreteLossObjective::active_coefficients() const { return impl_->nc; }
int DiscreteLossObjective::active_inner_parameters() const { return impl_->nq; }

double DiscreteLossObjective::value(const Eigen::VectorXd& x) const {
  const Impl& im = *impl_;
  im.fill(x, 1);
  double model_sq = 0.0;
  for (double r : im.resid) model_sq += r * r;
  double out = model_sq / im.n;
  if (im.n_hat > 0) {
    double data_sq = 0.0;
    for (const auto& e : im.data) {
      const double diff = e.value - im.U(e.grid_row, e.comp);
      data_sq += diff * diff;
    }
    out += im.weights.lambda * data_sq / im.n_hat;
  }
  if (im.with_penalty && im.nc > 0 && im.weights.sparsity_weight > 0.0) {
    const double inv = 1.0 / (2.0 * im.weights.epsilon * im.weights.epsilon);
    double pen = 0.0;
    for (int ci = 0; ci < im.nc; ++ci) {
      const double t = x(im.S + ci);
      pen += 1.0 - std::exp(-t * t * inv);
    }
    out += im.weights.sparsity_weight * pen / im.nc;
  }
  return out;
}

void DiscreteLossObjective::gradient(const Eigen::VectorXd& x, Eigen::VectorXd& out) const {
  const Impl& im = *impl_;
  im.fill(x, 3);
  out.setZero(im.dim);
  const double cm = 2.0 / im.n;
  const int d = im.d;

  for (int i = 0; i < im.intervals(); ++i) {
    const double* ri = &im.resid[static_cast<std::size_t>(i) * d];
    const double* Gi = &im.G[static_cast<std::size_t>(i) * d * d];
    const double* tvi = &im.tv[static_cast<std::size_t>(i) * im.nk];
    const double inv_dt = 1.0 / im.dt(i);
    for (int a = 0; a < d; ++a) {
      double gsum = 0.0;
      for (int c = 0; c < d; ++c) gsum += ri[c] * Gi[c * d + a];
      const double shared = -0.5 * cm * gsum;
      out(i * d + a) += -cm * ri[a] * inv_dt + shared;
      out((i + 1) * d + a) += cm * ri[a] * inv_dt + shared;
    }
    for (int ci = 0; ci < im.nc; ++ci) {
      const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
      out(im.S + ci) -= cm * ri[row] * tvi[im.col_of_term[static_cast<std::size_t>(term)]];
    }
    for (int q = 0; q < im.nq; ++q) {
      const auto& info = im.inner[static_cast<std::size_t>(q)];
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += ri[c] * im.theta(c, info.host_term);
      out(im.S + im.nc + q) -= cm * s * im.tda[static_cast<std::size_t>(i) * im.nq + q];
    }
  }

  if (im.n_hat > 0) {
    const double cd = 2.0 * im.weights.lambda / im.n_hat;
    for (const auto& e : im.data)
      out(e.grid_row * d + e.comp) += cd * (im.U(e.grid_row, e.comp) - e.value);
  }

  if (im.with_penalty && im.nc > 0 && im.weights.sparsity_weight > 0.0) {
    const double pf = im.weights.sparsity_weight / im.nc;
    for (int ci = 0; ci < im.nc; ++ci)
      out(im.S + ci) += pf * phi_prime(x(im.S + ci), im.weights.epsilon);
  }
}

void DiscreteLossObjective::hessian_vector(const Eigen::VectorXd& x, const Eigen::VectorXd& v,
                                           Eigen::VectorXd& out) const {
  const Impl& im = *impl_;
  im.fill(x, 3);
  out.setZero(im.dim);
  const int d = im.d;
  const double cm = 2.0 / im.n;

  // Direction components against the dense coefficient layout.
  Eigen::MatrixXd ztheta = Eigen::MatrixXd::Zero(d, im.lib.size());
  for (int ci = 0; ci < im.nc; ++ci) {
    const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
    ztheta(row, term) = v(im.S + ci);
  }

  std::vector<double> zeta(static_cast<std::size_t>(d));
  std::vector<double> dr(static_cast<std::size_t>(d));
  std::vector<double> skk(static_cast<std::size_t>(im.nk));

  for (int i = 0; i < im.intervals(); ++i) {
    const double* ri = &im.resid[static_cast<std::size_t>(i) * d];
    const double* Gi = &im.G[static_cast<std::size_t>(i) * d * d];
    const double* Wi = &im.W[static_cast<std::size_t>(i) * d * d];
    const double* tvi = &im.tv[static_cast<std::size_t>(i) * im.nk];
    const double inv_dt = 1.0 / im.dt(i);

    for (int a = 0; a < d; ++a)
      zeta[static_cast<std::size_t>(a)] = 0.5 * (v(i * d + a) + v((i + 1) * d + a));

    // Directional derivative of each residual component.
    for (int c = 0; c < d; ++c) {
      double acc = (v((i + 1) * d + c) - v(i * d + c)) * inv_dt;
      double fdir = 0.0;
      for (int a = 0; a < d; ++a) fdir += Gi[c * d + a] * zeta[static_cast<std::size_t>(a)];
      for (int kk = 0; kk < im.nk; ++kk) {
        const double z = ztheta(c, im.active_cols[static_cast<std::size_t>(kk)]);
        if (z != 0.0) fdir += z * tvi[kk];
      }
      for (int q = 0; q < im.nq; ++q) {
        const auto& info = im.inner[static_cast<std::size_t>(q)];
        const double za = v(im.S + im.nc + q);
        if (za != 0.0)
          fdir += za * im.theta(c, info.host_term) * im.tda[static_cast<std::size_t>(i) * im.nq + q];
      }
      dr[static_cast<std::size_t>(c)] = acc - fdir;
    }

    // Gauss-Newton part: J^T (J v).
    for (int a = 0; a < d; ++a) {
      double bsum = 0.0;
      for (int c = 0; c < d; ++c) bsum += dr[static_cast<std::size_t>(c)] * Gi[c * d + a];
      const double shared = -0.5 * cm * bsum;
      out(i * d + a) += -cm * dr[static_cast<std::size_t>(a)] * inv_dt + shared;
      out((i + 1) * d + a) += cm * dr[static_cast<std::size_t>(a)] * inv_dt + shared;
    }
    for (int ci = 0; ci < im.nc; ++ci) {
      const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
      out(im.S + ci) -= cm * dr[static_cast<std::size_t>(row)] *
                        tvi[im.col_of_term[static_cast<std::size_t>(term)]];
    }
    for (int q = 0; q < im.nq; ++q) {
      const auto& info = im.inner[static_cast<std::size_t>(q)];
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += dr[static_cast<std::size_t>(c)] * im.theta(c, info.host_term);
      out(im.S + im.nc + q) -= cm * s * im.tda[static_cast<std::size_t>(i) * im.nq + q];
    }

    // Curvature part: sum_c r_c times the directional derivative of grad r_c.
    for (int kk = 0; kk < im.nk; ++kk) {
      double s = 0.0;
      const int k = im.active_cols[static_cast<std::size_t>(kk)];
      for (int c = 0; c < d; ++c) s += ri[c] * ztheta(c, k);
      skk[static_cast<std::size_t>(kk)] = s;
    }
    for (int a = 0; a < d; ++a) {
      double kappa = 0.0;
      for (int b = 0; b < d; ++b) kappa += Wi[a * d + b] * zeta[static_cast<std::size_t>(b)];
      for (int kk = 0; kk < im.nk; ++kk) {
        const double s = skk[static_cast<std::size_t>(kk)];
        if (s != 0.0) kappa += s * im.tdx[(static_cast<std::size_t>(i) * im.nk + kk) * d + a];
      }
      for (int q = 0; q < im.nq; ++q) {
        const auto& info = im.inner[static_cast<std::size_t>(q)];
        if (info.var != a) continue;
        const double za = v(im.S + im.nc + q);
        if (za != 0.0)
          kappa += za * im.rho[static_cast<std::size_t>(i) * im.nk + info.host_col] *
                   im.tdxda[static_cast<std::size_t>(i) * im.nq + q];
      }
      const double contrib = -0.5 * cm * kappa;
      out(i * d + a) += contrib;
      out((i + 1) * d + a) += contrib;
    }
    for (int ci = 0; ci < im.nc; ++ci) {
      const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
      const int kk = im.col_of_term[static_cast<std::size_t>(term)];
      double dgrad = 0.0;
      for (int a = 0; a < d; ++a)
        dgrad += im.tdx[(static_cast<std::size_t>(i) * im.nk + kk) * d + a] * zeta[static_cast<std::size_t>(a)];
      for (int q = 0; q < im.nq; ++q) {
        const auto& info = im.inner[static_cast<std::size_t>(q)];
        if (info.host_term == term)
          dgrad += im.tda[static_cast<std::size_t>(i) * im.nq + q] * v(im.S + im.nc + q);
      }
      out(im.S + ci) -= cm * ri[row] * dgrad;
    }
    for (int q = 0; q < im.nq; ++q) {
      const auto& info = im.inner[static_cast<std::size_t>(q)];
      const double rho_h = im.rho[static_cast<std::size_t>(i) * im.nk + info.host_col];
      double dgrad = rho_h * im.tdxda[static_cast<std::size_t>(i) * im.nq + q] *
                     zeta[static_cast<std::size_t>(info.var)];
      dgrad += skk[static_cast<std::size_t>(info.host_col)] * im.tda[static_cast<std::size_t>(i) * im.nq + q];
      dgrad += rho_h * im.tdaa[static_cast<std::size_t>(i) * im.nq + q] * v(im.S + im.nc + q);
      out(im.S + im.nc + q) -= cm * dgrad;
    }
  }

  if (im.n_hat > 0) {
    const double cd = 2.0 * im.weights.lambda / im.n_hat;
    for (const auto& e : im.data) out(e.grid_row * d + e.comp) += cd * v(e.grid_row * d + e.comp);
  }

  if (im.with_penalty && im.nc > 0 && im.weights.sparsity_weight > 0.0) {
    const double pf = im.weights.sparsity_weight / im.nc;
    for (int ci = 0; ci < im.nc; ++ci)
      out(im.S + ci) += pf * phi_second(x(im.S + ci), im.weights.epsilon) * v(im.S + ci);
  }
}

void DiscreteLossObjective::parameter_hessian(const Eigen::VectorXd& x, Eigen::MatrixXd& strip,
                                              Eigen::MatrixXd& param_block) const {
  const Impl& im = *impl_;
  im.fill(x, 3);
  const int d = im.d;
  const double cm = 2.0 / im.n;
  strip.setZero(im.S, im.P);
  param_block.setZero(im.P, im.P);

  // Gram matrix of term values over midpoints, shared by all equations.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(im.nk, im.nk);
  for (int i = 0; i < im.intervals(); ++i) {
    Eigen::Map<const Eigen::VectorXd> tvi(&im.tv[static_cast<std::size_t>(i) * im.nk], im.nk);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(tvi);
  }
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  for (int ci = 0; ci < im.nc; ++ci) {
    const auto [rowi, termi] = im.active_coeffs[static_cast<std::size_t>(ci)];
    for (int cj = ci; cj < im.nc; ++cj) {
      const auto [rowj, termj] = im.active_coeffs[static_cast<std::size_t>(cj)];
      if (rowi != rowj) continue;
      const double v = cm * gram(im.col_of_term[static_cast<std::size_t>(termi)],
                                 im.col_of_term[static_cast<std::size_t>(termj)]);
      param_block(ci, cj) = v;
      param_block(cj, ci) = v;
    }
  }

  for (int i = 0; i < im.intervals(); ++i) {
    const double* ri = &im.resid[static_cast<std::size_t>(i) * d];
    const double* Gi = &im.G[static_cast<std::size_t>(i) * d * d];
    const double* tvi = &im.tv[static_cast<std::size_t>(i) * im.nk];
    const double inv_dt = 1.0 / im.dt(i);

    for (int ci = 0; ci < im.nc; ++ci) {
      const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
      const int kk = im.col_of_term[static_cast<std::size_t>(term)];
      const double tvk = tvi[kk];
      for (int a = 0; a < d; ++a) {
        const double halfG = 0.5 * Gi[row * d + a];
        const double curved = -0.5 * ri[row] * im.tdx[(static_cast<std::size_t>(i) * im.nk + kk) * d + a];
        const double delta = (a == row) ? inv_dt : 0.0;
        strip(i * d + a, ci) += cm * ((delta + halfG) * tvk + curved);
        strip((i + 1) * d + a, ci) += cm * ((-delta + halfG) * tvk + curved);
      }
    }

    for (int q = 0; q < im.nq; ++q) {
      const auto& info = im.inner[static_cast<std::size_t>(q)];
      const int col = im.nc + q;
      const double tda_q = im.tda[static_cast<std::size_t>(i) * im.nq + q];
      const double rho_h = im.rho[static_cast<std::size_t>(i) * im.nk + info.host_col];
      for (int a = 0; a < d; ++a) {
        double gsum = 0.0;
        for (int c = 0; c < d; ++c) gsum += Gi[c * d + a] * im.theta(c, info.host_term);
        double common = 0.5 * gsum * tda_q;
        if (a == info.var)
          common -= 0.5 * rho_h * im.tdxda[static_cast<std::size_t>(i) * im.nq + q];
        const double e_a = im.theta(a, info.host_term) * tda_q;
        strip(i * d + a, col) += cm * (e_a * inv_dt + common);
        strip((i + 1) * d + a, col) += cm * (-e_a * inv_dt + common);
      }

      for (int ci = 0; ci < im.nc; ++ci) {
        const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
        const int kk = im.col_of_term[static_cast<std::size_t>(term)];
        double v = im.theta(row, info.host_term) * tda_q * tvi[kk];
        if (term == info.host_term) v -= ri[row] * tda_q;
        param_block(ci, col) += cm * v;
        param_block(col, ci) += cm * v;
      }

      for (int q2 = q; q2 < im.nq; ++q2) {
        const auto& info2 = im.inner[static_cast<std::size_t>(q2)];
        double v = 0.0;
        for (int c = 0; c < d; ++c)
          v += im.theta(c, info.host_term) * tda_q * im.theta(c, info2.host_term) *
               im.tda[static_cast<std::size_t>(i) * im.nq + q2];
        if (q2 == q) v -= rho_h * im.tdaa[static_cast<std::size_t>(i) * im.nq + q];
        param_block(col, im.nc + q2) += cm * v;
        if (q2 != q) param_block(im.nc + q2, col) += cm * v;
      }
    }
  }

  if (im.with_penalty && im.nc > 0 && im.weights.sparsity_weight > 0.0) {
    const double pf = im.weights.sparsity_weight / im.nc;
    for (int ci = 0; ci < im.nc; ++ci)
      param_block(ci, ci) += pf * phi_second(x(im.S + ci), im.weights.epsilon);
  }
}

SparsityPattern DiscreteLossObjective::sparsity() const {
  return derive_pattern(impl_->n, impl_->lib, impl_->mask);
}

Eigen::VectorXd DiscreteLossObjective::pack(const Eigen::MatrixXd& grid_values,
                                            const CoefficientState& coeffs) const {
  const Impl& im = *impl_;
  if (grid_values.rows() != im.n || grid_values.cols() != im.d)
    throw std::invalid_argument("grid values have wrong shape");
  Eigen::VectorXd x(im.dim);
  for (int i = 0; i < im.n; ++i)
    for (int a = 0; a < im.d; ++a) x(i * im.d + a) = grid_values(i, a);
  for (int ci = 0; ci < im.nc; ++ci) {
    const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
    x(im.S + ci) = coeffs.theta(row, term);
  }
  for (int q = 0; q < im.nq; ++q)
    x(im.S + im.nc + q) = coeffs.inner(im.inner[static_cast<std::size_t>(q)].slot);
  return x;
}

void DiscreteLossObjective::unpack(const Eigen::VectorXd& x, Eigen::MatrixXd& grid_values,
                                   CoefficientState& coeffs) const {
  const Impl& im = *impl_;
  grid_values.resize(im.n, im.d);
  for (int i = 0; i < im.n; ++i)
    for (int a = 0; a < im.d; ++a) grid_values(i, a) = x(i * im.d + a);
  coeffs.theta = Eigen::MatrixXd::Zero(im.d, im.lib.size());
  coeffs.mask = im.mask;
  if (coeffs.inner.size() != im.lib.num_inner_params)
    coeffs.inner = Eigen::VectorXd::Zero(im.lib.num_inner_params);
  coeffs.scaled = true;
  for (int ci = 0; ci < im.nc; ++ci) {
    const auto [row, term] = im.active_coeffs[static_cast<std::size_t>(ci)];
    coeffs.theta(row, term) = x(im.S + ci);
  }
  for (int q = 0; q < im.nq; ++q)
    coeffs.inner(im.inner[static_cast<std::size_t>(q)].slot) = x(im.S + im.nc + q);
}

LossBreakdown DiscreteLossObjective::breakdown(const Eigen::VectorXd& x) const {
  const Impl& im = *impl_;
  StateGrid grid;
  grid.times = im.times;
  grid.data_rows = im.data_rows;
  CoefficientState coeffs;
  unpack(x, grid.values, coeffs);
  LossWeights w = im.weights;
  if (!im.with_penalty) w.sparsity_weight = 0.0;
  return loss(grid, im.obs, im.lib, coeffs, w);
}

}  // namespace sysid
