#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sysid/lm_optimizer.hpp"
#include "support/toy_objectives.hpp"

#include <random>
#include <sstream>

using namespace sysid;
using sysid::testing::QuadraticObjective;
using sysid::testing::RosenbrockObjective;

TEST_CASE("strictly convex quadratic converges to the origin") {
  QuadraticObjective quad(2.0 * Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  LMConfig cfg;
  const auto res = minimize(quad, Eigen::Vector2d(3.0, 4.0), cfg);
  CHECK(res.status == LMStatus::Converged);
  CHECK(res.f < 1e-16);
  CHECK(res.x.norm() < 1e-8);
}

TEST_CASE("rosenbrock reaches (1, 1)") {
  RosenbrockObjective rosen;
  LMConfig cfg;
  cfg.max_iters = 2000;
  const auto res = minimize(rosen, Eigen::Vector2d(-1.2, 1.0), cfg);
  CHECK(res.status == LMStatus::Converged);
  CHECK(std::abs(res.x(0) - 1.0) < 1e-6);
  CHECK(std::abs(res.x(1) - 1.0) < 1e-6);
}

TEST_CASE("one undamped step solves a positive-definite quadratic exactly") {
  Eigen::MatrixXd a(3, 3);
  a << 5, 1, 0, 1, 4, 1, 0, 1, 3;
  const Eigen::Vector3d b(1.0, -2.0, 0.5);
  QuadraticObjective quad(a, b);
  LMConfig cfg;
  cfg.alpha_init = 0.0;
  cfg.alpha_min = 0.0;
  cfg.max_iters = 1;
  const auto res = minimize(quad, Eigen::Vector3d(2.0, -1.0, 4.0), cfg);
  const Eigen::Vector3d exact = a.ldlt().solve(-b);
  CHECK((res.x - exact).norm() < 1e-12);
}

TEST_CASE("accepted steps strictly decrease the objective; trace is bounded") {
  RosenbrockObjective rosen;
  LMConfig cfg;
  cfg.max_iters = 400;
  const auto res = minimize(rosen, Eigen::Vector2d(3.0, -3.0), cfg);
  CHECK(static_cast<int>(res.trace.size()) <= cfg.max_iters);
  double last = std::numeric_limits<double>::infinity();
  bool first = true;
  for (const auto& it : res.trace) {
    CHECK(it.alpha >= 0.0);
    CHECK(it.alpha <= cfg.alpha_max);
    if (it.accepted) {
      if (!first) CHECK(it.f < last);
      last = it.f;
      first = false;
    }
  }
}

TEST_CASE("indefinite start: damping retries recover a descent step") {
  // saddle at the origin; H(x0) indefinite so the undamped solve must be
  // re-damped inside the iteration
  Eigen::MatrixXd a(2, 2);
  a << 1, 0, 0, -2;
  class Saddle : public Objective {
   public:
    int dimension() const override { return 2; }
    double value(const Eigen::VectorXd& x) const override {
      return 0.5 * (x(0) * x(0) - 2.0 * x(1) * x(1)) + 0.05 * std::pow(x(1), 4);
    }
    void gradient(const Eigen::VectorXd& x, Eigen::VectorXd& g) const override {
      g.resize(2);
      g(0) = x(0);
      g(1) = -2.0 * x(1) + 0.2 * std::pow(x(1), 3);
    }
    void hessian_vector(const Eigen::VectorXd& x, const Eigen::VectorXd& v,
                        Eigen::VectorXd& out) const override {
      out.resize(2);
      out(0) = v(0);
      out(1) = (-2.0 + 0.6 * x(1) * x(1)) * v(1);
    }
    SparsityPattern sparsity() const override {
      SparsityPattern p;
      p.num_state_vars = 2;
      p.state_neighbors = {{}, {}};
      return p;
    }
  } saddle;

  LMConfig cfg;
  cfg.alpha_init = 1e-10;  // small damping forces an indefinite first solve
  cfg.max_iters = 300;
  const auto res = minimize(saddle, Eigen::Vector2d(0.5, 0.4), cfg);
  CHECK(res.status == LMStatus::Converged);
  CHECK(res.grad_norm <= cfg.grad_tol);
}

TEST_CASE("trace exports as CSV") {
  QuadraticObjective quad(Eigen::Matrix2d::Identity(), Eigen::Vector2d(1.0, 1.0));
  const auto res = minimize(quad, Eigen::Vector2d(0.0, 0.0), LMConfig{});
  std::ostringstream os;
  write_trace_csv(res.trace, os);
  CHECK(os.str().rfind("iter,f,grad_norm,alpha,rho,accepted", 0) == 0);
}

TEST_CASE("configuration validation") {
  LMConfig bad;
  bad.tau1 = 1.5;
  CHECK_THROWS(validate(bad));
  bad = LMConfig{};
  bad.rho_low = 0.9;
  CHECK_THROWS(validate(bad));
  bad = LMConfig{};
  bad.max_iters = 0;
  CHECK_THROWS(validate(bad));
}
