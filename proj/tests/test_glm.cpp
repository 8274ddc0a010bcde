#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fedsim/glm.hpp"
#include "support/synthetic.hpp"

using namespace fedsim;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> random_vec(std::size_t n, rng::Stream& s, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * testsupport::gauss(s);
  return v;
}

}  // namespace

TEST_CASE("scalar kernels") {
  REQUIRE_THAT(sigmoid(0.0), WithinAbs(0.5, 1e-16));
  REQUIRE_THAT(sigmoid(3.0) + sigmoid(-3.0), WithinAbs(1.0, 1e-15));
  REQUIRE(sigmoid(800.0) == 1.0);
  REQUIRE(sigmoid(-800.0) == 0.0);

  REQUIRE_THAT(log1p_exp_neg(0.0), WithinAbs(std::log(2.0), 1e-16));
  // f(-t) - f(t) = t for the two-branch implementation
  for (double t : {0.3, 1.0, 10.0, 40.0, 500.0})
    REQUIRE_THAT(log1p_exp_neg(-t) - log1p_exp_neg(t), WithinRel(t, 1e-12));
  REQUIRE(log1p_exp_neg(800.0) >= 0.0);  // no negative-zero surprises on the far tail

  REQUIRE_THAT(sigmoid_prod(0.0), WithinAbs(0.25, 1e-16));
  for (double t : {0.5, 2.0, 8.0, 30.0})
    REQUIRE_THAT(sigmoid_prod(t), WithinRel(sigmoid(t) * sigmoid(-t), 1e-13));
  REQUIRE(sigmoid_prod(800.0) == 0.0);
  REQUIRE(sigmoid_prod(-800.0) == 0.0);
}

TEST_CASE("loss values on hand-checkable points") {
  const Dataset one = parse_libsvm("+1 1:1\n");
  const GlmProblem p(one, 0.0);
  REQUIRE_THAT(p.loss(std::vector<double>{0.0}), WithinAbs(std::log(2.0), 1e-16));
  REQUIRE_THAT(p.loss(std::vector<double>{10.0}), WithinRel(4.539889921682063e-05, 1e-12));
  const GlmProblem q(one, 2.0);
  REQUIRE_THAT(q.loss(std::vector<double>{10.0}), WithinRel(100.0 + 4.539889921682063e-05, 1e-14));
}

TEST_CASE("single-sample gradient averages to the full gradient") {
  const Dataset ds = testsupport::synthetic_logistic(5, 9, 21);
  for (double mu : {0.0, 0.3}) {
    const GlmProblem p(ds, mu);
    rng::Stream s(4);
    const std::vector<double> x = random_vec(5, s);
    std::vector<double> mean(5, 0.0), g;
    for (std::size_t i = 0; i < ds.count(); ++i) {
      p.gradient_at(x, i, g);
      vec::add(mean, g);
    }
    vec::scale(mean, 1.0 / static_cast<double>(ds.count()));
    const std::vector<double> full = p.full_gradient(x);
    for (std::size_t j = 0; j < 5; ++j) REQUIRE_THAT(mean[j], WithinAbs(full[j], 1e-12));
  }
}

TEST_CASE("full gradient matches finite differences of the loss") {
  const Dataset ds = testsupport::synthetic_logistic(6, 40, 8);
  const GlmProblem p(ds, 0.05);
  rng::Stream s(9);
  const std::vector<double> x = random_vec(6, s);
  const std::vector<double> g = p.full_gradient(x);
  const std::vector<double> fd =
      testsupport::fd_gradient([&](const std::vector<double>& y) { return p.loss(y); }, x);
  for (std::size_t j = 0; j < 6; ++j) REQUIRE_THAT(g[j], WithinAbs(fd[j], 1e-6));
}

TEST_CASE("single-sample HVP averages to the exact Hessian action") {
  const Dataset ds = testsupport::synthetic_logistic(4, 8, 31);
  for (double mu : {0.0, 0.7}) {
    const GlmProblem p(ds, mu);
    rng::Stream s(5);
    const std::vector<double> x = random_vec(4, s), u = random_vec(4, s);
    std::vector<double> mean(4, 0.0), h;
    for (std::size_t i = 0; i < ds.count(); ++i) {
      p.hvp_at(x, u, i, h);
      vec::add(mean, h);
    }
    vec::scale(mean, 1.0 / static_cast<double>(ds.count()));
    const std::vector<double> exact = p.hessian_action(x, u);
    for (std::size_t j = 0; j < 4; ++j) REQUIRE_THAT(mean[j], WithinAbs(exact[j], 1e-12));
  }
}

TEST_CASE("Hessian action matches gradient finite differences") {
  const Dataset ds = testsupport::synthetic_logistic(5, 30, 14);
  const GlmProblem p(ds, 0.2);
  rng::Stream s(6);
  const std::vector<double> x = random_vec(5, s), u = random_vec(5, s);
  const std::vector<double> hu = p.hessian_action(x, u);
  const std::vector<double> fd = testsupport::fd_hessian_action(p, x, u);
  for (std::size_t j = 0; j < 5; ++j) REQUIRE_THAT(hu[j], WithinAbs(fd[j], 1e-6));
}

TEST_CASE("dense Hessian agrees with the matrix-free action") {
  const Dataset ds = testsupport::synthetic_logistic(6, 25, 16);
  const GlmProblem p(ds, 0.4);
  rng::Stream s(7);
  const std::vector<double> x = random_vec(6, s), u = random_vec(6, s);
  const Eigen::MatrixXd H = p.dense_hessian(x);
  REQUIRE((H - H.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::Map<const Eigen::VectorXd> uv(u.data(), 6);
  const Eigen::VectorXd hu = H * uv;
  const std::vector<double> action = p.hessian_action(x, u);
  for (int j = 0; j < 6; ++j) REQUIRE_THAT(hu(j), WithinAbs(action[static_cast<std::size_t>(j)], 1e-12));
}

TEST_CASE("stochastic gradient reports the index it drew") {
  const Dataset ds = testsupport::synthetic_logistic(3, 12, 2);
  const GlmProblem p(ds, 0.1);
  IndexSampler sampler(SamplingMode::WithReplacement, ds.count(), rng::Stream(3));
  const std::vector<double> x(3, 0.25);
  for (int i = 0; i < 20; ++i) {
    const GradEstimate e = stochastic_gradient(p, x, sampler);
    REQUIRE(e.index < ds.count());
    std::vector<double> g;
    p.gradient_at(x, e.index, g);
    REQUIRE(g == e.g);
  }
  REQUIRE(sampler.drawn() == 20);
}

TEST_CASE("newton matches a bisection oracle on the scalar problem") {
  const Dataset one = parse_libsvm("+1 1:1\n");
  const GlmProblem p(one, 1.0);
  const NewtonResult nr = newton_reference(p, {});
  REQUIRE(nr.converged);
  REQUIRE(nr.grad_norm <= 1e-12);
  const double xstar = testsupport::scalar_logistic_argmin(1.0);
  REQUIRE_THAT(nr.x[0], WithinAbs(xstar, 1e-10));
  REQUIRE_THAT(nr.value, WithinAbs(log1p_exp_neg(xstar) + 0.5 * xstar * xstar, 1e-12));
}

TEST_CASE("newton reaches the same optimum from different starts") {
  const Dataset ds = testsupport::synthetic_logistic(8, 120, 19);
  const GlmProblem p(ds, 0.1);
  const NewtonResult a = newton_reference(p, {});
  rng::Stream s(99);
  const NewtonResult b = newton_reference(p, random_vec(8, s, 2.0));
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  REQUIRE_THAT(a.value, WithinAbs(b.value, 1e-12));
  REQUIRE(a.iterations <= 50);
}

TEST_CASE("newton reports non-convergence on a separable unregularized problem") {
  const Dataset ds = parse_libsvm("+1 1:1\n-1 1:-1\n");
  const GlmProblem p(ds, 0.0);
  const NewtonResult nr = newton_reference(p, {}, NewtonOptions{.tol = 1e-12, .max_iters = 15});
  REQUIRE_FALSE(nr.converged);
}

TEST_CASE("constant estimates: exact enumeration and hand values") {
  const Dataset ds = parse_libsvm("+1 1:2\n-1 2:1\n+1 1:1 2:1\n");
  const GlmProblem p(ds, 0.5);
  const Constants c = estimate_constants(p, ds.count(), rng::Stream(1), 7.0);
  REQUIRE(c.alpha == 2.0);           // largest row norm
  REQUIRE(c.rho == 1.0);             // alpha^2 / 4
  REQUIRE(c.H == 1.5);               // rho + mu
  REQUIRE(c.B == 7.0);

  // population noise at x = 0 computed by hand: per-sample gradient -b a / 2
  std::vector<std::vector<double>> gi = {{-1.0, 0.0}, {0.0, 0.5}, {-0.5, -0.5}};
  std::vector<double> gbar(2, 0.0);
  for (const auto& g : gi) vec::add(gbar, g);
  vec::scale(gbar, 1.0 / 3.0);
  double var = 0;
  for (const auto& g : gi)
    for (std::size_t j = 0; j < 2; ++j) var += (g[j] - gbar[j]) * (g[j] - gbar[j]);
  var /= 3.0;
  REQUIRE_THAT(c.sigma, WithinRel(std::sqrt(var), 1e-12));
}

TEST_CASE("sampled noise probe converges to the enumerated value") {
  const Dataset ds = testsupport::synthetic_logistic(6, 400, 23);
  const GlmProblem p(ds, 0.0);
  const Constants exact = estimate_constants(p, ds.count(), rng::Stream(1));
  const Constants probed = estimate_constants(p, 60000, rng::Stream(2));
  REQUIRE_THAT(probed.sigma, WithinRel(exact.sigma, 0.02));
  REQUIRE_THROWS_AS(estimate_constants(p, 0, rng::Stream(3)), ConfigError);
}
