#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/vec.hpp"

namespace fedsim {

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(-t)) without overflow on either tail.
inline double log1p_exp_neg(double t) {
  if (t >= 0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

// sigmoid(t) * sigmoid(-t); computed from exp(-|t|) so large |t| underflows
// cleanly to 0 instead of cancelling.
inline double sigmoid_prod(double t) {
  const double e = std::exp(-std::abs(t));
  const double d = 1.0 + e;
  return e / (d * d);
}

// Mean logistic loss with an L2 term:
//   F(x) = (1/n) sum_i log(1 + exp(-b_i <a_i, x>)) + (mu/2) |x|^2.
// Single-sample gradient and Hessian-vector oracles fold the L2 term in, so
// each is an unbiased estimate of the full derivative.
class GlmProblem {
 public:
  GlmProblem(const Dataset& data, double mu) : data_(&data), mu_(mu) {
    if (mu < 0) throw ConfigError("mu must be >= 0");
  }

  const Dataset& data() const { return *data_; }
  double mu() const { return mu_; }
  int dim() const { return data_->dim; }

  double loss(std::span<const double> x) const {
    double s = 0;
    for (const auto& smp : data_->samples) s += log1p_exp_neg(smp.label * smp.dot(x));
    return s / static_cast<double>(data_->count()) + 0.5 * mu_ * vec::dot(x, x);
  }

  // out = -b sigmoid(-b<a,x>) a + mu x
  void gradient_at(std::span<const double> x, std::size_t i, std::vector<double>& out) const {
    const Sample& s = data_->samples[i];
    out.assign(x.size(), 0.0);
    const double c = -s.label * sigmoid(-s.label * s.dot(x));
    for (std::size_t j = 0; j < s.idx.size(); ++j) out[static_cast<std::size_t>(s.idx[j])] = c * s.val[j];
    if (mu_ != 0)
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += mu_ * x[k];
  }

  std::vector<double> full_gradient(std::span<const double> x) const {
    std::vector<double> g(x.size(), 0.0);
    for (const auto& s : data_->samples) {
      const double c = -s.label * sigmoid(-s.label * s.dot(x));
      for (std::size_t j = 0; j < s.idx.size(); ++j) g[static_cast<std::size_t>(s.idx[j])] += c * s.val[j];
    }
    vec::scale(g, 1.0 / static_cast<double>(data_->count()));
    if (mu_ != 0) vec::axpy(g, mu_, x);
    return g;
  }

  // Rank-one Hessian-vector product of one sample: s (a^T u) a + mu u with
  // s = sigmoid(t) sigmoid(-t), t = b <a, x>.
  void hvp_at(std::span<const double> x, std::span<const double> u, std::size_t i,
              std::vector<double>& out) const {
    const Sample& s = data_->samples[i];
    out.assign(u.size(), 0.0);
    double au = 0;
    for (std::size_t j = 0; j < s.idx.size(); ++j) au += s.val[j] * u[static_cast<std::size_t>(s.idx[j])];
    const double c = sigmoid_prod(s.label * s.dot(x)) * au;
    for (std::size_t j = 0; j < s.idx.size(); ++j) out[static_cast<std::size_t>(s.idx[j])] = c * s.val[j];
    if (mu_ != 0)
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += mu_ * u[k];
  }

  // Exact Hessian action (mean over samples), used as the reference route.
  std::vector<double> hessian_action(std::span<const double> x, std::span<const double> u) const {
    std::vector<double> h(u.size(), 0.0);
    for (const auto& s : data_->samples) {
      double au = 0;
      for (std::size_t j = 0; j < s.idx.size(); ++j) au += s.val[j] * u[static_cast<std::size_t>(s.idx[j])];
      const double c = sigmoid_prod(s.label * s.dot(x)) * au;
      for (std::size_t j = 0; j < s.idx.size(); ++j) h[static_cast<std::size_t>(s.idx[j])] += c * s.val[j];
    }
    vec::scale(h, 1.0 / static_cast<double>(data_->count()));
    if (mu_ != 0) vec::axpy(h, mu_, u);
    return h;
  }

  Eigen::MatrixXd dense_hessian(std::span<const double> x) const {
    const int d = dim();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
    const double inv_n = 1.0 / static_cast<double>(data_->count());
    for (const auto& s : data_->samples) {
      const double c = sigmoid_prod(s.label * s.dot(x)) * inv_n;
      for (std::size_t j = 0; j < s.idx.size(); ++j)
        for (std::size_t k = j; k < s.idx.size(); ++k)
          H(s.idx[j], s.idx[k]) += c * s.val[j] * s.val[k];
    }
    for (int r = 1; r < d; ++r)
      for (int c = 0; c < r; ++c) H(r, c) = H(c, r);
    if (mu_ != 0) H.diagonal().array() += mu_;
    return H;
  }

 private:
  const Dataset* data_;
  double mu_;
};

struct GradEstimate {
  std::vector<double> g;
  std::size_t index;
};

inline GradEstimate stochastic_gradient(const GlmProblem& p, std::span<const double> x,
                                        IndexSampler& sampler) {
  GradEstimate e;
  e.index = sampler.next();
  p.gradient_at(x, e.index, e.g);
  return e;
}

// Largest row norm; with unit labels this bounds the third-derivative
// distortion rate of the logistic term (self-concordance-style constant).
inline double qsc_alpha(const Dataset& ds) { return max_row_norm(ds); }

struct NewtonOptions {
  double tol = 1e-12;   // on |grad F|
  int max_iters = 100;
};

struct NewtonResult {
  std::vector<double> x;
  double value = 0;
  double grad_norm = 0;
  int iterations = 0;
  bool converged = false;
  bool floored = false;  // Tikhonov floor was needed on some solve
};

// Undamped Newton with dense solves; reference-quality minimizer for
// dimensions where a d x d factorization is cheap.
inline NewtonResult newton_reference(const GlmProblem& p, std::vector<double> x0,
                                     const NewtonOptions& opt = {}) {
  NewtonResult res;
  res.x = std::move(x0);
  if (res.x.empty()) res.x.assign(static_cast<std::size_t>(p.dim()), 0.0);
  const int d = p.dim();
  for (res.iterations = 0; res.iterations < opt.max_iters; ++res.iterations) {
    std::vector<double> g = p.full_gradient(res.x);
    res.grad_norm = vec::norm2(g);
    if (!std::isfinite(res.grad_norm)) break;
    if (res.grad_norm <= opt.tol) {
      res.converged = true;
      break;
    }
    Eigen::MatrixXd H = p.dense_hessian(res.x);
    Eigen::Map<const Eigen::VectorXd> gv(g.data(), d);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    Eigen::VectorXd step;
    if (llt.info() == Eigen::Success) {
      step = llt.solve(-gv);
    }
    if (llt.info() != Eigen::Success || !step.allFinite()) {
      H.diagonal().array() += 1e-10;
      res.floored = true;
      step = Eigen::LDLT<Eigen::MatrixXd>(H).solve(-gv);
      if (!step.allFinite()) break;
    }
    for (int k = 0; k < d; ++k) res.x[static_cast<std::size_t>(k)] += step(k);
  }
  res.value = p.loss(res.x);
  if (res.converged) return res;
  // not converged: report the final gradient norm
  std::vector<double> g = p.full_gradient(res.x);
  res.grad_norm = vec::norm2(g);
  return res;
}

struct Constants {
  double H = 0;      // smoothness bound
  double B = 0;      // domain radius scale
  double sigma = 0;  // gradient-noise std at the reference point
  double rho = 0;    // Hessian-estimate noise scale
  double alpha = 0;  // quasi-self-concordance constant
};

// Plug-in bounds from the data plus an empirical noise probe at x = 0.
// probe_budget >= count enumerates the population value exactly.
inline Constants estimate_constants(const GlmProblem& p, std::size_t probe_budget, rng::Stream stream,
                                    double B = 10.0) {
  Constants c;
  const double amax = max_row_norm(p.data());
  c.alpha = amax;
  c.rho = amax * amax / 4.0;
  c.H = c.rho + p.mu();
  c.B = B;

  const std::vector<double> x0(static_cast<std::size_t>(p.dim()), 0.0);
  const std::vector<double> gbar = p.full_gradient(x0);
  const double gbar2 = vec::dot(gbar, gbar);
  const std::size_t n = p.data().count();
  double acc = 0;
  auto deviation2 = [&](std::size_t i) {
    const Sample& s = p.data().samples[i];
    const double coef = -s.label * 0.5;  // sigmoid(0) = 1/2, x = 0
    double g2 = 0, gd = 0;
    for (std::size_t j = 0; j < s.idx.size(); ++j) {
      const double v = coef * s.val[j];
      g2 += v * v;
      gd += v * gbar[static_cast<std::size_t>(s.idx[j])];
    }
    return g2 - 2.0 * gd + gbar2;
  };
  if (probe_budget >= n) {
    for (std::size_t i = 0; i < n; ++i) acc += deviation2(i);
    c.sigma = std::sqrt(acc / static_cast<double>(n));
  } else {
    if (probe_budget == 0) throw ConfigError("probe_budget must be positive");
    for (std::size_t k = 0; k < probe_budget; ++k)
      acc += deviation2(static_cast<std::size_t>(stream.next_below(n)));
    c.sigma = std::sqrt(acc / static_cast<double>(probe_budget));
  }
  return c;
}

}  // namespace fedsim
