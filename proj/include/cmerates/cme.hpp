#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cmerates/errors.hpp"
#include "cmerates/kernels.hpp"

namespace cmerates::cme {

using kernels::KernelSpec;
using kernels::Point;

// Ridge system (K + n lambda I) shared by the Gram-side estimator. The n
// scaling comes from the 1/n inside the empirical covariance: the operator
// form (C_XX + lambda)^{-1} is (K + n lambda I)^{-1} in Gram coordinates.
struct GramRidge {
  Eigen::LLT<Eigen::MatrixXd> factor;
  int n = 0;
  double lambda = 0.0;

  static GramRidge make(const Eigen::MatrixXd& gram_matrix, double lambda) {
    if (!(lambda > 0.0)) throw argument_error("GramRidge: lambda must be positive");
    if (gram_matrix.rows() != gram_matrix.cols() || gram_matrix.rows() < 1)
      throw argument_error("GramRidge: Gram matrix must be square and nonempty");
    GramRidge g;
    g.n = static_cast<int>(gram_matrix.rows());
    g.lambda = lambda;
    Eigen::MatrixXd a = gram_matrix;
    a.diagonal().array() += static_cast<double>(g.n) * lambda;
    g.factor.compute(a);
    if (g.factor.info() != Eigen::Success)
      throw numeric_error("GramRidge: Cholesky factorization failed (||K||_F = " +
                          std::to_string(gram_matrix.norm()) + ")");
    return g;
  }

  Eigen::VectorXd weights(const Eigen::VectorXd& k_x) const {
    if (k_x.size() != n) throw argument_error("GramRidge: query vector has wrong length");
    return factor.solve(k_x);
  }
};

// Fitted sample CME on raw (x, y) data: mu_hat_{Y|x} = sum_i beta_i(x) l(y_i, .)
// with beta(x) = (K + n lambda I)^{-1} k_x.
struct CmeModel {
  std::vector<Point> x_train, y_train;
  KernelSpec k_spec, l_spec;
  double lambda = 0.0;
  Eigen::MatrixXd K, L;
  GramRidge solver;

  int n() const { return static_cast<int>(x_train.size()); }
};

inline CmeModel fit(std::span<const Point> x, std::span<const Point> y, const KernelSpec& k,
                    const KernelSpec& l, double lambda) {
  if (x.size() != y.size()) throw argument_error("fit: |x| != |y|");
  if (x.empty()) throw argument_error("fit: empty training set");
  if (!(lambda > 0.0)) throw argument_error("fit: lambda must be positive");
  CmeModel m;
  m.x_train.assign(x.begin(), x.end());
  m.y_train.assign(y.begin(), y.end());
  m.k_spec = k;
  m.l_spec = l;
  m.lambda = lambda;
  m.K = kernels::gram(k, x).entries;
  m.L = kernels::gram(l, y).entries;
  m.solver = GramRidge::make(m.K, lambda);
  return m;
}

inline CmeModel fit(const std::vector<Point>& x, const std::vector<Point>& y, const KernelSpec& k,
                    const KernelSpec& l, double lambda) {
  return fit(std::span<const Point>(x), std::span<const Point>(y), k, l, lambda);
}

/// Embedding weights beta(x) = (K + n lambda I)^{-1} k_x.
inline Eigen::VectorXd embed_weights(const CmeModel& m, const Point& x) {
  return m.solver.weights(kernels::kernel_vector(m.k_spec, m.x_train, x));
}

/// <g, mu_hat_{Y|x}>_L = sum_i beta_i(x) g(y_i), by the reproducing property.
/// Caller contract: g_at_train[i] = g(y_i) for some g in H_L.
inline double conditional_expectation(const CmeModel& m, std::span<const double> g_at_train,
                                      const Point& x) {
  if (static_cast<int>(g_at_train.size()) != m.n())
    throw argument_error("conditional_expectation: g_at_train length mismatch");
  const Eigen::VectorXd beta = embed_weights(m, x);
  double acc = 0.0;
  for (int i = 0; i < m.n(); ++i) acc += beta[i] * g_at_train[i];
  return acc;
}

// Ground truth for Gaussian conditionals Y | X = x ~ N(mean_fn(x), noise_sd^2)
// paired with the Gaussian output kernel l(y,y') = exp(-(y-y')^2 / (2 sigma_l^2)).
// The only family where mu_{Y|x} and its RKHS norm are closed-form, which is
// what makes exact RKHS-distance evaluation possible.
struct GaussianConditionalOracle {
  std::function<double(double)> mean_fn;
  double noise_sd = 1.0;
  double sigma_l = 1.0;

  void validate() const {
    if (!(noise_sd > 0.0)) throw argument_error("GaussianConditionalOracle: noise_sd must be positive");
    if (!(sigma_l > 0.0)) throw argument_error("GaussianConditionalOracle: sigma_l must be positive");
    if (!mean_fn) throw argument_error("GaussianConditionalOracle: mean_fn not set");
  }
};

/// mu_{Y|x}(y) = E_{Y|x}[l(Y, y)]
///            = sqrt(sigma_l^2 / (sigma_l^2 + s^2)) exp(-(y - m(x))^2 / (2 (sigma_l^2 + s^2))).
inline double oracle_embedding_value(const GaussianConditionalOracle& o, double x, double y) {
  o.validate();
  const double v = o.sigma_l * o.sigma_l + o.noise_sd * o.noise_sd;
  const double d = y - o.mean_fn(x);
  return std::sqrt(o.sigma_l * o.sigma_l / v) * std::exp(-d * d / (2.0 * v));
}

/// ||mu_{Y|x}||_L^2 = sqrt(sigma_l^2 / (sigma_l^2 + 2 s^2)).
inline double oracle_embedding_sqnorm(const GaussianConditionalOracle& o, double /*x*/) {
  o.validate();
  return std::sqrt(o.sigma_l * o.sigma_l / (o.sigma_l * o.sigma_l + 2.0 * o.noise_sd * o.noise_sd));
}

/// Exact RKHS distance ||mu_hat_{Y|x} - mu_{Y|x}||_L via the quadratic
/// expansion beta' L beta - 2 sum_i beta_i mu(y_i) + ||mu||^2. Negative
/// round-off is clipped at zero (warned about past 1e-10).
inline double rkhs_error(const CmeModel& m, const GaussianConditionalOracle& o, double x) {
  o.validate();
  if (m.l_spec.family != kernels::KernelFamily::gaussian ||
      std::fabs(m.l_spec.bandwidth - o.sigma_l) > 1e-12 * std::fabs(o.sigma_l) ||
      std::fabs(m.l_spec.scale - 1.0) > 1e-12)
    throw argument_error("rkhs_error: output kernel must be gaussian with scale 1 and the oracle's sigma_l");
  const Eigen::VectorXd beta = embed_weights(m, kernels::point1(x));
  double cross = 0.0;
  for (int i = 0; i < m.n(); ++i) cross += beta[i] * oracle_embedding_value(o, x, m.y_train[i][0]);
  const double sq = beta.dot(m.L * beta) - 2.0 * cross + oracle_embedding_sqnorm(o, x);
  if (sq < -1e-10)
    std::cerr << "rkhs_error: squared distance clipped from " << sq << " to 0\n";
  return std::sqrt(std::max(0.0, sq));
}

/// Regularization schedule lambda_n = c0 (log^r n / n)^{1 / max(alpha, beta + p)}.
inline double lambda_schedule(long n, double r, double alpha, double beta, double p, double c0) {
  if (n < 3) throw argument_error("lambda_schedule: n must be at least 3");
  if (!(r > 1.0)) throw argument_error("lambda_schedule: r must exceed 1");
  if (!(p > 0.0 && p < beta)) throw argument_error("lambda_schedule: need 0 < p < beta");
  if (!(alpha > p && alpha <= 1.0)) throw argument_error("lambda_schedule: need p < alpha <= 1");
  if (!(c0 > 0.0)) throw argument_error("lambda_schedule: c0 must be positive");
  const double base = std::pow(std::log(static_cast<double>(n)), r) / static_cast<double>(n);
  return c0 * std::pow(base, 1.0 / std::max(alpha, beta + p));
}

/// Learning-rate exponent (beta - gamma) / (2 max(alpha, beta + p)); at
/// gamma = alpha this is the uniform-convergence rate (beta - alpha) / (2 (beta + p))
/// whenever beta + p >= alpha.
inline double theoretical_rate(double alpha, double beta, double p, double gamma) {
  if (!(p > 0.0 && p < beta)) throw argument_error("theoretical_rate: need 0 < p < beta");
  if (!(alpha > p)) throw argument_error("theoretical_rate: need alpha > p");
  if (!(gamma >= 0.0 && gamma < beta)) throw argument_error("theoretical_rate: need 0 <= gamma < beta");
  return (beta - gamma) / (2.0 * std::max(alpha, beta + p));
}

}  // namespace cmerates::cme
