#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "cmerates/errors.hpp"
#include "cmerates/fitting.hpp"
#include "cmerates/kernels.hpp"
#include "cmerates/series.hpp"

namespace cmerates::spectral {

// Empirical Mercer data for a kernel on an n-point sample: eigenvalues of
// K/n and Nystrom eigenfunctions, L2(empirical measure)-orthonormal, i.e.
// (1/n) sum_s e_i(x_s) e_j(x_s) = delta_ij.
struct SpectralModel {
  using PointType = Eigen::VectorXd;

  Eigen::VectorXd mu;       // retained eigenvalues, descending
  Eigen::MatrixXd efuncs;   // n x m, efuncs(s, i) = e_i(x_s) = sqrt(n) v_i[s]
  std::vector<Eigen::VectorXd> sample_points;
  kernels::KernelSpec kernel;
  int n = 0;

  static constexpr double eps_trunc = 1e-10;

  int rank() const { return static_cast<int>(mu.size()); }
  std::span<const double> eigenvalues() const { return {mu.data(), static_cast<std::size_t>(mu.size())}; }

  // Nystrom extension e_i(x) = k_x^T v_i / (sqrt(n) mu_i); reduces to the
  // stored values at the sample points.
  Eigen::VectorXd eigenfunctions_at(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd kx = kernels::kernel_vector(kernel, sample_points, x);
    Eigen::VectorXd e = efuncs.transpose() * kx;  // = n mu_i e_i(x) per component
    for (int i = 0; i < rank(); ++i) e[i] /= static_cast<double>(n) * mu[i];
    return e;
  }
};

// Eigendecomposition of (1/n) K with relative truncation at eps_trunc.
// Exactly tied eigenvalues are kept in stable index order.
inline SpectralModel mercer_from_gram(const kernels::GramMatrix& g) {
  const int n = g.size();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.entries / static_cast<double>(n));
  if (es.info() != Eigen::Success)
    throw numeric_error("mercer_from_gram: eigensolver failed; ||K||_F = " +
                        std::to_string(g.entries.norm()) + ", n = " + std::to_string(n));
  // Eigen returns ascending order; reverse to descending.
  Eigen::VectorXd evals = es.eigenvalues().reverse();
  Eigen::MatrixXd evecs = es.eigenvectors().rowwise().reverse();
  const double cutoff = SpectralModel::eps_trunc * std::max(evals[0], 0.0);
  int m = 0;
  while (m < n && evals[m] > cutoff) ++m;
  if (m == 0) throw numeric_error("mercer_from_gram: no eigenvalue above truncation threshold");

  SpectralModel s;
  s.mu = evals.head(m);
  s.efuncs = evecs.leftCols(m) * std::sqrt(static_cast<double>(n));
  s.sample_points = g.points;
  s.kernel = g.kernel;
  s.n = n;
  return s;
}

/// Power kernel k^alpha(x, x') = sum_i mu_i^alpha e_i(x) e_i(x') over the
/// retained modes. Works for any spectral system exposing eigenvalues() and
/// eigenfunctions_at().
template <class System, class PointT>
double power_kernel_eval(const System& s, double alpha, const PointT& x, const PointT& y) {
  if (!(alpha > 0.0)) throw argument_error("power_kernel_eval: alpha must be positive");
  const auto mu = s.eigenvalues();
  const Eigen::VectorXd ex = s.eigenfunctions_at(x);
  const Eigen::VectorXd ey = s.eigenfunctions_at(y);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    acc += std::pow(mu[i], alpha) * ex[static_cast<int>(i)] * ey[static_cast<int>(i)];
  return acc;
}

/// Grid approximation of ||k^alpha||_inf = sup_x sqrt(sum_i mu_i^alpha e_i(x)^2).
template <class System, class PointT>
double sup_norm_kalpha(const System& s, double alpha, std::span<const PointT> grid) {
  if (!(alpha > 0.0)) throw argument_error("sup_norm_kalpha: alpha must be positive");
  if (grid.empty()) throw argument_error("sup_norm_kalpha: empty grid");
  const auto mu = s.eigenvalues();
  std::vector<double> mua(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) mua[i] = std::pow(mu[i], alpha);
  double best = 0.0;
  for (const auto& x : grid) {
    const Eigen::VectorXd ex = s.eigenfunctions_at(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i)
      acc += mua[i] * ex[static_cast<int>(i)] * ex[static_cast<int>(i)];
    best = std::max(best, acc);
  }
  return std::sqrt(best);
}

struct DecayFit {
  double p_hat = 0.0;  // fitted eigendecay exponent, mu_i ~ i^{-1/p_hat}
  double r2 = 0.0;
  int first = 0;  // 1-based inclusive index window used
  int last = 0;
};

// OLS of log mu_i on log i. Window defaults to [3, m-2] to avoid edge modes,
// falling back to the full range when that leaves fewer than 5 points.
inline DecayFit fit_eigendecay(std::span<const double> mu, int first = 0, int last = 0) {
  const int m = static_cast<int>(mu.size());
  if (m < 5) throw argument_error("fit_eigendecay: need at least 5 eigenvalues");
  if (first == 0 && last == 0) {
    first = 3;
    last = m - 2;
    if (last - first + 1 < 5) {
      first = 1;
      last = m;
    }
  }
  if (first < 1 || last > m || last - first + 1 < 5)
    throw argument_error("fit_eigendecay: invalid index window");
  std::vector<double> idx, val;
  for (int i = first; i <= last; ++i) {
    if (!(mu[i - 1] > 0.0)) throw argument_error("fit_eigendecay: nonpositive eigenvalue");
    idx.push_back(static_cast<double>(i));
    val.push_back(mu[i - 1]);
  }
  const LinearFit f = fit_loglog(idx, val);
  if (!(f.slope < 0.0)) throw numeric_error("fit_eigendecay: spectrum is not decaying");
  DecayFit d;
  d.p_hat = -1.0 / f.slope;
  d.r2 = f.r2;
  d.first = first;
  d.last = last;
  return d;
}

/// Effective dimension N(lambda) = sum_i mu_i / (mu_i + lambda).
inline double effective_dimension(std::span<const double> mu, double lambda) {
  if (!(lambda > 0.0)) throw argument_error("effective_dimension: lambda must be positive");
  double acc = 0.0;
  for (double m : mu) acc += m / (m + lambda);
  return acc;
}

// N(lambda) for the exact power law mu_i = i^{-1/p}, summed to an adaptive
// truncation with an integral tail (budget well below 1e-10 relative).
inline SeriesResult effective_dimension_powerlaw(double p, double lambda) {
  if (!(p > 0.0 && p < 1.0)) throw argument_error("effective_dimension_powerlaw: p in (0,1)");
  if (!(lambda > 0.0)) throw argument_error("effective_dimension_powerlaw: lambda must be positive");
  const double inv_p = 1.0 / p;
  auto h = [=](double x) { return 1.0 / (1.0 + lambda * std::pow(x, inv_p)); };
  const double knee = std::pow(lambda, -p);
  const auto m = static_cast<std::size_t>(std::clamp(40.0 * knee, 1e4, 4e7));
  return sum_with_tail(h, m, inv_p);
}

struct SlopeReport {
  std::vector<double> lambdas;
  std::vector<double> values;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double threshold = 0.0;  // slope must not exceed this
  bool pass = false;
};

// Checks the convergent-series rate: S(lambda) = sum_i (mu_i^{beta/2} / (mu_i + lambda))^2
// with mu_i = i^{-1/p} decays no slower than lambda^{beta - p - 2}.
inline SlopeReport series_bound_check(double p, double beta, std::span<const double> lambda_grid) {
  if (!(p > 0.0 && p < beta && beta < 2.0))
    throw argument_error("series_bound_check: need 0 < p < beta < 2 (series diverges otherwise)");
  if (lambda_grid.size() < 2) throw argument_error("series_bound_check: need at least 2 lambdas");
  SlopeReport rep;
  const double inv_p = 1.0 / p;
  for (double lambda : lambda_grid) {
    if (!(lambda > 0.0 && lambda < 1.0))
      throw argument_error("series_bound_check: lambda values must lie in (0,1)");
    auto h = [=](double x) {
      const double mu = std::pow(x, -inv_p);
      const double t = std::pow(x, -0.5 * beta * inv_p) / (mu + lambda);
      return t * t;
    };
    const double knee = std::pow(lambda, -p);
    const auto m = static_cast<std::size_t>(std::clamp(40.0 * knee, 1e4, 4e7));
    rep.lambdas.push_back(lambda);
    rep.values.push_back(sum_with_tail(h, m, beta * inv_p).value);
  }
  const LinearFit f = fit_loglog(rep.lambdas, rep.values);
  rep.slope = f.slope;
  rep.intercept = f.intercept;
  rep.r2 = f.r2;
  rep.threshold = beta - p - 2.0 + 0.05;
  rep.pass = rep.slope <= rep.threshold;
  return rep;
}

struct HBoundReport {
  double lhs = 0.0;  // max over grid of ||(C + lambda)^{-1/2} k(x,.)||_K
  double rhs = 0.0;  // lambda^{-alpha/2} ||k^alpha||_inf (grid sup)
  double lambda = 0.0;
  double alpha = 0.0;
  bool holds = false;
};

// Lemma-style diagnostic: the regularized feature norm is controlled by the
// power-kernel sup norm, max_x sqrt(sum_i mu_i e_i(x)^2 / (mu_i + lambda))
// <= lambda^{-alpha/2} ||k^alpha||_inf.
template <class System, class PointT>
HBoundReport h_bound_check(const System& s, double alpha, double lambda,
                           std::span<const PointT> grid) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw argument_error("h_bound_check: alpha in (0,1]");
  if (!(lambda > 0.0)) throw argument_error("h_bound_check: lambda must be positive");
  if (grid.empty()) throw argument_error("h_bound_check: empty grid");
  const auto mu = s.eigenvalues();
  double best = 0.0;
  for (const auto& x : grid) {
    const Eigen::VectorXd ex = s.eigenfunctions_at(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i)
      acc += mu[i] * ex[static_cast<int>(i)] * ex[static_cast<int>(i)] / (mu[i] + lambda);
    best = std::max(best, acc);
  }
  HBoundReport rep;
  rep.lhs = std::sqrt(best);
  rep.rhs = std::pow(lambda, -0.5 * alpha) * sup_norm_kalpha(s, alpha, grid);
  rep.lambda = lambda;
  rep.alpha = alpha;
  rep.holds = rep.lhs <= rep.rhs * (1.0 + 1e-12);
  return rep;
}

struct GaussianConstantsReport {
  std::vector<double> log_terms;     // log a_k, k = 0..k_max
  std::vector<double> partial_sums;  // sum of a_0..a_k
  int threshold_index = 0;           // ceil(2^{1/(2(1-beta))} e / sigma^2)
  bool ratio_ok = false;             // a_{k+1}/a_k < 1/2 for all k >= threshold
  bool converged = false;            // last two partial sums differ by < 1e-12
  double final_increment = 0.0;
};

// Membership of constants in the Gaussian interpolation space H^beta:
// a_k = sigma^{4(beta-1)k} ((2k)!)^beta / (4^{beta k} (k!)^2), evaluated in
// log-space; the ratio test certifies summability beyond the stated index.
inline GaussianConstantsReport gaussian_constants_check(double beta, double sigma, int k_max) {
  if (!(beta > 0.0 && beta < 1.0)) throw argument_error("gaussian_constants_check: beta in (0,1)");
  if (!(sigma > 0.0)) throw argument_error("gaussian_constants_check: sigma must be positive");
  if (k_max < 10) throw argument_error("gaussian_constants_check: k_max >= 10 required");
  GaussianConstantsReport rep;
  rep.threshold_index = static_cast<int>(
      std::ceil(std::pow(2.0, 1.0 / (2.0 * (1.0 - beta))) * std::numbers::e / (sigma * sigma)));
  double sum = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    const double kk = static_cast<double>(k);
    const double log_a = 4.0 * (beta - 1.0) * kk * std::log(sigma) +
                         beta * std::lgamma(2.0 * kk + 1.0) - beta * kk * std::log(4.0) -
                         2.0 * std::lgamma(kk + 1.0);
    rep.log_terms.push_back(log_a);
    sum += std::exp(log_a);
    rep.partial_sums.push_back(sum);
  }
  rep.ratio_ok = true;
  for (int k = rep.threshold_index; k + 1 <= k_max; ++k) {
    const double ratio = std::exp(rep.log_terms[k + 1] - rep.log_terms[k]);
    if (!(ratio < 0.5)) rep.ratio_ok = false;
  }
  const std::size_t np = rep.partial_sums.size();
  rep.final_increment = rep.partial_sums[np - 1] - rep.partial_sums[np - 2];
  rep.converged = std::fabs(rep.final_increment) < 1e-12;
  return rep;
}

}  // namespace cmerates::spectral
