#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "cmerates/errors.hpp"
#include "cmerates/rng.hpp"
#include "cmerates/series.hpp"

namespace cmerates::diag {

// Fills out[j] = e_{j+1}(x) for the Fourier system e_1 = 1,
// e_{2k}(x) = sqrt(2) cos(2 pi k x), e_{2k+1}(x) = sqrt(2) sin(2 pi k x).
// Angle-addition recurrence with a direct refresh every 16 modes keeps the
// accumulated rounding near machine precision.
inline void fourier_basis_into(double x, int n_modes, double* out) {
  out[0] = 1.0;
  if (n_modes == 1) return;
  const double theta = 2.0 * std::numbers::pi * x;
  const double c1 = std::cos(theta), s1 = std::sin(theta);
  const double r2 = std::numbers::sqrt2;
  double ck = c1, sk = s1;
  for (int k = 1;; ++k) {
    const int ic = 2 * k - 1;  // zero-based slot of e_{2k}
    const int is = 2 * k;      // zero-based slot of e_{2k+1}
    if (ic >= n_modes) break;
    out[ic] = r2 * ck;
    if (is < n_modes) out[is] = r2 * sk;
    if (is + 1 >= n_modes) break;
    if ((k & 15) == 0) {
      const double ang = theta * static_cast<double>(k + 1);
      ck = std::cos(ang);
      sk = std::sin(ang);
    } else {
      const double cn = ck * c1 - sk * s1;
      const double sn = sk * c1 + ck * s1;
      ck = cn;
      sk = sn;
    }
  }
}

enum class TargetProfile { constant, power_law };

// Eigen-coordinate synthetic setting on [0,1] with uniform marginal:
// mu_i = i^{-1/p}, Fourier eigenfunctions, and a diagonal CME sending
// mu_i^{beta/2} e_i to t_i f_i. All bias quantities are closed-form here.
// The model is the N-mode truncation, which keeps the closed forms, the
// sampled features and the matrix operators mutually consistent;
// tail_estimate() reports what the infinite extension would add.
struct DiagonalModel {
  using PointType = double;

  double p = 0.5;
  double beta = 1.0;
  double B = 1.0;
  TargetProfile profile = TargetProfile::constant;
  double profile_exponent = 0.0;  // s in t_i = B i^{-s} for the power_law profile
  int N = 0;
  double tail_tol = 1e-10;
  double trunc_tail_estimate = 0.0;  // sum_{i>N} t_i^2 mu_i^beta, upper bound

  Eigen::VectorXd mu_vec;           // mu_i
  Eigen::VectorXd t_vec;            // t_i
  Eigen::VectorXd source_coef;      // t_i mu_i^{beta/2}  (coefficients of mu_{Y|x})
  Eigen::VectorXd feat_scale;       // mu_i^{1/2}         (feature map scaling)

  static constexpr int kMaxModes = 200000;

  static DiagonalModel make(double p, double beta, double B, int n_modes = 0,
                            double tail_tol = 1e-10,
                            TargetProfile profile = TargetProfile::constant,
                            double profile_exponent = 0.0) {
    if (!(p > 0.0 && p < 1.0)) throw argument_error("DiagonalModel: p must lie in (0,1)");
    if (!(beta > p && beta < 2.0)) throw argument_error("DiagonalModel: need p < beta < 2");
    if (!(B > 0.0)) throw argument_error("DiagonalModel: B must be positive");
    if (!(tail_tol > 0.0)) throw argument_error("DiagonalModel: tail_tol must be positive");
    DiagonalModel m;
    m.p = p;
    m.beta = beta;
    m.B = B;
    m.profile = profile;
    m.profile_exponent = profile_exponent;
    m.tail_tol = tail_tol;
    if (n_modes > 0) {
      m.N = std::min(n_modes, kMaxModes);
    } else {
      // Smallest N with sum_{i>N} t_i^2 mu_i^beta below tail_tol, capped.
      const double a = beta / p + 2.0 * (profile == TargetProfile::power_law ? profile_exponent : 0.0);
      const double log_n = (std::log(tail_tol * (a - 1.0)) - 2.0 * std::log(B)) / (1.0 - a);
      m.N = (log_n > std::log(static_cast<double>(kMaxModes)))
                ? kMaxModes
                : std::max(16, static_cast<int>(std::ceil(std::exp(log_n))));
    }
    m.mu_vec.resize(m.N);
    m.t_vec.resize(m.N);
    m.source_coef.resize(m.N);
    m.feat_scale.resize(m.N);
    for (int i = 0; i < m.N; ++i) {
      const double idx = static_cast<double>(i + 1);
      const double mu = std::pow(idx, -1.0 / p);
      m.mu_vec[i] = mu;
      m.t_vec[i] = (profile == TargetProfile::power_law) ? B * std::pow(idx, -profile_exponent) : B;
      m.source_coef[i] = m.t_vec[i] * std::pow(mu, 0.5 * beta);
      m.feat_scale[i] = std::sqrt(mu);
    }
    {
      const double a = beta / p + 2.0 * (profile == TargetProfile::power_law ? profile_exponent : 0.0);
      m.trunc_tail_estimate =
          B * B * std::pow(static_cast<double>(m.N), 1.0 - a) / (a - 1.0);
    }
    return m;
  }

  double mu(int i_one_based) const { return mu_vec[i_one_based - 1]; }
  double t(int i_one_based) const { return t_vec[i_one_based - 1]; }

  Eigen::VectorXd basis_at(double x) const {
    Eigen::VectorXd e(N);
    fourier_basis_into(x, N, e.data());
    return e;
  }

  // Spectral-system interface shared with spectral::SpectralModel.
  std::span<const double> eigenvalues() const {
    return {mu_vec.data(), static_cast<std::size_t>(N)};
  }
  Eigen::VectorXd eigenfunctions_at(double x) const { return basis_at(x); }

  // ||k^alpha||_inf over [0,1] is attained at x = 0 where every cosine mode
  // peaks simultaneously: sqrt(1 + 2 sum_k mu_{2k}^alpha).
  double sup_norm_kalpha_exact(double alpha) const {
    if (!(alpha > 0.0)) throw argument_error("sup_norm_kalpha_exact: alpha must be positive");
    double acc = 1.0;
    for (int i = 1; i < N; i += 2) acc += 2.0 * std::pow(mu_vec[i], alpha);
    return std::sqrt(acc);
  }

  // Integral estimate of sum_{i>N} (lambda t_i mu_i^{beta/2} / (mu_i + lambda))^2,
  // the expected-bias mass the truncation leaves out.
  double tail_estimate(double lambda) const {
    const double inv_p = 1.0 / p;
    const double s = (profile == TargetProfile::power_law) ? profile_exponent : 0.0;
    auto h = [&](double x) {
      const double mu = std::pow(x, -inv_p);
      const double ti = B * std::pow(x, -s);
      const double c = lambda * ti * std::pow(mu, 0.5 * beta) / (mu + lambda);
      return c * c;
    };
    auto integrand = [&](double u) -> double {
      if (u <= 0.0) return 0.0;
      const double X = static_cast<double>(N) + 0.5;
      const double q = 2.0 / (beta * inv_p + 2.0 * s - 1.0);
      const double x = X * std::pow(u, -q);
      return h(x) * X * q * std::pow(u, -q - 1.0);
    };
    return integrate(integrand, 0.0, 1.0, 1e-18);
  }

 private:
  friend double expected_bias(const DiagonalModel&, double);
  void check_peak_within_range(double lambda, const char* op) const {
    const double peak = std::pow(lambda, -p);
    if (peak > static_cast<double>(N) / 10.0)
      throw numeric_error(std::string(op) +
                          ": series truncation insufficient for this lambda (peak index " +
                          std::to_string(peak) + " vs N = " + std::to_string(N) + ")");
  }
};

// Coefficients of mu_{Y|x} (lambda absent) or mu^lambda_{Y|x} (lambda given)
// in the output basis {f_i}: t_i mu_i^{beta/2} e_i(x), damped by
// mu_i/(mu_i + lambda) in the regularized case.
inline Eigen::VectorXd true_embedding(const DiagonalModel& m, double x,
                                      std::optional<double> lambda = std::nullopt) {
  if (lambda && *lambda < 0.0) throw argument_error("true_embedding: lambda must be nonnegative");
  Eigen::VectorXd coef = m.basis_at(x).cwiseProduct(m.source_coef);
  if (lambda && *lambda > 0.0)
    for (int i = 0; i < m.N; ++i) coef[i] *= m.mu_vec[i] / (m.mu_vec[i] + *lambda);
  return coef;
}

/// Expected squared bias E_X ||mu^lambda - mu||^2 =
/// sum_i (lambda mu_i^{beta/2} / (mu_i + lambda))^2 t_i^2 (cross terms vanish
/// by orthonormality of the e_i under the uniform marginal).
inline double expected_bias(const DiagonalModel& m, double lambda) {
  if (!(lambda > 0.0)) throw argument_error("expected_bias: lambda must be positive");
  m.check_peak_within_range(lambda, "expected_bias");
  double acc = 0.0;
  for (int i = 0; i < m.N; ++i) {
    const double c = lambda * m.source_coef[i] / (m.mu_vec[i] + lambda);
    acc += c * c;
  }
  return acc;
}

namespace detail {

// max over grid of sum_i w_i e_i(x)^2 for nonnegative mode weights w.
// On an equispaced grid {j/G} the pair identity 2cos^2 = 1 + cos(2.),
// 2sin^2 = 1 - cos(2.) folds all modes into G cosine bins exactly;
// otherwise falls back to the direct mode loop.
inline double grid_max_weighted_esq(const Eigen::VectorXd& w, std::span<const double> grid) {
  const int n_modes = static_cast<int>(w.size());
  const int g = static_cast<int>(grid.size());
  bool equispaced = g >= 2 && std::fabs(grid[0]) < 1e-15;
  for (int j = 1; j < g && equispaced; ++j)
    if (std::fabs(grid[j] - static_cast<double>(j) / g) > 1e-12) equispaced = false;

  if (equispaced) {
    double constant = w[0];
    std::vector<double> bins(static_cast<std::size_t>(g), 0.0);
    for (int k = 1; 2 * k - 1 < n_modes; ++k) {
      const double wc = w[2 * k - 1];
      const double ws = (2 * k < n_modes) ? w[2 * k] : 0.0;
      constant += wc + ws;
      bins[static_cast<std::size_t>((2 * k) % g)] += wc - ws;
    }
    double best = -std::numeric_limits<double>::infinity();
    const double step = 2.0 * std::numbers::pi / g;
    for (int j = 0; j < g; ++j) {
      double acc = 0.0;
      for (int mkey = 0; mkey < g; ++mkey)
        if (bins[static_cast<std::size_t>(mkey)] != 0.0)
          acc += bins[static_cast<std::size_t>(mkey)] *
                 std::cos(step * static_cast<double>((static_cast<long long>(mkey) * j) % g));
      best = std::max(best, constant + acc);
    }
    return best;
  }

  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> e(static_cast<std::size_t>(n_modes));
  for (double x : grid) {
    fourier_basis_into(x, n_modes, e.data());
    double acc = 0.0;
    for (int i = 0; i < n_modes; ++i) acc += w[i] * e[static_cast<std::size_t>(i)] * e[static_cast<std::size_t>(i)];
    best = std::max(best, acc);
  }
  return best;
}

}  // namespace detail

/// Worst-case bias M(lambda) ~ max over grid of ||mu_{Y|x} - mu^lambda_{Y|x}||.
inline double worst_case_bias(const DiagonalModel& m, double lambda, std::span<const double> grid) {
  if (!(lambda > 0.0)) throw argument_error("worst_case_bias: lambda must be positive");
  if (grid.empty()) throw argument_error("worst_case_bias: empty grid");
  Eigen::VectorXd w(m.N);
  for (int i = 0; i < m.N; ++i) {
    const double c = lambda * m.source_coef[i] / (m.mu_vec[i] + lambda);
    w[i] = c * c;
  }
  return std::sqrt(std::max(0.0, detail::grid_max_weighted_esq(w, grid)));
}

/// M_lambda = ||E[(mu - mu^lambda) (x) (mu - mu^lambda)]||: diagonal in {f_i},
/// so the norm is the largest diagonal entry.
inline double second_moment_norm(const DiagonalModel& m, double lambda) {
  if (!(lambda > 0.0)) throw argument_error("second_moment_norm: lambda must be positive");
  double best = 0.0;
  for (int i = 0; i < m.N; ++i) {
    const double c = lambda * m.source_coef[i] / (m.mu_vec[i] + lambda);
    best = std::max(best, c * c);
  }
  return best;
}

/// ||C^lambda - C||_gamma = sup_i (lambda mu_i^{(beta-gamma)/2} / (mu_i + lambda)) |t_i|,
/// exact in the diagonal model.
inline double operator_bias_gamma(const DiagonalModel& m, double lambda, double gamma) {
  if (!(lambda > 0.0)) throw argument_error("operator_bias_gamma: lambda must be positive");
  if (!(gamma >= 0.0 && gamma < m.beta))
    throw argument_error("operator_bias_gamma: need 0 <= gamma < beta");
  double best = 0.0;
  const double e = 0.5 * (m.beta - gamma);
  for (int i = 0; i < m.N; ++i) {
    const double v = lambda * std::pow(m.mu_vec[i], e) * std::fabs(m.t_vec[i]) / (m.mu_vec[i] + lambda);
    best = std::max(best, v);
  }
  return best;
}

// Sampled features: x uniform on [0,1], output coordinates in {f_i} equal to
// the true embedding plus independent bounded noise with per-coordinate
// variances V_diag. Noise is uniform on [-sqrt(3 V_i), sqrt(3 V_i)], so
// ||eps|| <= sqrt(3 sum V) <= R always; no per-sample rescaling is needed.
struct FeatureSample {
  Eigen::VectorXd x;    // n points
  Eigen::MatrixXd ell;  // N x n, column s = ell_s
  double R = 0.0;
  Eigen::VectorXd V_diag;
};

inline FeatureSample sample_features(const DiagonalModel& m, int n, double R,
                                     std::span<const double> V_diag, std::uint64_t seed) {
  if (n < 1) throw argument_error("sample_features: n must be positive");
  if (!(R > 0.0)) throw argument_error("sample_features: R must be positive");
  if (static_cast<int>(V_diag.size()) > m.N)
    throw argument_error("sample_features: V_diag longer than model truncation");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m.N);
  double total = 0.0;
  for (std::size_t i = 0; i < V_diag.size(); ++i) {
    if (V_diag[i] < 0.0) throw argument_error("sample_features: V_diag entries must be nonnegative");
    v[static_cast<int>(i)] = V_diag[i];
    total += V_diag[i];
  }
  if (3.0 * total > R * R)
    throw argument_error("sample_features: V_diag tail too heavy for R (sqrt(3 sum V) = " +
                         std::to_string(std::sqrt(3.0 * total)) + " > R)");

  FeatureSample fs;
  fs.R = R;
  fs.V_diag = v;
  fs.x.resize(n);
  fs.ell.resize(m.N, n);
  RandomStream rng(seed);
  Eigen::VectorXd half_width(m.N);
  for (int i = 0; i < m.N; ++i) half_width[i] = std::sqrt(3.0 * v[i]);
  std::vector<double> e(static_cast<std::size_t>(m.N));
  for (int s = 0; s < n; ++s) {
    const double xs = rng.uniform01();
    fs.x[s] = xs;
    fourier_basis_into(xs, m.N, e.data());
    for (int i = 0; i < m.N; ++i) {
      double val = m.source_coef[i] * e[static_cast<std::size_t>(i)];
      if (half_width[i] > 0.0) val += rng.symmetric_uniform(half_width[i]);
      fs.ell(i, s) = val;
    }
  }
  return fs;
}

// Matrix of the exact regularized CME C^lambda in the bases
// {mu_i^{1/2} e_i} -> {f_i}: diag(t_i mu_i^{(beta-1)/2} mu_i/(mu_i+lambda)).
inline Eigen::MatrixXd regularized_cme_matrix(const DiagonalModel& m, double lambda) {
  if (!(lambda > 0.0)) throw argument_error("regularized_cme_matrix: lambda must be positive");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m.N, m.N);
  for (int i = 0; i < m.N; ++i)
    c(i, i) = m.source_coef[i] / m.feat_scale[i] * m.mu_vec[i] / (m.mu_vec[i] + lambda);
  return c;
}

/// Sample CME matrix C_hat = C_YX (C_XX + lambda I)^{-1} built from the
/// feature map phi(x) = (mu_i^{1/2} e_i(x)), in the bases {mu_i^{1/2} e_i} -> {f_i}.
inline Eigen::MatrixXd empirical_cme_matrix(const FeatureSample& fs, const DiagonalModel& m,
                                            double lambda) {
  if (!(lambda > 0.0)) throw argument_error("empirical_cme_matrix: lambda must be positive");
  const int n = static_cast<int>(fs.x.size());
  if (fs.ell.rows() != m.N) throw argument_error("empirical_cme_matrix: sample/model size mismatch");
  Eigen::MatrixXd phi(m.N, n);
  std::vector<double> e(static_cast<std::size_t>(m.N));
  for (int s = 0; s < n; ++s) {
    fourier_basis_into(fs.x[s], m.N, e.data());
    for (int i = 0; i < m.N; ++i) phi(i, s) = m.feat_scale[i] * e[static_cast<std::size_t>(i)];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd cxx = (phi * phi.transpose()) * inv_n;
  Eigen::MatrixXd cyx = (fs.ell * phi.transpose()) * inv_n;
  cxx.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(cxx);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cxx);
    const double cond = es.eigenvalues().maxCoeff() / std::max(es.eigenvalues().minCoeff(), 1e-300);
    throw numeric_error("empirical_cme_matrix: factorization failed, condition number ~ " +
                        std::to_string(cond));
  }
  // C_hat = cyx * cxx^{-1}; solve on the transpose since cxx is symmetric.
  return llt.solve(cyx.transpose()).transpose();
}

enum class CmeTarget { true_cme, regularized };

/// Sobolev gamma-norm distance of a sample CME matrix from the true or the
/// regularized operator: spectral norm of C_hat diag(mu^{(1-gamma)/2}) minus
/// the diagonal target, all expressed over the {mu_i^{gamma/2} e_i} basis.
inline double gamma_norm_error(const DiagonalModel& m, const Eigen::MatrixXd& c_hat, double gamma,
                               CmeTarget target, double lambda = 0.0) {
  if (c_hat.rows() != m.N || c_hat.cols() != m.N)
    throw argument_error("gamma_norm_error: matrix must be N x N");
  if (!(gamma >= 0.0)) throw argument_error("gamma_norm_error: gamma must be nonnegative");
  if (target == CmeTarget::true_cme && !(gamma < m.beta))
    throw argument_error("gamma_norm_error: gamma >= beta against the true target");
  if (target == CmeTarget::regularized && !(lambda > 0.0))
    throw argument_error("gamma_norm_error: regularized target needs lambda > 0");

  Eigen::MatrixXd d = c_hat;
  for (int j = 0; j < m.N; ++j) d.col(j) *= std::pow(m.mu_vec[j], 0.5 * (1.0 - gamma));
  for (int i = 0; i < m.N; ++i) {
    double ti = m.t_vec[i] * std::pow(m.mu_vec[i], 0.5 * (m.beta - gamma));
    if (target == CmeTarget::regularized) ti *= m.mu_vec[i] / (m.mu_vec[i] + lambda);
    d(i, i) -= ti;
  }
  if (d.size() == 1) return std::fabs(d(0, 0));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d.transpose() * d, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

}  // namespace cmerates::diag
