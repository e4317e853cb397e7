#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "cmerates/diagonal_model.hpp"
#include "cmerates/errors.hpp"
#include "cmerates/rng.hpp"

namespace cmerates::conc {

inline double spectral_norm_sym(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return std::max(std::fabs(es.eigenvalues().minCoeff()), std::fabs(es.eigenvalues().maxCoeff()));
}

// Sub-exponential moment envelope (R, V[, W]):
// E[(X* X)^p] <= (2p)! R^{2p-2} / 2 V for every p >= 1, and symmetrically W
// for X X* in the rectangular case.
struct MomentEnvelope {
  double R = 0.0;
  Eigen::MatrixXd V;
  std::optional<Eigen::MatrixXd> W;

  // Largest eigenvalue of V (max of ||V||, ||W|| when W is present).
  double sigma_sq() const {
    double s = spectral_norm_sym(V);
    if (W) s = std::max(s, spectral_norm_sym(*W));
    return s;
  }
  double trace_total() const { return V.trace() + (W ? W->trace() : 0.0); }

  void validate() const {
    if (!(R > 0.0)) throw argument_error("MomentEnvelope: R must be positive");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
      throw argument_error("MomentEnvelope: V is not positive semidefinite");
  }

  static MomentEnvelope selfadjoint(double R, Eigen::MatrixXd V) {
    MomentEnvelope e{R, std::move(V), std::nullopt};
    e.validate();
    return e;
  }
  static MomentEnvelope rank1(double R, Eigen::MatrixXd V, Eigen::MatrixXd W) {
    MomentEnvelope e{R, std::move(V), std::move(W)};
    e.validate();
    return e;
  }
  static MomentEnvelope diagonal(double R, const Eigen::VectorXd& v_diag) {
    return selfadjoint(R, Eigen::MatrixXd(v_diag.asDiagonal()));
  }
};

inline void check_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw argument_error("delta must lie in (0,1)");
}

/// beta(delta) = log(4 tr(V) / (delta sigma^2)) for the self-adjoint bound,
/// log(4 tr(V + W) / (delta sigma^2)) for the rank-1 bound. The bound
/// calculators accept any delta in the formula's domain (beta > 0); the
/// probability-facing ops restrict to delta in (0,1).
inline double bernstein_beta(const MomentEnvelope& env, double delta) {
  if (!(delta > 0.0)) throw argument_error("delta must be positive");
  const double beta = std::log(4.0 * env.trace_total() / (delta * env.sigma_sq()));
  if (!(beta > 0.0)) throw argument_error("delta too large for this envelope (beta(delta) <= 0)");
  return beta;
}

/// Self-adjoint operator Bernstein: ||(1/N) sum X_i|| <= 4 R beta / N + 2 sigma sqrt(2 beta / N)
/// with probability 1 - delta, for centered i.i.d. self-adjoint X_i with envelope (R, V).
inline double bernstein_bound_selfadjoint(long N, const MomentEnvelope& env, double delta) {
  if (N < 1) throw argument_error("bernstein_bound_selfadjoint: N must be positive");
  const double beta = bernstein_beta(env, delta);
  const double sigma = std::sqrt(env.sigma_sq());
  return 4.0 * env.R * beta / static_cast<double>(N) +
         2.0 * sigma * std::sqrt(2.0 * beta / static_cast<double>(N));
}

/// Rank-1 (centered) Bernstein: 8 R beta / N + 4 sigma sqrt(2 beta / N); exactly
/// twice the self-adjoint coefficients, the cost of the dilation + centering step.
inline double bernstein_bound_rank1(long N, const MomentEnvelope& env, double delta) {
  if (N < 1) throw argument_error("bernstein_bound_rank1: N must be positive");
  if (!env.W) throw argument_error("bernstein_bound_rank1: envelope must carry W");
  const double beta = bernstein_beta(env, delta);
  const double sigma = std::sqrt(env.sigma_sq());
  return 8.0 * env.R * beta / static_cast<double>(N) +
         4.0 * sigma * std::sqrt(2.0 * beta / static_cast<double>(N));
}

// Validity threshold t >= 2R/N + 2^{3/4} sigma / sqrt(N) of the self-adjoint
// lemma; bounds below it are reported, not rejected.
inline double bernstein_validity_threshold(long N, const MomentEnvelope& env) {
  return 2.0 * env.R / static_cast<double>(N) +
         std::pow(2.0, 0.75) * std::sqrt(env.sigma_sq() / static_cast<double>(N));
}

// Fraction of deviations strictly above the bound. A degenerate ensemble
// whose draws all equal their mean has zero deviations and zero fraction.
inline double exceed_fraction(std::span<const double> deviations, double bound) {
  if (deviations.empty()) throw argument_error("exceed_fraction: empty deviation list");
  long count = 0;
  for (double d : deviations)
    if (d > bound) ++count;
  return static_cast<double>(count) / static_cast<double>(deviations.size());
}

enum class Ensemble { symmetric_rank1, rectangular_rank1 };

struct CoverageReport {
  Ensemble ensemble;
  int dim = 0;
  int draws_per_trial = 0;
  int trials = 0;
  double delta = 0.0;
  double bound = 0.0;
  int exceed_count = 0;
  double exceed_fraction = 0.0;
  double max_deviation = 0.0;
  double mean_deviation = 0.0;
  bool below_validity_threshold = false;
};

// Draws i.i.d. rank-1 operators from a bounded ensemble (sphere vectors with
// radii uniform on [1/2, 1]), computes the exact (R, V) envelope, and counts
// how often ||(1/N) sum X_i - E[X]|| exceeds the Bernstein bound.
inline CoverageReport mc_coverage(Ensemble ensemble, int dim, int N, int trials, double delta,
                                  std::uint64_t seed) {
  if (dim < 2 || dim > 64) throw argument_error("mc_coverage: dim must lie in [2, 64]");
  if (trials < 500) throw argument_error("mc_coverage: trials must be at least 500");
  if (N < 1) throw argument_error("mc_coverage: N must be positive");
  check_delta(delta);

  const double r_lo = 0.5, r_hi = 1.0;
  const double mean_r = 0.75;            // E[r]
  const double mean_r2 = 7.0 / 12.0;     // E[r^2]
  const double d = static_cast<double>(dim);

  MomentEnvelope env;
  double bound = 0.0;
  if (ensemble == Ensemble::symmetric_rank1) {
    // Centered draws X = r uu' - (E r / d) I: ||X|| <= 1 - E r / d and
    // E[X^2] = (E r^2 / d - (E r / d)^2) I, both exact.
    const double mean_shift = mean_r / d;
    env = MomentEnvelope::selfadjoint(
        r_hi - mean_shift,
        (mean_r2 / d - mean_shift * mean_shift) * Eigen::MatrixXd::Identity(dim, dim));
    bound = bernstein_bound_selfadjoint(N, env, delta);
  } else {
    // X = r w v' with independent sphere vectors: E[X] = 0, ||X|| <= r_hi,
    // E[X*X] = E[XX*] = (E r^2 / d) I.
    env = MomentEnvelope::rank1(r_hi, (mean_r2 / d) * Eigen::MatrixXd::Identity(dim, dim),
                                (mean_r2 / d) * Eigen::MatrixXd::Identity(dim, dim));
    bound = bernstein_bound_rank1(N, env, delta);
  }

  CoverageReport rep;
  rep.ensemble = ensemble;
  rep.dim = dim;
  rep.draws_per_trial = N;
  rep.trials = trials;
  rep.delta = delta;
  rep.bound = bound;
  rep.below_validity_threshold = bound < bernstein_validity_threshold(N, env);

  std::vector<double> deviations;
  deviations.reserve(static_cast<std::size_t>(trials));
  double dev_sum = 0.0;
  for (int t = 0; t < trials; ++t) {
    RandomStream rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim);
    double dev = 0.0;
    if (ensemble == Ensemble::symmetric_rank1) {
      for (int j = 0; j < N; ++j) {
        const double r = rng.uniform(r_lo, r_hi);
        const Eigen::VectorXd u = rng.on_sphere(dim);
        sum.selfadjointView<Eigen::Lower>().rankUpdate(u, r);
      }
      Eigen::MatrixXd mean = Eigen::MatrixXd(sum.selfadjointView<Eigen::Lower>()) /
                             static_cast<double>(N);
      mean.diagonal().array() -= mean_r / d;
      dev = spectral_norm_sym(mean);
    } else {
      for (int j = 0; j < N; ++j) {
        const double r = rng.uniform(r_lo, r_hi);
        const Eigen::VectorXd v = rng.on_sphere(dim);
        const Eigen::VectorXd w = rng.on_sphere(dim);
        sum.noalias() += (r / static_cast<double>(N)) * w * v.transpose();
      }
      dev = sum.jacobiSvd().singularValues()[0];
    }
    deviations.push_back(dev);
    dev_sum += dev;
    rep.max_deviation = std::max(rep.max_deviation, dev);
    if (dev > bound) ++rep.exceed_count;
  }
  rep.mean_deviation = dev_sum / static_cast<double>(trials);
  rep.exceed_fraction = exceed_fraction(deviations, bound);
  return rep;
}

struct MomentCheckResult {
  int p = 0;
  double min_eigenvalue = 0.0;  // of envelope_p - estimate
  double tolerance = 0.0;       // 3 x standard error along the worst direction
  bool pass = false;
};

/// Verifies the operator moment condition E[(eps (x) eps)^p] <= (2p)! R^{2p-2}/2 V
/// against Monte-Carlo estimates from centered draws (columns of `samples`).
inline std::vector<MomentCheckResult> moment_check(const Eigen::MatrixXd& samples,
                                                   const MomentEnvelope& env, int p_max) {
  if (p_max < 1 || p_max > 4) throw argument_error("moment_check: p_max must lie in [1, 4]");
  const int d = static_cast<int>(samples.rows());
  const long S = samples.cols();
  if (S < 10000) throw argument_error("moment_check: need at least 1e4 samples");
  if (env.V.rows() != d) throw argument_error("moment_check: envelope dimension mismatch");

  std::vector<MomentCheckResult> out;
  Eigen::VectorXd sqnorm(S);
  for (long s = 0; s < S; ++s) sqnorm[s] = samples.col(s).squaredNorm();

  for (int p = 1; p <= p_max; ++p) {
    // E[(eps eps')^p] = E[||eps||^{2p-2} eps eps'] for rank-1 PSD factors.
    Eigen::MatrixXd est = Eigen::MatrixXd::Zero(d, d);
    for (long s = 0; s < S; ++s) {
      const double w = std::pow(sqnorm[s], p - 1);
      est.selfadjointView<Eigen::Lower>().rankUpdate(samples.col(s), w);
    }
    est = Eigen::MatrixXd(est.selfadjointView<Eigen::Lower>()) / static_cast<double>(S);

    double fact = 1.0;  // (2p)!
    for (int k = 2; k <= 2 * p; ++k) fact *= k;
    const Eigen::MatrixXd envelope = 0.5 * fact * std::pow(env.R, 2 * p - 2) * env.V;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(envelope - est, Eigen::EigenvaluesOnly);
    MomentCheckResult r;
    r.p = p;
    r.min_eigenvalue = es.eigenvalues().minCoeff();
    // Standard-error bound: Frobenius aggregation of the per-entry standard
    // errors dominates the SE of every projected direction, including the
    // data-selected smallest-eigenvalue direction.
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
    for (long s = 0; s < S; ++s) {
      const double w = std::pow(sqnorm[s], p - 1);
      const Eigen::MatrixXd term = w * samples.col(s) * samples.col(s).transpose();
      second += term.cwiseProduct(term);
    }
    second /= static_cast<double>(S);
    double var_sum = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        var_sum += std::max(0.0, second(i, j) - est(i, j) * est(i, j));
    const double se = std::sqrt(var_sum / static_cast<double>(S));
    r.tolerance = 3.0 * se;
    r.pass = r.min_eigenvalue >= -r.tolerance;
    out.push_back(r);
  }
  return out;
}

struct ConvexityReport {
  long trials = 0;
  long violations = 0;
  double worst_violation = 0.0;
  bool pass = false;
};

/// Random midpoint-convexity search for f(x) = ||x||^{2p} <y, x>^2 and
/// g(A) = ||A||_HS^{2p} ||A y||^2, with slack 1e-12 x scale.
inline ConvexityReport convexity_check(double p, int dim, long trials, std::uint64_t seed) {
  if (!(p >= 1.0)) throw argument_error("convexity_check: p must be at least 1");
  if (dim < 1) throw argument_error("convexity_check: dim must be positive");
  if (trials < 10000) throw argument_error("convexity_check: trials must be at least 1e4");
  RandomStream rng(seed);
  ConvexityReport rep;
  rep.trials = trials;

  auto f = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& y) {
    const double ip = y.dot(v);
    return std::pow(v.squaredNorm(), p) * ip * ip;
  };
  auto g = [&](const Eigen::MatrixXd& a, const Eigen::VectorXd& y) {
    return std::pow(a.squaredNorm(), p) * (a * y).squaredNorm();
  };

  for (long t = 0; t < trials; ++t) {
    const Eigen::VectorXd y = rng.gaussian_vector(dim);
    const Eigen::VectorXd x = rng.gaussian_vector(dim);
    const Eigen::VectorXd z = rng.gaussian_vector(dim);
    {
      const double lhs = f(0.5 * (x + z), y);
      const double rhs = 0.5 * (f(x, y) + f(z, y));
      const double slack = 1e-12 * std::max(1.0, std::max(f(x, y), f(z, y)));
      if (lhs > rhs + slack) {
        ++rep.violations;
        rep.worst_violation = std::max(rep.worst_violation, lhs - rhs);
      }
    }
    {
      Eigen::MatrixXd a(dim, dim), b(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
          a(i, j) = rng.normal();
          b(i, j) = rng.normal();
        }
      const double lhs = g(0.5 * (a + b), y);
      const double rhs = 0.5 * (g(a, y) + g(b, y));
      const double slack = 1e-12 * std::max(1.0, std::max(g(a, y), g(b, y)));
      if (lhs > rhs + slack) {
        ++rep.violations;
        rep.worst_violation = std::max(rep.worst_violation, lhs - rhs);
      }
    }
  }
  rep.pass = rep.violations == 0;
  return rep;
}

// Variance-bound right-hand side with every auxiliary quantity spelled out. sigma^2
// here is tr(V), the variance-bound convention (the Bernstein lemmas use ||V||).
struct VarianceBound {
  double rhs = 0.0;
  bool certified = false;  // Theorem-2 sample-size condition n >= n_min
  double n_min = 0.0;
  double effective_dim = 0.0;
  double worst_bias = 0.0;  // M(lambda)
  double q = 0.0;           // max(M(lambda), R)
  double g_lambda = 0.0;
  double eta = 0.0;
  double beta_delta = 0.0;
  double sup_kalpha = 0.0;
  double trace_rho = 0.0;
  double rho_norm = 0.0;
  double sigma_sq = 0.0;  // tr(V)
};

inline VarianceBound variance_bound_rhs(const diag::DiagonalModel& m, double lambda, double gamma,
                                        double alpha, long n, double delta,
                                        const MomentEnvelope& env, std::span<const double> grid) {
  if (!(lambda > 0.0)) throw argument_error("variance_bound_rhs: lambda must be positive");
  if (!(gamma >= 0.0 && gamma < m.beta))
    throw argument_error("variance_bound_rhs: need 0 <= gamma < beta");
  if (!(alpha > m.p && alpha <= 1.0)) throw argument_error("variance_bound_rhs: need p < alpha <= 1");
  if (n < 1) throw argument_error("variance_bound_rhs: n must be positive");
  check_delta(delta);
  if (env.V.rows() != m.N) throw argument_error("variance_bound_rhs: envelope dimension mismatch");

  VarianceBound vb;
  vb.sigma_sq = env.V.trace();
  vb.sup_kalpha = m.sup_norm_kalpha_exact(alpha);
  vb.worst_bias = diag::worst_case_bias(m, lambda, grid);
  vb.q = std::max(vb.worst_bias, env.R);

  Eigen::VectorXd rho(m.N);
  for (int i = 0; i < m.N; ++i) {
    const double c = lambda * m.source_coef[i] / (m.mu_vec[i] + lambda);
    rho[i] = c * c;
  }
  vb.trace_rho = rho.sum();
  vb.rho_norm = rho.maxCoeff();

  double ndim = 0.0;
  for (int i = 0; i < m.N; ++i) ndim += m.mu_vec[i] / (m.mu_vec[i] + lambda);
  vb.effective_dim = ndim;

  const double c_norm = m.mu_vec[0];  // ||C_nu||
  const double kalpha_sq_over = vb.sup_kalpha * vb.sup_kalpha * std::pow(lambda, -alpha);
  const double msq = vb.worst_bias * vb.worst_bias;

  Eigen::MatrixXd a = ndim * env.V;
  a.diagonal() += kalpha_sq_over * rho;
  vb.eta = std::max((vb.sigma_sq + msq) * c_norm / (c_norm + lambda), spectral_norm_sym(a));

  vb.beta_delta = std::log(
      4.0 * ((2.0 * vb.sigma_sq + msq) * ndim + kalpha_sq_over * vb.trace_rho) / (vb.eta * delta));
  vb.g_lambda = std::log(2.0 * std::numbers::e * ndim * (c_norm + lambda) / c_norm);
  vb.n_min = 8.0 * vb.sup_kalpha * vb.sup_kalpha * std::log(1.0 / delta) * vb.g_lambda *
             std::pow(lambda, -alpha);
  vb.certified = static_cast<double>(n) >= vb.n_min;

  vb.rhs = 3.0 * std::pow(lambda, -0.5 * gamma) *
           (16.0 * vb.q * vb.sup_kalpha * vb.beta_delta /
                (std::pow(lambda, 0.5 * alpha) * static_cast<double>(n)) +
            8.0 * std::sqrt(vb.eta * vb.beta_delta / static_cast<double>(n)));
  return vb;
}

}  // namespace cmerates::conc
