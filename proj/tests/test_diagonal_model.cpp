#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/SVD>

#include "cmerates/cme.hpp"
#include "cmerates/diagonal_model.hpp"
#include "cmerates/fitting.hpp"
#include "cmerates/harness.hpp"

using namespace cmerates;
using diag::DiagonalModel;

namespace {

// Independent re-implementation of the embedding coefficients: direct trig,
// no shared code with true_embedding.
Eigen::VectorXd embedding_reference(double p, double beta, double B, int n_modes, double x,
                                    double lambda) {
  Eigen::VectorXd out(n_modes);
  for (int i = 1; i <= n_modes; ++i) {
    const double mu = std::pow(static_cast<double>(i), -1.0 / p);
    double e;
    if (i == 1) {
      e = 1.0;
    } else if (i % 2 == 0) {
      e = std::numbers::sqrt2 * std::cos(2.0 * std::numbers::pi * (i / 2) * x);
    } else {
      e = std::numbers::sqrt2 * std::sin(2.0 * std::numbers::pi * ((i - 1) / 2) * x);
    }
    double c = B * std::pow(mu, beta / 2.0) * e;
    if (lambda > 0.0) c *= mu / (mu + lambda);
    out[i - 1] = c;
  }
  return out;
}

std::vector<double> grid_of(int g) {
  std::vector<double> out;
  for (int i = 0; i < g; ++i) out.push_back(static_cast<double>(i) / g);
  return out;
}

std::vector<double> lambda_grid() {
  std::vector<double> l;
  for (int k = 0; k < 12; ++k) l.push_back(1e-6 * std::pow(1e4, k / 11.0));
  return l;
}

}  // namespace

TEST_CASE("model construction validates the assumption regime") {
  CHECK_THROWS_AS(DiagonalModel::make(0.0, 1.0, 1.0), argument_error);
  CHECK_THROWS_AS(DiagonalModel::make(0.5, 0.4, 1.0), argument_error);   // beta <= p
  CHECK_THROWS_AS(DiagonalModel::make(0.5, 2.0, 1.0), argument_error);   // beta >= 2
  CHECK_THROWS_AS(DiagonalModel::make(0.5, 1.0, 0.0), argument_error);
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0);
  CHECK(m.N == DiagonalModel::kMaxModes);  // 1e-10 budget unreachable, capped with estimate
  CHECK(m.trunc_tail_estimate > 0.0);
  CHECK(m.t_vec.cwiseAbs().maxCoeff() == 1.0);  // sup_i |t_i| = B
}

TEST_CASE("constant-target model is bounded but not Hilbert-Schmidt") {
  // ||C^beta||_HS^2 = sum t_i^2 grows linearly with the truncation: the
  // bounded, non-HS headline regime.
  const auto m1 = DiagonalModel::make(0.5, 1.0, 1.0, 100);
  const auto m2 = DiagonalModel::make(0.5, 1.0, 1.0, 200);
  CHECK_THAT(m1.t_vec.squaredNorm(), Catch::Matchers::WithinAbs(100.0, 1e-9));
  CHECK_THAT(m2.t_vec.squaredNorm(), Catch::Matchers::WithinAbs(200.0, 1e-9));
}

TEST_CASE("Fourier basis is empirically orthonormal under the uniform marginal") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 12);
  RandomStream rng(4242);
  const int n = 100000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m.N, m.N);
  for (int s = 0; s < n; ++s) {
    const Eigen::VectorXd e = m.basis_at(rng.uniform01());
    acc.selfadjointView<Eigen::Lower>().rankUpdate(e, 1.0);
  }
  const Eigen::MatrixXd g = Eigen::MatrixXd(acc.selfadjointView<Eigen::Lower>()) / n;
  CHECK((g - Eigen::MatrixXd::Identity(m.N, m.N)).cwiseAbs().maxCoeff() <= 0.02);
}

TEST_CASE("true_embedding matches an independent implementation") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 600);
  const Eigen::VectorXd got = diag::true_embedding(m, 0.3, 1e-3);
  const Eigen::VectorXd want = embedding_reference(0.5, 1.0, 1.0, 600, 0.3, 1e-3);
  CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-14);

  // x = 0 kills every sine coordinate.
  const Eigen::VectorXd at0 = diag::true_embedding(m, 0.0);
  for (int i = 2; i < m.N; i += 2) CHECK(at0[i] == 0.0);

  // lambda -> 0 limit approaches the unregularized coefficients.
  const Eigen::VectorXd plain = diag::true_embedding(m, 0.3);
  const Eigen::VectorXd tiny = diag::true_embedding(m, 0.3, 1e-12);
  CHECK((plain - tiny).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK_THROWS_AS(diag::true_embedding(m, 0.3, -1.0), argument_error);

  // The difference vector carries the damping factors lambda/(mu_i + lambda).
  const Eigen::VectorXd diff = plain - got;
  for (int i = 0; i < m.N; ++i)
    CHECK_THAT(diff[i], Catch::Matchers::WithinAbs(
                            1e-3 / (m.mu_vec[i] + 1e-3) * plain[i], 1e-15));
}

TEST_CASE("expected_bias decays at rate beta - p with the fitted constant bound") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 200000);
  const auto lambdas = lambda_grid();
  std::vector<double> eb;
  double prev = -1.0;
  for (double l : lambdas) {
    eb.push_back(diag::expected_bias(m, l));
    CHECK(eb.back() > prev);  // monotone increasing in lambda
    prev = eb.back();
  }
  const auto fit = fit_loglog(lambdas, eb);
  CHECK_THAT(fit.slope, Catch::Matchers::WithinAbs(0.5, 0.05));

  double d_hat = 0.0;
  for (std::size_t i = 0; i < eb.size(); ++i)
    d_hat = std::max(d_hat, eb[i] / std::pow(lambdas[i], 0.5));
  for (std::size_t i = 0; i < eb.size(); ++i)
    CHECK(eb[i] <= d_hat * std::pow(lambdas[i], 0.5) * (1.0 + 1e-12));

  // Raw-sum oracle with 1e6 terms at one lambda.
  const double lambda = 1e-4;
  double brute = 0.0;
  for (std::size_t i = 1; i <= 1000000; ++i) {
    const double mu = 1.0 / (static_cast<double>(i) * static_cast<double>(i));
    const double c = lambda * std::sqrt(mu) / (mu + lambda);
    brute += c * c;
  }
  CHECK_THAT(diag::expected_bias(m, lambda), Catch::Matchers::WithinRel(brute, 2e-2));

  // Truncation guard: the peak index lambda^{-p} must sit inside the model.
  const auto small = DiagonalModel::make(0.5, 1.0, 1.0, 50);
  CHECK_THROWS_AS(diag::expected_bias(small, 1e-6), numeric_error);
}

TEST_CASE("worst_case_bias dominates the average and vanishes with lambda") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 20000);
  const auto grid = grid_of(2048);
  const auto lambdas = lambda_grid();
  std::vector<double> msq;
  for (double l : lambdas) {
    const double mv = diag::worst_case_bias(m, l, grid);
    msq.push_back(mv * mv);
    CHECK(mv * mv >= diag::expected_bias(m, l) * (1.0 - 1e-12));  // sup dominates mean
  }
  // Decay direction in the beta > alpha regime: M^2 <= const lambda^{beta - alpha}
  // at alpha = p + 0.05; the fitted slope must not fall below beta - alpha.
  const auto fit = fit_loglog(lambdas, msq);
  CHECK(fit.slope >= (1.0 - 0.55) - 0.05);
  CHECK(msq.front() < 1e-2);  // M(lambda) -> 0 as lambda -> 0
  CHECK(msq.front() < msq.back());

  // Pointwise constant bound M^2 <= ||k^alpha||_inf^2 B^2 lambda^{beta - alpha}.
  for (double alpha : {0.55, 0.6, 0.8}) {
    const double k2 = std::pow(m.sup_norm_kalpha_exact(alpha), 2.0);
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      CHECK(msq[i] <= k2 * std::pow(lambdas[i], 1.0 - alpha) * (1.0 + 1e-12));
  }
}

TEST_CASE("worst_case_bias folding path agrees with the direct mode loop") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 333);
  const auto equi = grid_of(64);
  std::vector<double> jittered = equi;
  jittered[10] += 1e-4;  // breaks the equispaced detection
  const double fast = diag::worst_case_bias(m, 1e-3, equi);
  const double slow = diag::worst_case_bias(m, 1e-3, jittered);
  CHECK_THAT(fast, Catch::Matchers::WithinRel(slow, 1e-6));
}

TEST_CASE("second_moment_norm: slope beta, explicit bound, single-mode formula") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 200000);
  const auto lambdas = lambda_grid();
  std::vector<double> vals;
  for (double l : lambdas) {
    vals.push_back(diag::second_moment_norm(m, l));
    CHECK(vals.back() <= 1.0 * std::pow(l, 1.0) * (1.0 + 1e-12));  // M_lambda <= B^2 lambda^beta
  }
  const auto fit = fit_loglog(lambdas, vals);
  CHECK_THAT(fit.slope, Catch::Matchers::WithinAbs(1.0, 0.05));

  const auto single = DiagonalModel::make(0.5, 1.0, 2.0, 1);
  const double l = 0.37;
  const double expect = std::pow(l * 1.0 / (1.0 + l), 2.0) * 4.0;  // mu_1 = 1, B^2 = 4
  CHECK_THAT(diag::second_moment_norm(single, l), Catch::Matchers::WithinRel(expect, 1e-14));
}

TEST_CASE("operator_bias_gamma: slope (beta-gamma)/2, bound, gamma -> beta limit") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 200000);
  const auto lambdas = lambda_grid();
  std::vector<double> vals;
  for (double l : lambdas) {
    vals.push_back(diag::operator_bias_gamma(m, l, 0.2));
    CHECK(vals.back() <= 1.0 * std::pow(l, 0.4) * (1.0 + 1e-12));  // <= B lambda^{(beta-gamma)/2}
  }
  const auto fit = fit_loglog(lambdas, vals);
  CHECK_THAT(fit.slope, Catch::Matchers::WithinAbs(0.4, 0.05));

  // gamma -> beta^-: value stays bounded by B.
  CHECK(diag::operator_bias_gamma(m, 0.1, 1.0 - 1e-9) <= 1.0 + 1e-9);
  CHECK_THROWS_AS(diag::operator_bias_gamma(m, 0.1, 1.0), argument_error);
}

TEST_CASE("sample_features: variances, noiseless case, determinism, envelope guard") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 40);
  std::vector<double> v(40, 0.0);
  for (int i = 0; i < 40; ++i) v[static_cast<std::size_t>(i)] = 0.05 / ((i + 1.0) * (i + 1.0));

  // R very large: empirical covariance within 3 standard errors of diag(V).
  const int n = 10000;
  const auto fs = diag::sample_features(m, n, 10.0, v, 77);
  Eigen::MatrixXd eps(8, n);
  for (int s = 0; s < n; ++s) {
    const Eigen::VectorXd e = m.basis_at(fs.x[s]);
    for (int i = 0; i < 8; ++i) eps(i, s) = fs.ell(i, s) - m.source_coef[i] * e[i];
  }
  CHECK(eps.colwise().norm().maxCoeff() <= fs.R);  // bounded noise
  for (int i = 0; i < 8; ++i) {
    const double sample_var = eps.row(i).squaredNorm() / n;
    // var of eps^2 for uniform noise is (4/5) V^2; SE = sqrt(4/5) V / sqrt(n)
    const double se = std::sqrt(0.8) * v[static_cast<std::size_t>(i)] / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(sample_var - v[static_cast<std::size_t>(i)]) <= 3.0 * se + 1e-12);
    for (int j = 0; j < i; ++j) {
      const double cov = eps.row(i).dot(eps.row(j)) / n;
      const double se_cov = std::sqrt(v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(j)] /
                                      static_cast<double>(n));
      CHECK(std::fabs(cov) <= 3.0 * se_cov + 1e-12);
    }
  }

  // V = 0: features are exactly the true embedding.
  const std::vector<double> zero(40, 0.0);
  const auto noiseless = diag::sample_features(m, 50, 1.0, zero, 5);
  for (int s = 0; s < 50; ++s) {
    const Eigen::VectorXd want = diag::true_embedding(m, noiseless.x[s]);
    CHECK((noiseless.ell.col(s) - want).cwiseAbs().maxCoeff() == 0.0);
  }

  // Fixed seed reproduces bit-identically.
  const auto a = diag::sample_features(m, 64, 1.0, v, 123);
  const auto b = diag::sample_features(m, 64, 1.0, v, 123);
  CHECK(a.x == b.x);
  CHECK(a.ell == b.ell);

  // Norm bound sqrt(3 sum V) must fit under R.
  std::vector<double> heavy(40, 1.0);
  CHECK_THROWS_AS(diag::sample_features(m, 10, 1.0, heavy, 1), argument_error);
}

TEST_CASE("empirical_cme_matrix approaches the population diagonal") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 8);
  const std::vector<double> zero(8, 0.0);
  const double lambda = 0.1;
  const auto fs = diag::sample_features(m, 200000, 1.0, zero, 2024);
  const Eigen::MatrixXd c_hat = diag::empirical_cme_matrix(fs, m, lambda);
  Eigen::MatrixXd want = Eigen::MatrixXd::Zero(8, 8);
  for (int i = 0; i < 8; ++i) {
    const double mu = m.mu_vec[i];
    want(i, i) = m.t_vec[i] * std::pow(mu, 0.5 * (m.beta - 1.0)) * mu / (mu + lambda);
  }
  CHECK((c_hat - want).cwiseAbs().maxCoeff() <= 0.02);

  // Huge lambda: matrix ~ (1/lambda) C_YX, entries -> 0.
  const auto fs2 = diag::sample_features(m, 500, 1.0, zero, 7);
  const double big = 1e8;
  const Eigen::MatrixXd shrunk = diag::empirical_cme_matrix(fs2, m, big);
  Eigen::MatrixXd phi(8, 500);
  for (int s = 0; s < 500; ++s) phi.col(s) = m.feat_scale.cwiseProduct(m.basis_at(fs2.x[s]));
  const Eigen::MatrixXd cyx = fs2.ell * phi.transpose() / 500.0;
  CHECK((shrunk - cyx / big).cwiseAbs().maxCoeff() <= 1e-8 / big * 500);
  CHECK(shrunk.cwiseAbs().maxCoeff() <= 1e-7);

  // N = 1 scalar formula.
  const auto m1 = DiagonalModel::make(0.5, 1.0, 1.0, 1);
  const auto fs1 = diag::sample_features(m1, 64, 1.0, std::vector<double>{0.0}, 3);
  double cxx = 0.0, cyx1 = 0.0;
  for (int s = 0; s < 64; ++s) {
    const double f = m1.feat_scale[0] * 1.0;
    cxx += f * f;
    cyx1 += fs1.ell(0, s) * f;
  }
  cxx /= 64.0;
  cyx1 /= 64.0;
  const Eigen::MatrixXd got = diag::empirical_cme_matrix(fs1, m1, 0.25);
  CHECK_THAT(got(0, 0), Catch::Matchers::WithinRel(cyx1 / (cxx + 0.25), 1e-12));
}

TEST_CASE("gamma_norm_error: identity, bias-lemma equality, SVD cross-check") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 50);
  const double lambda = 1e-2, gamma = 0.2;
  const Eigen::MatrixXd reg = diag::regularized_cme_matrix(m, lambda);

  CHECK(diag::gamma_norm_error(m, reg, gamma, diag::CmeTarget::regularized, lambda) == 0.0);

  // Two independent code paths for ||C^lambda - C||_gamma (the Sobolev-norm
  // identity for diagonal operators).
  const double via_matrix = diag::gamma_norm_error(m, reg, gamma, diag::CmeTarget::true_cme);
  const double via_sup = diag::operator_bias_gamma(m, lambda, gamma);
  CHECK_THAT(via_matrix, Catch::Matchers::WithinAbs(via_sup, 1e-12));

  // Dense SVD oracle on a non-diagonal perturbation.
  RandomStream rng(99);
  Eigen::MatrixXd c_hat = reg;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) c_hat(i, j) += 0.01 * rng.normal();
  // Oracle assembles the lifted difference directly: C_hat diag(mu^{(1-gamma)/2})
  // minus diag(t_i mu^{(beta-gamma)/2}) (beta = 1 here).
  Eigen::MatrixXd d = c_hat;
  for (int j = 0; j < 50; ++j) d.col(j) *= std::pow(m.mu_vec[j], 0.5 * (1.0 - gamma));
  for (int i = 0; i < 50; ++i) d(i, i) -= m.t_vec[i] * std::pow(m.mu_vec[i], 0.5 * (m.beta - gamma));
  const double oracle = Eigen::JacobiSVD<Eigen::MatrixXd>(d).singularValues()[0];
  CHECK_THAT(diag::gamma_norm_error(m, c_hat, gamma, diag::CmeTarget::true_cme),
             Catch::Matchers::WithinRel(oracle, 1e-10));

  CHECK_THROWS_AS(diag::gamma_norm_error(m, reg, 1.0, diag::CmeTarget::true_cme), argument_error);
}

TEST_CASE("Sobolev-norm identity: adjoint-composition route equals diagonal scaling") {
  // For a diagonal operator T with entries d_i over {mu^{beta/2} e_i} -> {f_i},
  // ||T||_{beta,gamma} computed via T lifted to the gamma basis equals the
  // sup of d_i mu_i^{(beta-gamma)/2}.
  const auto m = DiagonalModel::make(0.5, 1.2, 1.0, 64);
  RandomStream rng(5);
  const double gamma = 0.3;
  double sup = 0.0;
  Eigen::MatrixXd lifted = Eigen::MatrixXd::Zero(64, 64);
  for (int i = 0; i < 64; ++i) {
    const double di = rng.uniform01();
    sup = std::max(sup, di * std::pow(m.mu_vec[i], 0.5 * (m.beta - gamma)));
    lifted(i, i) = di * std::pow(m.mu_vec[i], 0.5 * (m.beta - gamma));
  }
  CHECK_THAT(Eigen::JacobiSVD<Eigen::MatrixXd>(lifted).singularValues()[0],
             Catch::Matchers::WithinRel(sup, 1e-12));
}

TEST_CASE("conditioning-operator norm equals sup |t_i| (hypothesis-space identity)") {
  // ||E[f(Y)|X=.]||_{H^beta} for unit f: coefficients f_j t_j in the
  // orthonormal basis {mu^{beta/2} e_j}, so the sup over unit f is sup |t_j|.
  const auto m = DiagonalModel::make(0.5, 1.0, 2.5, 32, 1e-10, diag::TargetProfile::power_law, 0.3);
  RandomStream rng(6);
  double best = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd f = rng.gaussian_vector(32);
    f.normalize();
    double norm_sq = 0.0;
    for (int j = 0; j < 32; ++j) {
      const double coef = f[j] * m.t_vec[j];
      norm_sq += coef * coef;
    }
    best = std::max(best, std::sqrt(norm_sq));
    CHECK(std::sqrt(norm_sq) <= m.B * (1.0 + 1e-12));
  }
  // The sup is attained at f = first coordinate vector.
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(32);
  e1[0] = 1.0;
  CHECK_THAT(std::fabs(e1[0] * m.t_vec[0]), Catch::Matchers::WithinRel(m.B, 1e-12));
}

TEST_CASE("gamma-norm error against the true CME shrinks when n doubles") {
  const auto m = DiagonalModel::make(0.5, 1.0, 1.0, 120);
  std::vector<double> v(120);
  for (int i = 0; i < 120; ++i) v[static_cast<std::size_t>(i)] = 0.05 / ((i + 1.0) * (i + 1.0));
  auto median_err = [&](long n) {
    std::vector<double> errs;
    const double lambda = cme::lambda_schedule(n, 1.1, 0.6, 1.0, 0.5, 1.0);
    for (int s = 0; s < 20; ++s) {
      const auto fs = diag::sample_features(m, static_cast<int>(n), 0.5, v,
                                            derive_seed(404, static_cast<std::uint64_t>(s) + 100 * n));
      const auto c_hat = diag::empirical_cme_matrix(fs, m, lambda);
      errs.push_back(diag::gamma_norm_error(m, c_hat, 0.2, diag::CmeTarget::true_cme));
    }
    return harness::median(errs);
  };
  const double e250 = median_err(250);
  const double e500 = median_err(500);
  const double e1000 = median_err(1000);
  CHECK(e500 < e250);
  CHECK(e1000 < e500);
}
