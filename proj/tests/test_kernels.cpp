#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "cmerates/kernels.hpp"
#include "cmerates/rng.hpp"

using namespace cmerates;
using kernels::KernelSpec;
using kernels::Point;

namespace {

std::vector<Point> random_points(int n, int dim, std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) {
    Point p(dim);
    for (int d = 0; d < dim; ++d) p[d] = rng.uniform01();
    pts.push_back(p);
  }
  return pts;
}

// Brute-force re-evaluation, independent of eval_kernel's code path.
double gaussian_direct(double sigma, double scale, const Point& x, const Point& y) {
  double d2 = 0.0;
  for (int i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  return scale * std::exp(-d2 / (2.0 * sigma * sigma));
}

}  // namespace

TEST_CASE("eval_kernel trivial values") {
  const auto g = KernelSpec::gaussian(1.0);
  const Point x = kernels::point1(0.25);
  CHECK(kernels::eval_kernel(g, x, x) == 1.0);

  Point a(2), b(2);
  a << 0.0, 0.0;
  b << 1.0, 1.0;  // ||a-b|| = sqrt(2)
  CHECK_THAT(kernels::eval_kernel(g, a, b), Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-15));

  const auto poly = KernelSpec::polynomial(1);
  CHECK(kernels::eval_kernel(poly, kernels::point1(2.0), kernels::point1(3.0)) == 7.0);
}

TEST_CASE("eval_kernel rejects mismatched dimensions and bad parameters") {
  const auto g = KernelSpec::gaussian(1.0);
  Point a(2), b(3);
  a.setZero();
  b.setZero();
  CHECK_THROWS_AS(kernels::eval_kernel(g, a, b), argument_error);
  KernelSpec bad = g;
  bad.bandwidth = 0.0;
  CHECK_THROWS_AS(kernels::eval_kernel(bad, a, a), argument_error);
  bad = KernelSpec::polynomial(0);
  CHECK_THROWS_AS(bad.validate(), argument_error);
}

TEST_CASE("gram trivial cases") {
  const auto g = KernelSpec::gaussian(1.0);
  const std::vector<Point> one = {kernels::point1(0.3)};
  const auto g1 = kernels::gram(g, one);
  REQUIRE(g1.size() == 1);
  CHECK(g1.entries(0, 0) == 1.0);

  // Duplicate points force rank deficiency; smallest eigenvalue is 0.
  const std::vector<Point> dup = {kernels::point1(0.0), kernels::point1(0.0)};
  const auto g2 = kernels::gram(g, dup);
  CHECK(g2.entries(0, 1) == 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g2.entries);
  CHECK_THAT(es.eigenvalues()[0], Catch::Matchers::WithinAbs(0.0, 1e-14));
  CHECK_THAT(es.eigenvalues()[1], Catch::Matchers::WithinAbs(2.0, 1e-14));

  CHECK_THROWS_AS(kernels::gram(g, std::vector<Point>{}), argument_error);
}

TEST_CASE("gram matches entrywise brute force and is PSD on random points") {
  const auto spec = KernelSpec::gaussian(0.37, 1.4);
  const auto pts = random_points(50, 3, 11);
  const auto g = kernels::gram(spec, pts);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j)
      CHECK_THAT(g.entries(i, j),
                 Catch::Matchers::WithinAbs(gaussian_direct(0.37, 1.4, pts[i], pts[j]), 1e-15));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.entries, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() >= -1e-9 * es.eigenvalues().maxCoeff());
  CHECK((g.entries - g.entries.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * g.entries.norm());
}

TEST_CASE("kernel symmetry and boundedness over sampled pairs") {
  const auto pts = random_points(40, 2, 5);
  for (const auto spec : {KernelSpec::gaussian(0.5, 2.0), KernelSpec::laplacian(0.8, 0.7),
                          KernelSpec::polynomial(3, 1.2)}) {
    double sup_diag = 0.0;
    for (int i = 0; i < 40; ++i) {
      for (int j = 0; j < 40; ++j)
        CHECK(std::fabs(kernels::eval_kernel(spec, pts[i], pts[j]) -
                        kernels::eval_kernel(spec, pts[j], pts[i])) <= 1e-14);
      sup_diag = std::max(sup_diag, kernels::eval_kernel(spec, pts[i], pts[i]));
    }
    if (spec.family != kernels::KernelFamily::polynomial)
      CHECK_THAT(sup_diag, Catch::Matchers::WithinAbs(spec.scale, 1e-15));
  }
}

TEST_CASE("PSD holds for 200-point Gram matrices of every family") {
  const auto pts = random_points(200, 2, 17);
  for (const auto spec : {KernelSpec::gaussian(0.2), KernelSpec::laplacian(0.3),
                          KernelSpec::polynomial(2)}) {
    const auto g = kernels::gram(spec, pts);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.entries, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9 * es.eigenvalues().maxCoeff());
  }
}

TEST_CASE("kernel_vector agrees with gram columns") {
  const auto spec = KernelSpec::gaussian(0.4, 1.3);
  const auto pts = random_points(10, 2, 23);
  const auto g = kernels::gram(spec, pts);

  // x equals points[0]: first component is k(x, x) = scale.
  const Eigen::VectorXd v0 = kernels::kernel_vector(spec, pts, pts[0]);
  CHECK_THAT(v0[0], Catch::Matchers::WithinAbs(spec.scale, 1e-15));

  for (int j = 0; j < 10; ++j) {
    const Eigen::VectorXd v = kernels::kernel_vector(spec, pts, pts[j]);
    CHECK((v - g.entries.col(j)).cwiseAbs().maxCoeff() <= 1e-15);
  }

  const std::vector<Point> single = {kernels::point1(0.5)};
  const Eigen::VectorXd vs = kernels::kernel_vector(KernelSpec::gaussian(1.0), single,
                                                    kernels::point1(0.5));
  REQUIRE(vs.size() == 1);
  CHECK(vs[0] == 1.0);
}
