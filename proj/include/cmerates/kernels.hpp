#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cmerates/errors.hpp"

namespace cmerates::kernels {

using Point = Eigen::VectorXd;

inline Point point1(double x) {
  Point p(1);
  p[0] = x;
  return p;
}

enum class KernelFamily { gaussian, laplacian, polynomial };

inline std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::gaussian: return "gaussian";
    case KernelFamily::laplacian: return "laplacian";
    case KernelFamily::polynomial: return "polynomial";
  }
  return "?";
}

// A positive-definite kernel family with parameters.
//
// Conventions (fixed here once for the whole artifact):
//   gaussian    k(x,x') = scale * exp(-||x-x'||^2 / (2 sigma^2))
//   laplacian   k(x,x') = scale * exp(-||x-x'|| / sigma)
//   polynomial  k(x,x') = scale * (<x,x'> + 1)^degree
// so k(x,x) = scale for the translation-invariant families.
struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double bandwidth = 1.0;  // sigma, length units of the domain
  int degree = 1;          // polynomial only
  double scale = 1.0;

  void validate() const {
    if (!(bandwidth > 0.0)) throw argument_error("KernelSpec: bandwidth must be positive");
    if (!(scale > 0.0)) throw argument_error("KernelSpec: scale must be positive");
    if (family == KernelFamily::polynomial && degree < 1)
      throw argument_error("KernelSpec: polynomial degree must be a positive integer");
  }

  static KernelSpec gaussian(double sigma, double scale = 1.0) {
    return KernelSpec{KernelFamily::gaussian, sigma, 1, scale};
  }
  static KernelSpec laplacian(double sigma, double scale = 1.0) {
    return KernelSpec{KernelFamily::laplacian, sigma, 1, scale};
  }
  static KernelSpec polynomial(int degree, double scale = 1.0) {
    return KernelSpec{KernelFamily::polynomial, 1.0, degree, scale};
  }
};

/// Evaluates k(x, x'). Symmetric in its point arguments.
inline double eval_kernel(const KernelSpec& spec, const Point& x, const Point& y) {
  spec.validate();
  if (x.size() != y.size())
    throw argument_error("eval_kernel: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
  switch (spec.family) {
    case KernelFamily::gaussian: {
      const double d2 = (x - y).squaredNorm();
      return spec.scale * std::exp(-d2 / (2.0 * spec.bandwidth * spec.bandwidth));
    }
    case KernelFamily::laplacian: {
      const double d = (x - y).norm();
      return spec.scale * std::exp(-d / spec.bandwidth);
    }
    case KernelFamily::polynomial: {
      const double ip = x.dot(y) + 1.0;
      return spec.scale * std::pow(ip, spec.degree);
    }
  }
  throw argument_error("eval_kernel: unknown kernel family");
}

struct GramMatrix {
  Eigen::MatrixXd entries;
  std::vector<Point> points;
  KernelSpec kernel;

  int size() const { return static_cast<int>(entries.rows()); }
};

/// Assembles the n x n Gram matrix of `spec` on `points`.
/// Rows could be filled concurrently; the entry formulas are evaluated the
/// same way either way, so the result does not depend on the schedule.
inline GramMatrix gram(const KernelSpec& spec, std::span<const Point> points) {
  spec.validate();
  if (points.empty()) throw argument_error("gram: empty point list");
  const int n = static_cast<int>(points.size());
  GramMatrix g;
  g.kernel = spec;
  g.points.assign(points.begin(), points.end());
  g.entries.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g.entries(i, j) = eval_kernel(spec, points[i], points[j]);
  return g;
}

inline GramMatrix gram(const KernelSpec& spec, const std::vector<Point>& points) {
  return gram(spec, std::span<const Point>(points));
}

/// Component i is k(points[i], x): the evaluation vector k_x of ridge-type
/// Gram systems.
inline Eigen::VectorXd kernel_vector(const KernelSpec& spec, std::span<const Point> points,
                                     const Point& x) {
  spec.validate();
  if (points.empty()) throw argument_error("kernel_vector: empty point list");
  Eigen::VectorXd v(static_cast<int>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i)
    v[static_cast<int>(i)] = eval_kernel(spec, points[i], x);
  return v;
}

inline Eigen::VectorXd kernel_vector(const KernelSpec& spec, const std::vector<Point>& points,
                                     const Point& x) {
  return kernel_vector(spec, std::span<const Point>(points), x);
}

}  // namespace cmerates::kernels
