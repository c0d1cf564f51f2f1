#pragma once

#include <cmath>
#include <functional>

#include "monoflow/gaussian.hpp"
#include "monoflow/rng.hpp"

namespace testing {

using monoflow::Matrix;
using monoflow::PointBatch;
using monoflow::Vector;

inline Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

inline Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

inline Matrix target_cov() { return mat2(1.0, 0.8, 0.8, 0.89); }

inline monoflow::Gaussian target() { return monoflow::Gaussian(vec2(0, 0), target_cov()); }

inline monoflow::Gaussian initial() {
  return monoflow::Gaussian(vec2(1, 1), Matrix::Identity(2, 2));
}

inline PointBatch normals(monoflow::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  PointBatch z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return z;
}

inline double central_difference(const std::function<double(double)>& fn, double x,
                                  double step) {
  return (fn(x + step) - fn(x - step)) / (2.0 * step);
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

// Gaussian log-density evaluated from first principles for d = 2.
inline double log_density_2d(const Vector& mean, const Matrix& cov, const Vector& x) {
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  const double dx = x(0) - mean(0), dy = x(1) - mean(1);
  const double quad = (cov(1, 1) * dx * dx - 2.0 * cov(0, 1) * dx * dy + cov(0, 0) * dy * dy) / det;
  return -0.5 * quad - 0.5 * std::log(det) - std::log(2.0 * M_PI);
}

// Inverse of a symmetric 2 x 2 matrix by the adjugate formula.
inline Matrix spd_inverse_oracle(const Matrix& m) {
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return mat2(m(1, 1) / det, -m(0, 1) / det, -m(1, 0) / det, m(0, 0) / det);
}

}  // namespace testing
