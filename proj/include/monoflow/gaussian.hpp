#pragma once

// Small dense linear algebra and closed-form multivariate Gaussians.

#include <Eigen/Core>
#include <utility>

#include "monoflow/rng.hpp"

namespace monoflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n points in d dimensions, one point per row.
using PointBatch = Matrix;

/// Pivots at or below this value are treated as loss of positive-definiteness.
inline constexpr double kPivotFloor = 1e-14;

/// Lower-triangular L with L L^T = (m + m^T) / 2.
/// Throws NotPositiveDefinite when a pivot is <= kPivotFloor and DomainError
/// when m is not square or visibly asymmetric.
Matrix cholesky(const Matrix& m);

/// Solves m x = b for symmetric positive-definite m.
Vector spd_solve(const Matrix& m, const Vector& b);

/// Solves L L^T x = b given the factor.
Vector cholesky_solve(const Matrix& lower, const Vector& b);

class Gaussian {
 public:
  Gaussian(Vector mean, const Matrix& cov);

  static Gaussian standard(Eigen::Index dim);

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  const Matrix& precision() const { return precision_; }
  double log_det() const { return log_det_; }

  double log_density(const Vector& x) const;
  /// grad_x log N(x; mean, cov) = -cov^{-1} (x - mean)
  Vector score(const Vector& x) const;

  /// x_i = mean + L z_i, z_i standard normal drawn from rng in row order.
  PointBatch sample(Rng& rng, Eigen::Index n) const;

  /// Row-wise log density.
  Vector log_density(const PointBatch& x) const;
  /// Row-wise score.
  PointBatch score(const PointBatch& x) const;

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
  Matrix precision_;
  double log_det_ = 0.0;
};

/// KL(q || p) in closed form.
double kl_closed_form(const Gaussian& q, const Gaussian& p);

/// (log p(x) - log q(x), score_p(x) - score_q(x))
std::pair<double, Vector> log_ratio_and_grad(const Gaussian& p, const Gaussian& q,
                                             const Vector& x);

/// Batched form: u[i] = log p(x_i) - log q(x_i), grad.row(i) = its x-gradient.
void log_ratio_and_grad(const Gaussian& p, const Gaussian& q, const PointBatch& x,
                        Vector& u, PointBatch& grad);

/// The KL-flow field between Gaussians is affine: v(x) = a x + b.
struct AffineField {
  Matrix a;
  Vector b;

  Vector operator()(const Vector& x) const { return a * x + b; }
};

AffineField kl_flow_field(const Gaussian& p, const Gaussian& q);

/// One explicit-Euler step of the moment ODE induced by the KL flow:
/// mean += dt (a mean + b), cov += dt (a cov + cov a^T).
Gaussian moment_flow_step(const Gaussian& p, const Gaussian& q, double dt);

/// Sample mean and unbiased sample covariance. `jitter` is added to the
/// covariance diagonal before factorization.
Gaussian fit_gaussian(const PointBatch& points, double jitter = 0.0);

/// Mean and unbiased covariance without factorization.
std::pair<Vector, Matrix> sample_moments(const PointBatch& points);

}  // namespace monoflow
