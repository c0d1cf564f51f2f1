#include "monoflow/gaussian.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>
#include <numbers>
#include <string>

#include "monoflow/error.hpp"

namespace monoflow {
namespace {

constexpr double kAsymmetryTolerance = 1e-8;

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw DomainError(std::string(what) + ": matrix must be square and non-empty");
}

}  // namespace

Matrix cholesky(const Matrix& m) {
  require_square(m, "cholesky");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kAsymmetryTolerance * scale)
    throw DomainError("cholesky: matrix is not symmetric");
  const Matrix sym = 0.5 * (m + m.transpose());

  const Eigen::Index n = sym.rows();
  Matrix lower = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = sym(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= lower(j, k) * lower(j, k);
    if (!(pivot > kPivotFloor))
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) + " is " +
                                std::to_string(pivot));
    const double diag = std::sqrt(pivot);
    lower(j, j) = diag;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = sym(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / diag;
    }
  }
  return lower;
}

Vector cholesky_solve(const Matrix& lower, const Vector& b) {
  const Vector y = lower.triangularView<Eigen::Lower>().solve(b);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

Vector spd_solve(const Matrix& m, const Vector& b) {
  if (b.size() != m.rows()) throw DomainError("spd_solve: dimension mismatch");
  return cholesky_solve(cholesky(m), b);
}

Gaussian::Gaussian(Vector mean, const Matrix& cov) : mean_(std::move(mean)) {
  require_square(cov, "Gaussian");
  if (cov.rows() != mean_.size()) throw DomainError("Gaussian: mean/cov dimension mismatch");
  if (!mean_.allFinite() || !cov.allFinite())
    throw DomainError("Gaussian: non-finite parameters");
  chol_ = cholesky(cov);
  cov_ = 0.5 * (cov + cov.transpose());
  const Eigen::Index d = dim();
  const Matrix l_inv = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  precision_ = l_inv.transpose() * l_inv;
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

Gaussian Gaussian::standard(Eigen::Index dim) {
  return Gaussian(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

double Gaussian::log_density(const Vector& x) const {
  const Vector diff = x - mean_;
  const Vector z = chol_.triangularView<Eigen::Lower>().solve(diff);
  return -0.5 * z.squaredNorm() - 0.5 * log_det_ -
         0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi);
}

Vector Gaussian::score(const Vector& x) const { return -(precision_ * (x - mean_)); }

PointBatch Gaussian::sample(Rng& rng, Eigen::Index n) const {
  const Eigen::Index d = dim();
  PointBatch out(n, d);
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z[k] = rng.normal();
    out.row(i) = (mean_ + chol_ * z).transpose();
  }
  return out;
}

Vector Gaussian::log_density(const PointBatch& x) const {
  const PointBatch diff = x.rowwise() - mean_.transpose();
  const Vector quad = ((diff * precision_).array() * diff.array()).rowwise().sum();
  const double norm = -0.5 * log_det_ - 0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * quad.array() + norm).matrix();
}

PointBatch Gaussian::score(const PointBatch& x) const {
  // precision is symmetric, so row-wise -(P (x - m)) = -(x - m) P.
  return -((x.rowwise() - mean_.transpose()) * precision_);
}

double kl_closed_form(const Gaussian& q, const Gaussian& p) {
  if (q.dim() != p.dim()) throw DomainError("kl_closed_form: dimension mismatch");
  const Vector diff = p.mean() - q.mean();
  const double trace = (p.precision() * q.cov()).trace();
  const double maha = diff.dot(p.precision() * diff);
  const double kl = 0.5 * (trace + maha - static_cast<double>(q.dim()) + p.log_det() - q.log_det());
  return std::max(0.0, kl);
}

std::pair<double, Vector> log_ratio_and_grad(const Gaussian& p, const Gaussian& q,
                                             const Vector& x) {
  return {p.log_density(x) - q.log_density(x), p.score(x) - q.score(x)};
}

void log_ratio_and_grad(const Gaussian& p, const Gaussian& q, const PointBatch& x,
                        Vector& u, PointBatch& grad) {
  const Eigen::Index d = p.dim();
  if (q.dim() != d || x.cols() != d) throw DomainError("log_ratio_and_grad: dimension mismatch");
  const Eigen::Index n = x.rows();
  u.resize(n);
  grad.resize(n, d);
  const double offset = 0.5 * (q.log_det() - p.log_det());
  const double* pp = p.precision().data();
  const double* pq = q.precision().data();
  const double* mp = p.mean().data();
  const double* mq = q.mean().data();
  std::vector<double> dp(static_cast<std::size_t>(d)), dq(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    double* gi = grad.data() + i * d;
    for (Eigen::Index k = 0; k < d; ++k) {
      dp[k] = xi[k] - mp[k];
      dq[k] = xi[k] - mq[k];
    }
    double quad = 0.0;
    for (Eigen::Index r = 0; r < d; ++r) {
      double ap = 0.0, aq = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        ap += pp[r * d + c] * dp[c];
        aq += pq[r * d + c] * dq[c];
      }
      gi[r] = aq - ap;
      quad += aq * dq[r] - ap * dp[r];
    }
    u[i] = 0.5 * quad + offset;
  }
}

AffineField kl_flow_field(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim()) throw DomainError("kl_flow_field: dimension mismatch");
  return AffineField{-(p.precision() - q.precision()),
                     p.precision() * p.mean() - q.precision() * q.mean()};
}

Gaussian moment_flow_step(const Gaussian& p, const Gaussian& q, double dt) {
  if (!(dt > 0.0)) throw DomainError("moment_flow_step: dt must be positive");
  const AffineField field = kl_flow_field(p, q);
  Vector mean = q.mean() + dt * (field.a * q.mean() + field.b);
  Matrix cov = q.cov() + dt * (field.a * q.cov() + q.cov() * field.a.transpose());
  return Gaussian(std::move(mean), cov);
}

std::pair<Vector, Matrix> sample_moments(const PointBatch& points) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  if (n < 2) throw DomainError("sample_moments: need at least two points");
  Vector mean = Vector::Zero(d);
  const double* x = points.data();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) mean[k] += x[i * d + k];
  mean /= static_cast<double>(n);
  Matrix cov = Matrix::Zero(d, d);
  std::vector<double> c(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) c[k] = x[i * d + k] - mean[k];
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = a; b < d; ++b) cov(a, b) += c[a] * c[b];
  }
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = a; b < d; ++b) cov(b, a) = cov(a, b) /= static_cast<double>(n - 1);
  return {std::move(mean), std::move(cov)};
}

Gaussian fit_gaussian(const PointBatch& points, double jitter) {
  if (points.rows() < points.cols() + 1)
    throw NotPositiveDefinite("fit_gaussian: need at least d+1 points");
  auto [mean, cov] = sample_moments(points);
  if (jitter > 0.0) cov.diagonal().array() += jitter;
  return Gaussian(std::move(mean), cov);
}

}  // namespace monoflow
