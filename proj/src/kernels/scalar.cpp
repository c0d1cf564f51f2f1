#include <cmath>

#include "monoflow/kernels.hpp"

namespace monoflow::kernels {
namespace {

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void bias_leaky_relu(std::size_t rows, std::size_t cols, const double* bias,
                     double slope, double* pre, double* post) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* pr = pre + r * cols;
    double* po = post + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const double z = pr[c] + bias[c];
      pr[c] = z;
      po[c] = z > 0.0 ? z : slope * z;
    }
  }
}

void leaky_relu_backward(std::size_t n, const double* pre, double slope,
                         double* grad) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(pre[i] > 0.0)) grad[i] *= slope;
}

void column_sums(std::size_t rows, std::size_t cols, const double* a, double* out,
                 bool accumulate) {
  if (!accumulate)
    for (std::size_t c = 0; c < cols; ++c) out[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += a[r * cols + c];
}

double dot(std::size_t n, const double* a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void adam_update(std::size_t n, double* param, const double* grad, double* m,
                 double* v, double lr, double beta1, double beta2, double eps,
                 double bias_corr1, double bias_corr2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double m_hat = m[i] / bias_corr1;
    const double v_hat = v[i] / bias_corr2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      Isa::Scalar,  "scalar", gemm_nt, gemm_nn, gemm_tn, bias_leaky_relu,
      leaky_relu_backward, column_sums, dot, axpy, adam_update,
  };
  return table;
}

}  // namespace monoflow::kernels
