#include "monoflow/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define MONOFLOW_HAVE_X86 1
#include <immintrin.h>
#else
#define MONOFLOW_HAVE_X86 0
#endif

#if MONOFLOW_HAVE_X86

#include <cmath>
#include <vector>

#define MONOFLOW_AVX2 __attribute__((target("avx2,fma")))

namespace monoflow::kernels {
namespace {

MONOFLOW_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

MONOFLOW_AVX2 double dot(std::size_t n, const double* a, const double* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// 2 x 16 register block: each B row segment is loaded once per row pair.
MONOFLOW_AVX2 void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
                           const double* a, const double* b, double* c,
                           bool accumulate) {
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    double* c0r = c + i * n;
    double* c1r = c0r + n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d x0, x1, x2, x3, y0, y1, y2, y3;
      if (accumulate) {
        x0 = _mm256_loadu_pd(c0r + j);
        x1 = _mm256_loadu_pd(c0r + j + 4);
        x2 = _mm256_loadu_pd(c0r + j + 8);
        x3 = _mm256_loadu_pd(c0r + j + 12);
        y0 = _mm256_loadu_pd(c1r + j);
        y1 = _mm256_loadu_pd(c1r + j + 4);
        y2 = _mm256_loadu_pd(c1r + j + 8);
        y3 = _mm256_loadu_pd(c1r + j + 12);
      } else {
        x0 = x1 = x2 = x3 = y0 = y1 = y2 = y3 = _mm256_setzero_pd();
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const __m256d b2 = _mm256_loadu_pd(bp + 8);
        const __m256d b3 = _mm256_loadu_pd(bp + 12);
        const __m256d u = _mm256_broadcast_sd(a0 + p);
        const __m256d v = _mm256_broadcast_sd(a1 + p);
        x0 = _mm256_fmadd_pd(u, b0, x0);
        x1 = _mm256_fmadd_pd(u, b1, x1);
        x2 = _mm256_fmadd_pd(u, b2, x2);
        x3 = _mm256_fmadd_pd(u, b3, x3);
        y0 = _mm256_fmadd_pd(v, b0, y0);
        y1 = _mm256_fmadd_pd(v, b1, y1);
        y2 = _mm256_fmadd_pd(v, b2, y2);
        y3 = _mm256_fmadd_pd(v, b3, y3);
      }
      _mm256_storeu_pd(c0r + j, x0);
      _mm256_storeu_pd(c0r + j + 4, x1);
      _mm256_storeu_pd(c0r + j + 8, x2);
      _mm256_storeu_pd(c0r + j + 12, x3);
      _mm256_storeu_pd(c1r + j, y0);
      _mm256_storeu_pd(c1r + j + 4, y1);
      _mm256_storeu_pd(c1r + j + 8, y2);
      _mm256_storeu_pd(c1r + j + 12, y3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d x0 = accumulate ? _mm256_loadu_pd(c0r + j) : _mm256_setzero_pd();
      __m256d y0 = accumulate ? _mm256_loadu_pd(c1r + j) : _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * n + j);
        x0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), bv, x0);
        y0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), bv, y0);
      }
      _mm256_storeu_pd(c0r + j, x0);
      _mm256_storeu_pd(c1r + j, y0);
    }
    for (; j < n; ++j) {
      double s0 = accumulate ? c0r[j] : 0.0;
      double s1 = accumulate ? c1r[j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s0 += a0[p] * b[p * n + j];
        s1 += a1[p] * b[p * n + j];
      }
      c0r[j] = s0;
      c1r[j] = s1;
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d x0 = accumulate ? _mm256_loadu_pd(ci + j) : _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p)
        x0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ai + p), _mm256_loadu_pd(b + p * n + j), x0);
      _mm256_storeu_pd(ci + j, x0);
    }
    for (; j < n; ++j) {
      double s = accumulate ? ci[j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p * n + j];
      ci[j] = s;
    }
  }
}

// For a single output column the dot-product form is best; otherwise B
// (small: it is a weight matrix in every caller) is transposed once and the
// product runs through the row-blocked kernel.
MONOFLOW_AVX2 void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
                           const double* a, const double* b, double* c,
                           bool accumulate) {
  if (n < 4) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double s = dot(k, ai, b + j * k);
        ci[j] = accumulate ? ci[j] + s : s;
      }
    }
    return;
  }
  thread_local std::vector<double> bt;
  bt.resize(n * k);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

// 4 x 8 register block over rows i of C (columns of A) so that each B row
// segment is reused four times.
MONOFLOW_AVX2 void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
                           const double* a, const double* b, double* c,
                           bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      __m256d acc[4][2];
      for (int r = 0; r < 4; ++r) {
        double* cr = c + (i + r) * n + j;
        acc[r][0] = accumulate ? _mm256_loadu_pd(cr) : _mm256_setzero_pd();
        acc[r][1] = accumulate ? _mm256_loadu_pd(cr + 4) : _mm256_setzero_pd();
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const double* ap = a + p * m + i;
        for (int r = 0; r < 4; ++r) {
          const __m256d av = _mm256_broadcast_sd(ap + r);
          acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        double* cr = c + (i + r) * n + j;
        _mm256_storeu_pd(cr, acc[r][0]);
        _mm256_storeu_pd(cr + 4, acc[r][1]);
      }
    }
    for (; i < m; ++i) {
      double* cr = c + i * n + j;
      __m256d c0 = accumulate ? _mm256_loadu_pd(cr) : _mm256_setzero_pd();
      __m256d c1 = accumulate ? _mm256_loadu_pd(cr + 4) : _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(a + p * m + i);
        c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j), c0);
        c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j + 4), c1);
      }
      _mm256_storeu_pd(cr, c0);
      _mm256_storeu_pd(cr + 4, c1);
    }
  }
  for (; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

MONOFLOW_AVX2 void bias_leaky_relu(std::size_t rows, std::size_t cols,
                                   const double* bias, double slope, double* pre,
                                   double* post) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sv = _mm256_set1_pd(slope);
  for (std::size_t r = 0; r < rows; ++r) {
    double* pr = pre + r * cols;
    double* po = post + r * cols;
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      const __m256d z = _mm256_add_pd(_mm256_loadu_pd(pr + c), _mm256_loadu_pd(bias + c));
      _mm256_storeu_pd(pr + c, z);
      const __m256d pos = _mm256_cmp_pd(z, zero, _CMP_GT_OQ);
      _mm256_storeu_pd(po + c, _mm256_blendv_pd(_mm256_mul_pd(sv, z), z, pos));
    }
    for (; c < cols; ++c) {
      const double z = pr[c] + bias[c];
      pr[c] = z;
      po[c] = z > 0.0 ? z : slope * z;
    }
  }
}

MONOFLOW_AVX2 void leaky_relu_backward(std::size_t n, const double* pre,
                                       double slope, double* grad) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d pos = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
    const __m256d scale = _mm256_blendv_pd(sv, one, pos);
    _mm256_storeu_pd(grad + i, _mm256_mul_pd(_mm256_loadu_pd(grad + i), scale));
  }
  for (; i < n; ++i)
    if (!(pre[i] > 0.0)) grad[i] *= slope;
}

MONOFLOW_AVX2 void column_sums(std::size_t rows, std::size_t cols, const double* a,
                               double* out, bool accumulate) {
  if (!accumulate)
    for (std::size_t c = 0; c < cols; ++c) out[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * cols;
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4)
      _mm256_storeu_pd(out + c, _mm256_add_pd(_mm256_loadu_pd(out + c), _mm256_loadu_pd(ar + c)));
    for (; c < cols; ++c) out[c] += ar[c];
  }
}

MONOFLOW_AVX2 void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

MONOFLOW_AVX2 void adam_update(std::size_t n, double* param, const double* grad,
                               double* m, double* v, double lr, double beta1,
                               double beta2, double eps, double bias_corr1,
                               double bias_corr2) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d inv_bc1 = _mm256_set1_pd(1.0 / bias_corr1);
  const __m256d inv_bc2 = _mm256_set1_pd(1.0 / bias_corr2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, inv_bc2)), epsv);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, _mm256_mul_pd(mi, inv_bc1)), denom);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    param[i] -= lr * (m[i] / bias_corr1) / (std::sqrt(v[i] / bias_corr2) + eps);
  }
}

}  // namespace

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

const KernelTable* avx2_table() {
  static const KernelTable table{
      Isa::Avx2, "avx2", gemm_nt, gemm_nn, gemm_tn, bias_leaky_relu,
      leaky_relu_backward, column_sums, dot, axpy, adam_update,
  };
  return cpu_has_avx2() ? &table : nullptr;
}

}  // namespace monoflow::kernels

#else

namespace monoflow::kernels {
bool cpu_has_avx2() { return false; }
const KernelTable* avx2_table() { return nullptr; }
}  // namespace monoflow::kernels

#endif
