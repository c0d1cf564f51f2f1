#pragma once

// Dense double-precision kernels behind the network and Adam updates.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The variant is picked once at startup from CPUID; setting
// MONOFLOW_SIMD=scalar in the environment forces the reference path.
// Variants agree to rounding (summation order differs), not bitwise.

#include <cstddef>
#include <string_view>

namespace monoflow::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  std::string_view name;

  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C[m x n] (+)= A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);

  // pre[r][c] += bias[c]; post[r][c] = leaky(pre[r][c]). post may alias pre
  // only when slope == 1.
  void (*bias_leaky_relu)(std::size_t rows, std::size_t cols, const double* bias,
                          double slope, double* pre, double* post);
  // grad[i] *= (pre[i] > 0 ? 1 : slope)
  void (*leaky_relu_backward)(std::size_t n, const double* pre, double slope,
                              double* grad);
  // out[c] (+)= sum_r a[r][c]
  void (*column_sums)(std::size_t rows, std::size_t cols, const double* a,
                      double* out, bool accumulate);

  double (*dot)(std::size_t n, const double* a, const double* b);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  // Bias-corrected Adam on a flat parameter block.
  void (*adam_update)(std::size_t n, double* param, const double* grad,
                      double* m, double* v, double lr, double beta1, double beta2,
                      double eps, double bias_corr1, double bias_corr2);
};

/// Reference implementation; always available.
const KernelTable& scalar_table();

/// AVX2+FMA implementation, or nullptr when the host CPU (or the build
/// target) lacks it.
const KernelTable* avx2_table();

/// Table selected for this process.
const KernelTable& active();

bool cpu_has_avx2();

}  // namespace monoflow::kernels
