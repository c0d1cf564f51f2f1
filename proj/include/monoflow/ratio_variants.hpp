#pragma once

// Discriminator objectives E_p[phi(d)] + E_q[psi(d)] whose maximizer is a
// bijection T^{-1} of the density ratio, and the brute-force oracle used to
// check that bijection.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "monoflow/gaussian.hpp"
#include "monoflow/hfunctions.hpp"

namespace monoflow {

enum class RatioKind { VanillaGAN, NonSaturatedGAN, FGAN, BGAN, LeastSquares, GeneralizedEBMKL };

/// Which sufficient condition guarantees a unique maximizer.
enum class LemmaCondition {
  ConcaveObjective,  // phi concave, psi strictly concave, T a bijection
  IncreasingT,       // phi' > 0, T strictly increasing
};

class RatioVariant {
 public:
  static RatioVariant vanilla_gan() { return RatioVariant(RatioKind::VanillaGAN); }
  /// Same (phi, psi) as vanilla; the variants differ only in generator loss.
  static RatioVariant non_saturated_gan() { return RatioVariant(RatioKind::NonSaturatedGAN); }
  /// Requires a strictly convex f.
  static RatioVariant fgan(FKind f);
  static RatioVariant bgan(FKind f);
  static RatioVariant least_squares() { return RatioVariant(RatioKind::LeastSquares); }
  static RatioVariant generalized_ebm_kl(double lambda = 0.0) {
    RatioVariant v(RatioKind::GeneralizedEBMKL);
    v.lambda_ = lambda;
    return v;
  }

  RatioKind kind() const { return kind_; }
  FDivergence divergence() const { return FDivergence(divergence_); }
  double lambda() const { return lambda_; }
  std::string name() const;

  LemmaCondition condition() const;
  /// What the optimal discriminator outputs, e.g. "log r(x)".
  std::string optimum_convention() const;

  /// Open interval of admissible discriminator outputs.
  std::pair<double, double> domain() const;

  double phi(double d) const;
  double psi(double d) const;
  double phi_prime(double d) const;
  double psi_prime(double d) const;

  /// Ratio estimate T(d) = -psi'(d) / phi'(d).
  double t_map(double d) const;
  /// Optimal discriminator output for ratio r.
  double t_inverse(double r) const;

  /// log T(d) and its derivative in d: turn a discriminator output and its
  /// input gradient into a log-ratio estimate and that estimate's gradient.
  double log_ratio(double d) const;
  double log_ratio_slope(double d) const;

 private:
  explicit RatioVariant(RatioKind kind) : kind_(kind) {}

  void require_in_domain(double d) const;

  RatioKind kind_;
  FKind divergence_ = FKind::KL;
  double lambda_ = 0.0;
};

inline double phi_eval(const RatioVariant& v, double d) { return v.phi(d); }
inline double psi_eval(const RatioVariant& v, double d) { return v.psi(d); }

/// The six objective families, with f-GAN and b-GAN instantiated on `f`.
std::vector<RatioVariant> table_variants(FKind f);

/// Maximizes r phi(d) + psi(d) by a 1e-3 grid scan over the domain clipped to
/// [-30, 30], refined by golden-section search. Throws NoInteriorMaximum if
/// the scan peaks on the bracket edge.
double lemma_oracle(const RatioVariant& v, double r);

/// Numerically checks the variant's declared sufficient condition on a grid.
bool check_lemma_condition(const RatioVariant& v);

using Discriminant = std::function<double(const Vector&)>;

/// mean phi(d(x)) over samples_p + mean psi(d(x)) over samples_q.
double mc_objective(const RatioVariant& v, const Discriminant& d_fn,
                    const PointBatch& samples_p, const PointBatch& samples_q);

/// E_p[d] - E_q[conj f(d)], a lower bound on D_f(p || q) that is tight at
/// d = f'(p/q).
double fenchel_lower_bound(const FDivergence& f, const Discriminant& d_fn,
                           const PointBatch& samples_p, const PointBatch& samples_q);

}  // namespace monoflow
