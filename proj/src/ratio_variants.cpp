#include "monoflow/ratio_variants.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "monoflow/error.hpp"
#include "monoflow/golden.hpp"

namespace monoflow {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kBracket = 30.0;
constexpr double kScanStep = 1e-3;

}  // namespace

RatioVariant RatioVariant::fgan(FKind f) {
  if (!FDivergence(f).strictly_convex())
    throw DomainError("f-GAN needs a strictly convex f; got " + FDivergence(f).name());
  RatioVariant v(RatioKind::FGAN);
  v.divergence_ = f;
  return v;
}

RatioVariant RatioVariant::bgan(FKind f) {
  if (!FDivergence(f).strictly_convex())
    throw DomainError("b-GAN needs a strictly convex f; got " + FDivergence(f).name());
  RatioVariant v(RatioKind::BGAN);
  v.divergence_ = f;
  return v;
}

std::string RatioVariant::name() const {
  switch (kind_) {
    case RatioKind::VanillaGAN: return "vanilla_gan";
    case RatioKind::NonSaturatedGAN: return "non_saturated_gan";
    case RatioKind::FGAN: return "f_gan:" + divergence().name();
    case RatioKind::BGAN: return "b_gan:" + divergence().name();
    case RatioKind::LeastSquares: return "least_squares";
    case RatioKind::GeneralizedEBMKL: return "generalized_ebm_kl";
  }
  return "?";
}

LemmaCondition RatioVariant::condition() const {
  return kind_ == RatioKind::BGAN ? LemmaCondition::IncreasingT
                                  : LemmaCondition::ConcaveObjective;
}

std::string RatioVariant::optimum_convention() const {
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return "log r(x)";
    case RatioKind::FGAN: return "f'(r(x))";
    case RatioKind::BGAN: return "r(x)";
    case RatioKind::LeastSquares: return "r(x)/(1+r(x))";
    case RatioKind::GeneralizedEBMKL: return "-log r(x) - lambda";
  }
  return "?";
}

std::pair<double, double> RatioVariant::domain() const {
  switch (kind_) {
    case RatioKind::FGAN: {
      const FDivergence f = divergence();
      const auto [lo, hi] = f.f_prime_range();
      return {std::isfinite(f.f_at_zero()) ? -kInf : lo, hi};
    }
    case RatioKind::BGAN: return {0.0, kInf};
    default: return {-kInf, kInf};
  }
}

void RatioVariant::require_in_domain(double d) const {
  const auto [lo, hi] = domain();
  if (!(d > lo && d < hi))
    throw DomainError(name() + ": d = " + std::to_string(d) + " outside the variant domain");
}

double RatioVariant::phi(double d) const {
  require_in_domain(d);
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return log_sigmoid(d);
    case RatioKind::FGAN: return d;
    case RatioKind::BGAN: return divergence().f_prime(d);
    case RatioKind::LeastSquares: return -(d - 1.0) * (d - 1.0);
    case RatioKind::GeneralizedEBMKL: return -(d + lambda_);
  }
  return 0.0;
}

double RatioVariant::psi(double d) const {
  require_in_domain(d);
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return log_sigmoid(-d);
    case RatioKind::FGAN: return -convex_conjugate(divergence(), d);
    case RatioKind::BGAN: {
      const FDivergence f = divergence();
      return f.f(d) - d * f.f_prime(d);
    }
    case RatioKind::LeastSquares: return -d * d;
    case RatioKind::GeneralizedEBMKL: return -std::exp(-d - lambda_);
  }
  return 0.0;
}

double RatioVariant::phi_prime(double d) const {
  require_in_domain(d);
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return sigmoid(-d);
    case RatioKind::FGAN: return 1.0;
    case RatioKind::BGAN: return divergence().f_second(d);
    case RatioKind::LeastSquares: return -2.0 * (d - 1.0);
    case RatioKind::GeneralizedEBMKL: return -1.0;
  }
  return 0.0;
}

double RatioVariant::psi_prime(double d) const {
  require_in_domain(d);
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return -sigmoid(d);
    case RatioKind::FGAN: {
      // The conjugate's derivative is the maximizing r, which is 0 below the
      // range of f'.
      const FDivergence f = divergence();
      return d <= f.f_prime_range().first ? 0.0 : -f.f_prime_inverse(d);
    }
    case RatioKind::BGAN: return -d * divergence().f_second(d);
    case RatioKind::LeastSquares: return -2.0 * d;
    case RatioKind::GeneralizedEBMKL: return std::exp(-d - lambda_);
  }
  return 0.0;
}

double RatioVariant::t_map(double d) const {
  require_in_domain(d);
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return std::exp(d);
    case RatioKind::FGAN: return divergence().f_prime_inverse(d);
    case RatioKind::BGAN: return d;
    case RatioKind::LeastSquares:
      if (d == 1.0) throw DomainError("least_squares: T undefined at d = 1");
      return d / (1.0 - d);
    case RatioKind::GeneralizedEBMKL: return std::exp(-d - lambda_);
  }
  return 0.0;
}

double RatioVariant::t_inverse(double r) const {
  if (!(r > 0.0)) throw DomainError(name() + ": ratio must be positive");
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return std::log(r);
    case RatioKind::FGAN: return divergence().f_prime(r);
    case RatioKind::BGAN: return r;
    case RatioKind::LeastSquares: return r / (1.0 + r);
    case RatioKind::GeneralizedEBMKL: return -std::log(r) - lambda_;
  }
  return 0.0;
}

double RatioVariant::log_ratio(double d) const {
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return d;
    case RatioKind::GeneralizedEBMKL: return -d - lambda_;
    default: {
      const double t = t_map(d);
      if (!(t > 0.0)) throw DomainError(name() + ": output maps to a non-positive ratio");
      return std::log(t);
    }
  }
}

double RatioVariant::log_ratio_slope(double d) const {
  require_in_domain(d);
  switch (kind_) {
    case RatioKind::VanillaGAN:
    case RatioKind::NonSaturatedGAN: return 1.0;
    case RatioKind::FGAN: {
      // d/dd log (f')^{-1}(d) = 1 / (r f''(r)) at r = (f')^{-1}(d).
      const FDivergence f = divergence();
      const double r = f.f_prime_inverse(d);
      return 1.0 / (r * f.f_second(r));
    }
    case RatioKind::BGAN: return 1.0 / d;
    case RatioKind::LeastSquares: return 1.0 / (d * (1.0 - d));
    case RatioKind::GeneralizedEBMKL: return -1.0;
  }
  return 0.0;
}

std::vector<RatioVariant> table_variants(FKind f) {
  return {RatioVariant::vanilla_gan(), RatioVariant::non_saturated_gan(),
          RatioVariant::fgan(f),       RatioVariant::bgan(f),
          RatioVariant::least_squares(), RatioVariant::generalized_ebm_kl()};
}

double lemma_oracle(const RatioVariant& v, double r) {
  if (!(r > 0.0)) throw DomainError("lemma_oracle: ratio must be positive");
  const auto [dom_lo, dom_hi] = v.domain();
  const double lo = std::max(-kBracket, std::isfinite(dom_lo) ? dom_lo + kScanStep : -kBracket);
  const double hi = std::min(kBracket, std::isfinite(dom_hi) ? dom_hi - kScanStep : kBracket);
  if (!(hi > lo)) throw NoInteriorMaximum(v.name() + ": empty search bracket");

  auto objective = [&](double d) {
    try {
      const double value = r * v.phi(d) + v.psi(d);
      return std::isnan(value) ? -kInf : value;
    } catch (const Error&) {
      return -kInf;
    }
  };

  const auto steps = static_cast<std::size_t>(std::ceil((hi - lo) / kScanStep));
  const double step = (hi - lo) / static_cast<double>(steps);
  std::size_t best = 0;
  double best_value = -kInf;
  for (std::size_t i = 0; i <= steps; ++i) {
    const double value = objective(lo + step * static_cast<double>(i));
    if (value > best_value) {
      best_value = value;
      best = i;
    }
  }
  if (best == 0 || best == steps)
    throw NoInteriorMaximum(v.name() + ": maximum at the bracket edge for r = " +
                            std::to_string(r));
  const double a = lo + step * static_cast<double>(best - 1);
  const double b = lo + step * static_cast<double>(best + 1);
  return golden_section_maximize(objective, a, b, 1e-10);
}

bool check_lemma_condition(const RatioVariant& v) {
  // Grid over the region where T is a bijection onto (0, inf).
  double lo = -10.0, hi = 10.0;
  switch (v.kind()) {
    case RatioKind::FGAN: {
      const auto [a, b] = v.divergence().f_prime_range();
      lo = std::max(lo, a);
      hi = std::min(hi, b);
      break;
    }
    case RatioKind::BGAN: lo = 0.0; break;
    case RatioKind::LeastSquares: lo = 0.0; hi = 1.0; break;
    default: break;
  }
  const int n = 2000;
  const double step = (hi - lo) / (n + 1);
  std::vector<double> d(n), phi(n), psi(n), t(n);
  for (int i = 0; i < n; ++i) {
    d[i] = lo + step * (i + 1);
    phi[i] = v.phi(d[i]);
    psi[i] = v.psi(d[i]);
    t[i] = v.t_map(d[i]);
    if (!(t[i] > 0.0)) return false;
  }
  const bool increasing = std::is_sorted(t.begin(), t.end(), std::less_equal<>());
  const bool decreasing = std::is_sorted(t.begin(), t.end(), std::greater_equal<>());
  if (v.condition() == LemmaCondition::IncreasingT) {
    for (int i = 0; i < n; ++i)
      if (!(v.phi_prime(d[i]) > 0.0)) return false;
    return increasing;
  }
  for (int i = 1; i + 1 < n; ++i) {
    const double scale = 1e-9 * (1.0 + std::abs(phi[i]) + std::abs(psi[i]));
    if (phi[i - 1] - 2.0 * phi[i] + phi[i + 1] > scale) return false;
    if (!(psi[i - 1] - 2.0 * psi[i] + psi[i + 1] < 0.0)) return false;
  }
  return increasing || decreasing;
}

namespace {

double mean_over(const PointBatch& samples, const Discriminant& d_fn,
                 const std::function<double(double)>& g, const char* which) {
  if (samples.rows() == 0) throw DomainError("mc_objective: empty sample set");
  double total = 0.0;
  Vector x(samples.cols());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    x = samples.row(i).transpose();
    try {
      total += g(d_fn(x));
    } catch (const Error& e) {
      throw DomainError(std::string(e.what()) + " (sample " + std::to_string(i) + " of " +
                        which + ")");
    }
  }
  return total / static_cast<double>(samples.rows());
}

}  // namespace

double mc_objective(const RatioVariant& v, const Discriminant& d_fn,
                    const PointBatch& samples_p, const PointBatch& samples_q) {
  return mean_over(samples_p, d_fn, [&](double d) { return v.phi(d); }, "p") +
         mean_over(samples_q, d_fn, [&](double d) { return v.psi(d); }, "q");
}

double fenchel_lower_bound(const FDivergence& f, const Discriminant& d_fn,
                           const PointBatch& samples_p, const PointBatch& samples_q) {
  return mc_objective(RatioVariant::fgan(f.kind()), d_fn, samples_p, samples_q);
}

}  // namespace monoflow
