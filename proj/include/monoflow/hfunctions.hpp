#pragma once

// Monotone rescalings h(u) of the log density ratio u = log r, the
// f-divergence integrands they pair with, and the numerical h -> f
// reconstruction.

#include <span>
#include <utility>
#include <string>
#include <string_view>
#include <vector>

namespace monoflow {

/// Inputs with |u| beyond this raise NumericOverflow.
inline constexpr double kMaxLogRatio = 500.0;

double sigmoid(double u);
/// log(1 + e^u) without overflow.
double softplus(double u);
/// log sigmoid(u)
double log_sigmoid(double u);

enum class FKind { KL, ForwardKL, ChiSquare, Hellinger, JensenShannon, Exp };

inline constexpr FKind kAllFKinds[] = {FKind::KL,        FKind::ForwardKL,
                                       FKind::ChiSquare, FKind::Hellinger,
                                       FKind::JensenShannon, FKind::Exp};

/// f-divergence integrand f(r) with analytic first and second derivatives.
/// `Exp` is f(r) = -r^1.5, which is concave.
class FDivergence {
 public:
  constexpr explicit FDivergence(FKind kind) : kind_(kind) {}

  FKind kind() const { return kind_; }
  std::string name() const;
  bool strictly_convex() const { return kind_ != FKind::Exp; }

  double f(double r) const;
  double f_prime(double r) const;
  double f_second(double r) const;

  /// lim_{r->0+} f(r); +inf where it diverges.
  double f_at_zero() const;
  /// Range of f' over (0, inf) as an open interval (lo, hi).
  std::pair<double, double> f_prime_range() const;
  /// Solves f'(r) = d. Throws DomainError when d is outside f_prime_range or
  /// the variant is not strictly convex.
  double f_prime_inverse(double d) const;

 private:
  FKind kind_;
};

FDivergence parse_divergence(std::string_view name);

enum class HKind {
  Identity,
  ForwardKL,
  ChiSquare,
  Hellinger,
  JensenShannon,
  Exp15,
  Vanilla,
  NonSaturated,
  MLE,
  Logit,
  Arcsinh,
  ShiftedVanilla,
  // h(log r) = r f'(r) - f(r) for a given f; h'(log r) = r^2 f''(r).
  Induced,
};

class HFunction {
 public:
  static HFunction identity() { return HFunction(HKind::Identity); }
  static HFunction forward_kl() { return HFunction(HKind::ForwardKL); }
  static HFunction chi_square() { return HFunction(HKind::ChiSquare); }
  static HFunction hellinger() { return HFunction(HKind::Hellinger); }
  static HFunction jensen_shannon() { return HFunction(HKind::JensenShannon); }
  static HFunction exp15() { return HFunction(HKind::Exp15); }
  static HFunction vanilla() { return HFunction(HKind::Vanilla); }
  static HFunction non_saturated() { return HFunction(HKind::NonSaturated); }
  static HFunction mle() { return HFunction(HKind::MLE); }
  static HFunction logit() { return HFunction(HKind::Logit); }
  static HFunction arcsinh() { return HFunction(HKind::Arcsinh); }
  static HFunction shifted_vanilla(double c) {
    HFunction h(HKind::ShiftedVanilla);
    h.shift_ = c;
    return h;
  }
  static HFunction induced_by(FKind f) {
    HFunction h(HKind::Induced);
    h.divergence_ = f;
    return h;
  }
  /// The h(log r) = -f(r) pairing used by the 2D Gaussian training study.
  static HFunction negated(FKind f);

  HKind kind() const { return kind_; }
  double shift() const { return shift_; }
  FKind divergence() const { return divergence_; }
  std::string name() const;

  /// h'(u) > 0 for every u.
  bool monotone() const;

  double value(double u) const;
  double derivative(double u) const;

 private:
  explicit HFunction(HKind kind) : kind_(kind) {}

  HKind kind_;
  double shift_ = 0.0;
  FKind divergence_ = FKind::KL;
};

inline double h_eval(const HFunction& h, double u) { return h.value(u); }
inline double h_prime(const HFunction& h, double u) { return h.derivative(u); }

/// Accepts the names produced by HFunction::name(), e.g. "vanilla",
/// "shifted_vanilla:3", "induced:chi_square".
HFunction parse_h(std::string_view name);

/// The monotone registry variants (ShiftedVanilla at C = 0, 1, 3, 5).
std::vector<HFunction> monotone_registry();
/// Every named variant including the non-monotone negated divergences.
std::vector<HFunction> full_registry();

struct FTable {
  std::vector<double> r;
  std::vector<double> f;
  std::vector<double> f_prime;
};

/// Geometric grid on [lo, hi] with an odd point count so that, for
/// lo * hi == 1, the midpoint is exactly r = 1.
std::vector<double> geometric_grid(double lo, double hi, std::size_t points);

/// 8001 geometric points on [0.02, 50].
std::vector<double> default_reconstruction_grid();

/// Integrates f''(r) = h'(log r) / r^2 twice with f'(1) = h(0), f(1) = 0.
/// The trapezoid rule runs in the log variable, where the grid is uniform.
FTable reconstruct_f_from_h(const HFunction& h, std::span<const double> r_grid);

/// max over the table of |r f'(r) - f(r) - h(log r)|
double check_h_f_identity(const HFunction& h, const FTable& table);

/// sup_r { r d - f(r) }. Uses the stationarity solve f'(r) = d for strictly
/// convex f (with the r -> 0 limit when d lies below the range of f'), and
/// grid maximization otherwise. Throws Unbounded when the sup diverges.
double convex_conjugate(const FDivergence& f, double d);

/// Direct maximization over a geometric r-grid on (lo, hi), refined by
/// golden-section search. Throws Unbounded when the max sits at hi.
double convex_conjugate_by_grid(const FDivergence& f, double d, double lo = 1e-6,
                                double hi = 1e3);

}  // namespace monoflow
