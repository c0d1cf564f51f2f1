#include "monoflow/hfunctions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "monoflow/error.hpp"
#include "monoflow/golden.hpp"

namespace monoflow {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive_ratio(double r) {
  if (!(r > 0.0)) throw DomainError("f-divergence evaluated at r <= 0: " + std::to_string(r));
}

double checked(double value, const HFunction& h, double u) {
  if (!std::isfinite(value))
    throw NumericOverflow(h.name() + " is not representable at u = " + std::to_string(u));
  return value;
}

void check_range(const HFunction& h, double u) {
  if (!(std::abs(u) <= kMaxLogRatio))
    throw NumericOverflow(h.name() + ": |u| exceeds " + std::to_string(kMaxLogRatio) +
                          " (u = " + std::to_string(u) + ")");
}

}  // namespace

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

double log_sigmoid(double u) { return -softplus(-u); }

// ---------------------------------------------------------------------------
// FDivergence

std::string FDivergence::name() const {
  switch (kind_) {
    case FKind::KL: return "kl";
    case FKind::ForwardKL: return "forward_kl";
    case FKind::ChiSquare: return "chi_square";
    case FKind::Hellinger: return "hellinger";
    case FKind::JensenShannon: return "jensen_shannon";
    case FKind::Exp: return "exp";
  }
  return "?";
}

double FDivergence::f(double r) const {
  require_positive_ratio(r);
  switch (kind_) {
    case FKind::KL: return -std::log(r);
    case FKind::ForwardKL: return r * std::log(r);
    case FKind::ChiSquare: return (r - 1.0) * (r - 1.0);
    case FKind::Hellinger: {
      const double s = std::sqrt(r) - 1.0;
      return s * s;
    }
    case FKind::JensenShannon:
      return r * std::log(2.0 * r / (1.0 + r)) + std::log(2.0 / (1.0 + r));
    case FKind::Exp: return -std::exp(1.5 * std::log(r));
  }
  return 0.0;
}

double FDivergence::f_prime(double r) const {
  require_positive_ratio(r);
  switch (kind_) {
    case FKind::KL: return -1.0 / r;
    case FKind::ForwardKL: return std::log(r) + 1.0;
    case FKind::ChiSquare: return 2.0 * (r - 1.0);
    case FKind::Hellinger: return 1.0 - 1.0 / std::sqrt(r);
    case FKind::JensenShannon: return std::log(2.0 * r / (1.0 + r));
    case FKind::Exp: return -1.5 * std::sqrt(r);
  }
  return 0.0;
}

double FDivergence::f_second(double r) const {
  require_positive_ratio(r);
  switch (kind_) {
    case FKind::KL: return 1.0 / (r * r);
    case FKind::ForwardKL: return 1.0 / r;
    case FKind::ChiSquare: return 2.0;
    case FKind::Hellinger: return 0.5 / (r * std::sqrt(r));
    case FKind::JensenShannon: return 1.0 / (r * (1.0 + r));
    case FKind::Exp: return -0.75 / std::sqrt(r);
  }
  return 0.0;
}

double FDivergence::f_at_zero() const {
  switch (kind_) {
    case FKind::KL: return kInf;
    case FKind::ForwardKL: return 0.0;
    case FKind::ChiSquare: return 1.0;
    case FKind::Hellinger: return 1.0;
    case FKind::JensenShannon: return std::numbers::ln2;
    case FKind::Exp: return 0.0;
  }
  return 0.0;
}

std::pair<double, double> FDivergence::f_prime_range() const {
  switch (kind_) {
    case FKind::KL: return {-kInf, 0.0};
    case FKind::ForwardKL: return {-kInf, kInf};
    case FKind::ChiSquare: return {-2.0, kInf};
    case FKind::Hellinger: return {-kInf, 1.0};
    case FKind::JensenShannon: return {-kInf, std::numbers::ln2};
    case FKind::Exp: return {-kInf, 0.0};
  }
  return {0.0, 0.0};
}

double FDivergence::f_prime_inverse(double d) const {
  if (!strictly_convex()) throw DomainError(name() + ": f' is not invertible (f not convex)");
  const auto [lo, hi] = f_prime_range();
  if (!(d > lo && d < hi))
    throw DomainError(name() + ": f'(r) = " + std::to_string(d) + " has no solution");
  switch (kind_) {
    case FKind::KL: return -1.0 / d;
    case FKind::ForwardKL: return std::exp(d - 1.0);
    case FKind::ChiSquare: return 1.0 + 0.5 * d;
    case FKind::Hellinger: return 1.0 / ((1.0 - d) * (1.0 - d));
    case FKind::JensenShannon: {
      const double e = std::exp(d);
      return e / (2.0 - e);
    }
    case FKind::Exp: break;
  }
  return 0.0;
}

FDivergence parse_divergence(std::string_view name) {
  for (FKind k : kAllFKinds)
    if (FDivergence(k).name() == name) return FDivergence(k);
  throw ConfigError("unknown divergence '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// HFunction

HFunction HFunction::negated(FKind f) {
  switch (f) {
    case FKind::KL: return identity();
    case FKind::ForwardKL: return forward_kl();
    case FKind::ChiSquare: return chi_square();
    case FKind::Hellinger: return hellinger();
    case FKind::JensenShannon: return jensen_shannon();
    case FKind::Exp: return exp15();
  }
  return identity();
}

std::string HFunction::name() const {
  switch (kind_) {
    case HKind::Identity: return "identity";
    case HKind::ForwardKL: return "forward_kl";
    case HKind::ChiSquare: return "chi_square";
    case HKind::Hellinger: return "hellinger";
    case HKind::JensenShannon: return "jensen_shannon";
    case HKind::Exp15: return "exp15";
    case HKind::Vanilla: return "vanilla";
    case HKind::NonSaturated: return "non_saturated";
    case HKind::MLE: return "mle";
    case HKind::Logit: return "logit";
    case HKind::Arcsinh: return "arcsinh";
    case HKind::ShiftedVanilla: {
      std::string c = std::to_string(shift_);
      c.erase(c.find_last_not_of('0') + 1);
      if (!c.empty() && c.back() == '.') c.pop_back();
      return "shifted_vanilla:" + c;
    }
    case HKind::Induced: return "induced:" + FDivergence(divergence_).name();
  }
  return "?";
}

bool HFunction::monotone() const {
  switch (kind_) {
    case HKind::ForwardKL:
    case HKind::ChiSquare:
    case HKind::Hellinger:
    case HKind::JensenShannon:
      return false;
    case HKind::Induced:
      return FDivergence(divergence_).strictly_convex();
    default:
      return true;
  }
}

double HFunction::value(double u) const {
  check_range(*this, u);
  double out = 0.0;
  switch (kind_) {
    case HKind::Identity:
    case HKind::Logit: out = u; break;
    case HKind::ForwardKL: out = -u * std::exp(u); break;
    case HKind::ChiSquare: {
      const double e = std::expm1(u);
      out = -e * e;
      break;
    }
    case HKind::Hellinger: {
      const double e = std::expm1(0.5 * u);
      out = -e * e;
      break;
    }
    case HKind::JensenShannon:
      // -e^u log(2 sigma(u)) - log 2 + softplus(u)
      out = -std::exp(u) * (std::numbers::ln2 + log_sigmoid(u)) - std::numbers::ln2 + softplus(u);
      break;
    case HKind::Exp15: out = std::exp(1.5 * u); break;
    case HKind::Vanilla: out = softplus(u); break;
    case HKind::NonSaturated: out = log_sigmoid(u); break;
    case HKind::MLE: out = std::exp(u); break;
    case HKind::Arcsinh: out = std::asinh(u); break;
    case HKind::ShiftedVanilla: out = softplus(u + shift_); break;
    case HKind::Induced: {
      const FDivergence f(divergence_);
      const double r = std::exp(u);
      out = r * f.f_prime(r) - f.f(r);
      break;
    }
  }
  return checked(out, *this, u);
}

double HFunction::derivative(double u) const {
  check_range(*this, u);
  double out = 0.0;
  switch (kind_) {
    case HKind::Identity:
    case HKind::Logit: out = 1.0; break;
    case HKind::ForwardKL: out = -std::exp(u) * (1.0 + u); break;
    case HKind::ChiSquare: out = -2.0 * std::expm1(u) * std::exp(u); break;
    case HKind::Hellinger: out = -std::expm1(0.5 * u) * std::exp(0.5 * u); break;
    case HKind::JensenShannon: out = -std::exp(u) * (std::numbers::ln2 + log_sigmoid(u)); break;
    case HKind::Exp15: out = 1.5 * std::exp(1.5 * u); break;
    case HKind::Vanilla: out = sigmoid(u); break;
    case HKind::NonSaturated: out = sigmoid(-u); break;
    case HKind::MLE: out = std::exp(u); break;
    case HKind::Arcsinh: out = 1.0 / std::sqrt(1.0 + u * u); break;
    case HKind::ShiftedVanilla: out = sigmoid(u + shift_); break;
    case HKind::Induced: {
      const double r = std::exp(u);
      out = r * r * FDivergence(divergence_).f_second(r);
      break;
    }
  }
  return checked(out, *this, u);
}

HFunction parse_h(std::string_view name) {
  constexpr std::string_view shifted = "shifted_vanilla:";
  constexpr std::string_view induced = "induced:";
  if (name.starts_with(shifted)) {
    const std::string arg(name.substr(shifted.size()));
    try {
      std::size_t used = 0;
      const double c = std::stod(arg, &used);
      if (used == arg.size() && std::isfinite(c)) return HFunction::shifted_vanilla(c);
    } catch (const std::exception&) {
    }
    throw ConfigError("bad shift in '" + std::string(name) + "'");
  }
  if (name.starts_with(induced))
    return HFunction::induced_by(parse_divergence(name.substr(induced.size())).kind());
  if (name == "kl") return HFunction::identity();
  for (const HFunction& h : full_registry())
    if (h.kind() != HKind::ShiftedVanilla && h.name() == name) return h;
  throw ConfigError("unknown h function '" + std::string(name) + "'");
}

std::vector<HFunction> monotone_registry() {
  return {HFunction::identity(),           HFunction::exp15(),
          HFunction::vanilla(),            HFunction::non_saturated(),
          HFunction::mle(),                HFunction::logit(),
          HFunction::arcsinh(),            HFunction::shifted_vanilla(0.0),
          HFunction::shifted_vanilla(1.0), HFunction::shifted_vanilla(3.0),
          HFunction::shifted_vanilla(5.0)};
}

std::vector<HFunction> full_registry() {
  std::vector<HFunction> all = monotone_registry();
  all.push_back(HFunction::forward_kl());
  all.push_back(HFunction::chi_square());
  all.push_back(HFunction::hellinger());
  all.push_back(HFunction::jensen_shannon());
  return all;
}

// ---------------------------------------------------------------------------
// h -> f reconstruction

std::vector<double> geometric_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0 && hi > lo) || points < 2) throw DomainError("geometric_grid: bad range");
  std::vector<double> grid(points);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

std::vector<double> default_reconstruction_grid() {
  auto grid = geometric_grid(0.02, 50.0, 8001);
  grid[4000] = 1.0;
  return grid;
}

namespace {

// out[i] += integral of g from x[origin] to x[i]: trapezoid plus the
// Euler-Maclaurin end correction -dx^2/12 (g'(b) - g'(a)), with g' from
// second-order differences.
void cumulative_from(const std::vector<double>& x, const std::vector<double>& g,
                     std::size_t origin, std::vector<double>& out) {
  const std::size_t n = x.size();
  std::vector<double> dg(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      const double h1 = x[1] - x[0], h2 = x[2] - x[1];
      dg[i] = -(2 * h1 + h2) / (h1 * (h1 + h2)) * g[0] + (h1 + h2) / (h1 * h2) * g[1] -
              h1 / (h2 * (h1 + h2)) * g[2];
    } else if (i == n - 1) {
      const double h1 = x[i - 1] - x[i - 2], h2 = x[i] - x[i - 1];
      dg[i] = h2 / (h1 * (h1 + h2)) * g[i - 2] - (h1 + h2) / (h1 * h2) * g[i - 1] +
              (h1 + 2 * h2) / (h2 * (h1 + h2)) * g[i];
    } else {
      const double hl = x[i] - x[i - 1], hr = x[i + 1] - x[i];
      dg[i] = (-hr / (hl * (hl + hr))) * g[i - 1] + ((hr - hl) / (hl * hr)) * g[i] +
              (hl / (hr * (hl + hr))) * g[i + 1];
    }
  }
  auto panel = [&](std::size_t a) {
    const double dx = x[a + 1] - x[a];
    return 0.5 * (g[a] + g[a + 1]) * dx - dx * dx / 12.0 * (dg[a + 1] - dg[a]);
  };
  for (std::size_t i = origin + 1; i < n; ++i) out[i] = out[i - 1] + panel(i - 1);
  for (std::size_t i = origin; i-- > 0;) out[i] = out[i + 1] - panel(i);
}

}  // namespace

FTable reconstruct_f_from_h(const HFunction& h, std::span<const double> r_grid) {
  const std::size_t n = r_grid.size();
  if (n < 3) throw DomainError("reconstruct_f_from_h: grid too small");
  std::size_t one = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(r_grid[i] > 0.0) || (i > 0 && !(r_grid[i] > r_grid[i - 1])))
      throw DomainError("reconstruct_f_from_h: grid must be positive and ascending");
    if (std::abs(r_grid[i] - 1.0) < 1e-12) one = i;
  }
  if (one == n) throw DomainError("reconstruct_f_from_h: grid must contain r = 1");

  std::vector<double> u(n), hp(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = std::log(r_grid[i]);
    hp[i] = h.derivative(u[i]);
    if (!(hp[i] > 0.0))
      throw NotMonotone(h.name() + ": h'(" + std::to_string(u[i]) + ") = " + std::to_string(hp[i]));
  }

  // In u = log r: d f'/du = h'(u) e^{-u},  d f/du = f'(e^u) e^u.
  FTable table{std::vector<double>(r_grid.begin(), r_grid.end()), std::vector<double>(n),
               std::vector<double>(n)};
  auto& fp = table.f_prime;
  auto& f = table.f;
  fp[one] = h.value(0.0);
  f[one] = 0.0;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = hp[i] * std::exp(-u[i]);
  cumulative_from(u, g, one, fp);
  for (std::size_t i = 0; i < n; ++i) g[i] = fp[i] * r_grid[i];
  cumulative_from(u, g, one, f);
  return table;
}

double check_h_f_identity(const HFunction& h, const FTable& table) {
  double worst = 0.0;
  for (std::size_t i = 0; i < table.r.size(); ++i) {
    const double r = table.r[i];
    const double err = std::abs(r * table.f_prime[i] - table.f[i] - h.value(std::log(r)));
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Convex conjugate

double convex_conjugate(const FDivergence& f, double d) {
  if (!std::isfinite(d)) throw DomainError("convex_conjugate: non-finite argument");
  if (!f.strictly_convex()) return convex_conjugate_by_grid(f, d);
  const auto [lo, hi] = f.f_prime_range();
  if (d >= hi)
    throw Unbounded(f.name() + ": conjugate diverges at d = " + std::to_string(d));
  if (d <= lo) {
    // r d - f(r) is decreasing in r; the sup is the r -> 0 limit.
    const double at_zero = f.f_at_zero();
    if (!std::isfinite(at_zero))
      throw Unbounded(f.name() + ": conjugate undefined at d = " + std::to_string(d));
    return -at_zero;
  }
  const double r = f.f_prime_inverse(d);
  return r * d - f.f(r);
}

double convex_conjugate_by_grid(const FDivergence& f, double d, double lo, double hi) {
  const std::vector<double> grid = geometric_grid(lo, hi, 20001);
  auto objective = [&](double r) { return r * d - f.f(r); };
  std::size_t best = 0;
  double best_value = -kInf;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = objective(grid[i]);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  if (best == grid.size() - 1)
    throw Unbounded(f.name() + ": conjugate sup reaches the search edge at d = " +
                    std::to_string(d));
  if (best == 0) return best_value;
  const double r = golden_section_maximize(objective, grid[best - 1], grid[best + 1], 1e-13);
  return std::max(best_value, objective(r));
}

}  // namespace monoflow
