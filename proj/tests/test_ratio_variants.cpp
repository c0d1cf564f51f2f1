#include <cmath>
#include <numbers>

#include "doctest.h"
#include "monoflow/error.hpp"
#include "monoflow/ratio_variants.hpp"
#include "support.hpp"

using namespace monoflow;
using namespace testing;

namespace {

std::vector<RatioVariant> all_variants() {
  std::vector<RatioVariant> out{RatioVariant::vanilla_gan(), RatioVariant::non_saturated_gan(),
                                RatioVariant::least_squares(),
                                RatioVariant::generalized_ebm_kl(),
                                RatioVariant::generalized_ebm_kl(0.7)};
  for (FKind f : kAllFKinds) {
    if (!FDivergence(f).strictly_convex()) continue;
    out.push_back(RatioVariant::fgan(f));
    out.push_back(RatioVariant::bgan(f));
  }
  return out;
}

}  // namespace

TEST_CASE("objective values") {
  const RatioVariant g = RatioVariant::vanilla_gan();
  CHECK(g.phi(0.0) == doctest::Approx(-std::numbers::ln2));
  CHECK(g.psi(0.0) == doctest::Approx(-std::numbers::ln2));
  const RatioVariant ls = RatioVariant::least_squares();
  CHECK(ls.phi(1.0) == 0.0);
  CHECK(ls.psi(1.0) == -1.0);
  const RatioVariant ebm = RatioVariant::generalized_ebm_kl();
  CHECK(ebm.phi(0.0) == 0.0);
  CHECK(ebm.psi(0.0) == -1.0);
  // f-GAN uses phi = d and psi = -f~(d); b-GAN uses phi = f'(d), psi = f(d) - d f'(d).
  const FDivergence chi(FKind::ChiSquare);
  const RatioVariant fg = RatioVariant::fgan(FKind::ChiSquare);
  CHECK(fg.phi(0.7) == 0.7);
  CHECK(fg.psi(2.0) == doctest::Approx(-3.0));
  const RatioVariant bg = RatioVariant::bgan(FKind::ChiSquare);
  CHECK(bg.phi(3.0) == doctest::Approx(chi.f_prime(3.0)));
  CHECK(bg.psi(3.0) == doctest::Approx(chi.f(3.0) - 3.0 * chi.f_prime(3.0)));
  CHECK_THROWS_AS(RatioVariant::fgan(FKind::Exp), DomainError);
  CHECK_THROWS_AS(RatioVariant::bgan(FKind::Exp), DomainError);
  CHECK_THROWS_AS(RatioVariant::fgan(FKind::KL).psi(0.5), DomainError);
  CHECK_THROWS_AS(RatioVariant::bgan(FKind::KL).phi(-1.0), DomainError);
}

TEST_CASE("derivatives of phi and psi") {
  for (const RatioVariant& v : all_variants()) {
    CAPTURE(v.name());
    const auto [lo, hi] = v.domain();
    for (double t : {0.15, 0.35, 0.5, 0.65, 0.85}) {
      const double a = std::max(lo, -3.0), b = std::min(hi, 3.0);
      const double d = a + t * (b - a);
      const double step = 1e-6 * std::max(1.0, std::abs(d));
      CHECK(relative_error(v.phi_prime(d),
                           central_difference([&](double x) { return v.phi(x); }, d, step)) <
            1e-5);
      CHECK(relative_error(v.psi_prime(d),
                           central_difference([&](double x) { return v.psi(x); }, d, step)) <
            1e-5);
    }
  }
}

TEST_CASE("ratio bijection") {
  CHECK(RatioVariant::vanilla_gan().t_map(0.0) == 1.0);
  CHECK(RatioVariant::least_squares().t_map(0.5) == doctest::Approx(1.0));
  CHECK(RatioVariant::bgan(FKind::KL).t_map(3.0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(RatioVariant::least_squares().t_map(1.0), DomainError);
  for (const RatioVariant& v : all_variants()) {
    CAPTURE(v.name());
    for (double r = 0.05; r <= 20.0; r *= 1.1) {
      CHECK(std::abs(v.t_map(v.t_inverse(r)) - r) < 1e-8 * std::max(1.0, r));
      // T(d) = -psi'(d) / phi'(d)
      const double d = v.t_inverse(r);
      CHECK(-v.psi_prime(d) / v.phi_prime(d) == doctest::Approx(r).epsilon(1e-9));
      // Log-ratio readout and its slope.
      CHECK(v.log_ratio(d) == doctest::Approx(std::log(r)).epsilon(1e-9));
      const double fd = central_difference([&](double x) { return v.log_ratio(x); }, d,
                                           1e-6 * std::max(1.0, std::abs(d)));
      CHECK(relative_error(v.log_ratio_slope(d), fd) < 1e-5);
    }
    if (v.kind() == RatioKind::BGAN)
      for (double r : {0.1, 1.0, 7.0}) CHECK(v.t_map(r) == doctest::Approx(r));
  }
}

TEST_CASE("brute-force maximizer recovers the inverse map") {
  CHECK(std::abs(lemma_oracle(RatioVariant::vanilla_gan(), 1.0)) < 1e-6);
  CHECK(lemma_oracle(RatioVariant::vanilla_gan(), 2.0) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-6));
  CHECK(lemma_oracle(RatioVariant::least_squares(), 1.0) == doctest::Approx(0.5).epsilon(1e-6));
  for (const RatioVariant& v : all_variants()) {
    CAPTURE(v.name());
    for (double r : {0.1, 0.5, 1.0, 2.0, 10.0})
      CHECK(std::abs(lemma_oracle(v, r) - v.t_inverse(r)) < 1e-5);
    CHECK(check_lemma_condition(v));
    if (v.kind() == RatioKind::BGAN)
      for (double r : {0.1, 0.5, 1.0, 2.0, 10.0}) CHECK(std::abs(lemma_oracle(v, r) - r) < 1e-5);
  }
  CHECK_THROWS_AS(lemma_oracle(RatioVariant::vanilla_gan(), std::exp(40.0)), NoInteriorMaximum);
}

TEST_CASE("pointwise objective is concave where claimed") {
  for (const RatioVariant& v : all_variants()) {
    if (v.condition() != LemmaCondition::ConcaveObjective) continue;
    CAPTURE(v.name());
    auto [lo, hi] = v.domain();
    if (v.kind() == RatioKind::FGAN) {
      // Below f'(0) the conjugate is affine, so strictness holds on the f' range only.
      lo = std::max(lo, v.divergence().f_prime_range().first);
    }
    const double a = std::max(lo, -10.0) + 1e-3, b = std::min(hi, 10.0) - 1e-3;
    for (double r : {0.1, 1.0, 10.0}) {
      auto l = [&](double d) { return r * v.phi(d) + v.psi(d); };
      const double h = (b - a) / 400;
      for (int i = 1; i < 400; ++i) {
        const double d = a + i * h;
        CHECK(l(d + h) - 2 * l(d) + l(d - h) < 0.0);
      }
    }
  }
}

TEST_CASE("Monte Carlo objective") {
  const Gaussian p = target(), q = initial();
  Rng rng(20);
  const PointBatch xp = p.sample(rng, 20000), xq = q.sample(rng, 20000);
  const RatioVariant g = RatioVariant::vanilla_gan();
  CHECK(mc_objective(g, [](const Vector&) { return 0.0; }, xp, xq) ==
        doctest::Approx(-2 * std::numbers::ln2));

  // p = q with the exact log ratio (identically zero): mean phi(0) + psi(0).
  const PointBatch xp2 = p.sample(rng, 20000);
  const Discriminant zero_ratio = [&](const Vector& x) {
    return p.log_density(x) - p.log_density(x);
  };
  CHECK(mc_objective(g, zero_ratio, xp, xp2) == doctest::Approx(g.phi(0) + g.psi(0)));

  // The pointwise optimum beats perturbed discriminants.
  const Discriminant best = [&](const Vector& x) { return p.log_density(x) - q.log_density(x); };
  const double top = mc_objective(g, best, xp, xq);
  for (int k = 0; k < 10; ++k) {
    const double a = 0.3 * rng.normal(), b = 0.3 * rng.normal(), c = 0.3 * rng.normal();
    const Discriminant worse = [&](const Vector& x) { return best(x) + a + b * x(0) + c * x(1); };
    CHECK(mc_objective(g, worse, xp, xq) <= top + 1e-12);
  }

  PointBatch bad(1, 2);
  bad << 0.0, 0.0;
  const RatioVariant bk = RatioVariant::bgan(FKind::KL);
  try {
    mc_objective(bk, [](const Vector&) { return -1.0; }, bad, bad);
    FAIL("expected a domain error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("sample 0") != std::string::npos);
  }
  CHECK_THROWS_AS(mc_objective(g, best, PointBatch(0, 2), xq), DomainError);
}

TEST_CASE("Fenchel lower bound") {
  const Gaussian p = target(), q = initial();
  const FDivergence chi(FKind::ChiSquare);
  Rng rng(21);
  const PointBatch xp = p.sample(rng, 100000), xq = q.sample(rng, 100000);
  const PointBatch same = p.sample(rng, 100000);
  CHECK(std::abs(fenchel_lower_bound(chi, [&](const Vector&) { return chi.f_prime(1.0); }, xp,
                                     same)) < 1e-12);

  // Direct estimate of E_q[(r - 1)^2] with its standard error.
  const Vector u = p.log_density(xq) - q.log_density(xq);
  const Eigen::ArrayXd terms = (u.array().exp() - 1.0).square();
  const double direct = terms.mean();
  const double se = std::sqrt((terms - direct).square().sum() / (terms.size() - 1) / terms.size());
  const Discriminant best = [&](const Vector& x) {
    return chi.f_prime(std::exp(p.log_density(x) - q.log_density(x)));
  };
  const double bound = fenchel_lower_bound(chi, best, xp, xq);
  // Two independent estimators; the bound's own error is of similar size.
  CHECK(std::abs(bound - direct) < 3.0 * std::sqrt(2.0) * se);

  for (int k = 0; k < 10; ++k) {
    const double a = 0.2 * rng.normal(), b = 0.2 * rng.normal();
    const Discriminant worse = [&](const Vector& x) { return best(x) + a + b * x(0); };
    CHECK(fenchel_lower_bound(chi, worse, xp, xq) <= bound + 3.0 * se);
  }
}

TEST_CASE("table variants and aliasing") {
  const auto vs = table_variants(FKind::KL);
  CHECK(vs.size() == 6);
  const RatioVariant a = RatioVariant::vanilla_gan(), b = RatioVariant::non_saturated_gan();
  for (double d : {-2.0, 0.0, 1.5}) {
    CHECK(a.phi(d) == b.phi(d));
    CHECK(a.psi(d) == b.psi(d));
  }
  CHECK(RatioVariant::generalized_ebm_kl(0.5).t_inverse(1.0) == doctest::Approx(-0.5));
}
