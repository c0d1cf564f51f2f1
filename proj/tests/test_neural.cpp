#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "monoflow/error.hpp"
#include "monoflow/neural.hpp"
#include "monoflow/ratio_variants.hpp"
#include "support.hpp"

using namespace monoflow;
using namespace testing;

namespace {

// Plain per-sample forward pass, independent of the batched kernels.
double reference_forward(const Mlp& net, const Vector& x) {
  Vector a = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    Vector z(w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(j);
      for (Eigen::Index i = 0; i < w.rows(); ++i) s += a(i) * w(i, j);
      z(j) = s;
    }
    if (l + 1 < net.layer_count())
      for (Eigen::Index j = 0; j < z.size(); ++j)
        if (z(j) < 0) z(j) *= net.leaky_slope();
    a = z;
  }
  return a(0);
}

double min_abs_preactivation(const Mlp& net, const Vector& x) {
  double best = INFINITY;
  Vector a = x;
  for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
    Vector z = net.weight(l).transpose() * a + Vector(net.bias(l));
    best = std::min(best, z.cwiseAbs().minCoeff());
    for (Eigen::Index j = 0; j < z.size(); ++j)
      if (z(j) < 0) z(j) *= net.leaky_slope();
    a = z;
  }
  return best;
}

Mlp perturbed_net(Rng& rng) {
  Mlp net = Mlp::glorot({2, 16, 16, 1}, 0.2, rng);
  for (double& w : net.parameters()) w += 0.1 * rng.normal();
  return net;
}

// Batch of points whose pre-activations all stay 1e-3 away from the kink.
PointBatch kink_free_batch(const Mlp& net, Rng& rng, int rows) {
  PointBatch x(rows, 2);
  for (int i = 0; i < rows; ++i) {
    Vector xi;
    do {
      xi = vec2(rng.normal(), rng.normal());
    } while (min_abs_preactivation(net, xi) < 1e-3);
    x.row(i) = xi.transpose();
  }
  return x;
}

}  // namespace

TEST_CASE("forward") {
  const Mlp zero({2, 8, 8, 1}, 0.2);
  CHECK(forward(zero, vec2(3, -4)) == 0.0);

  Mlp lin({2, 1}, 0.2);
  lin.weight(0)(0, 0) = 1.0;
  lin.weight(0)(1, 0) = 1.0;
  CHECK(forward(lin, vec2(2, 3)) == 5.0);

  Rng rng(30);
  const Mlp net = Mlp::glorot({2, 64, 64, 1}, 0.2, rng);
  const PointBatch x = normals(rng, 37, 2);
  const Vector batch = forward_batch(net, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    CHECK(batch(i) == doctest::Approx(reference_forward(net, xi)).epsilon(1e-12));
    CHECK(forward(net, xi) == doctest::Approx(batch(i)).epsilon(1e-12));
  }
  CHECK(forward_batch(net, x) == batch);
}

TEST_CASE("construction checks") {
  CHECK_THROWS_AS(Mlp({2, 4, 2}, 0.2), DomainError);
  CHECK_THROWS_AS(Mlp({2, 4, 1}, 1.5), DomainError);
  CHECK_THROWS_AS(Mlp({2, 4, 1}, 0.0), DomainError);
  Rng rng(31);
  const Mlp net = Mlp::glorot({2, 64, 64, 1}, 0.2, rng);
  const double limit = std::sqrt(6.0 / (64 + 64));
  CHECK(net.weight(1).cwiseAbs().maxCoeff() <= limit);
  CHECK(net.bias(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(net.parameters().size() == 2 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
}

TEST_CASE("backward matches finite differences") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(100 + seed);
    Mlp net = perturbed_net(rng);
    const PointBatch x = kink_free_batch(net, rng, 8);
    const Vector up = normals(rng, 8, 1);
    const MlpGradients g = backward(net, x, up);
    auto objective = [&](const Mlp& m, const PointBatch& pts) {
      return forward_batch(m, pts).dot(up);
    };
    const double eps = 1e-5;
    double worst = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < net.parameters().size(); ++k) {
      Mlp plus = net, minus = net;
      plus.parameters()[k] += eps;
      minus.parameters()[k] -= eps;
      const double fd = (objective(plus, x) - objective(minus, x)) / (2 * eps);
      worst = std::max(worst, std::abs(fd - g.params[k]));
      norm = std::max(norm, std::abs(fd));
    }
    CHECK(worst < 1e-4 * norm);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      PointBatch plus = x, minus = x;
      plus.data()[k] += eps;
      minus.data()[k] -= eps;
      const double fd = (objective(net, plus) - objective(net, minus)) / (2 * eps);
      CHECK(std::abs(fd - g.inputs.data()[k]) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("zero upstream gives zero gradients") {
  Rng rng(32);
  const Mlp net = perturbed_net(rng);
  const MlpGradients g = backward(net, normals(rng, 5, 2), Vector::Zero(5));
  for (double v : g.params) CHECK(v == 0.0);
  CHECK(g.inputs.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scalar and SIMD kernels give the same network results") {
  const kernels::KernelTable* simd = kernels::avx2_table();
  if (!simd) return;
  const kernels::KernelTable& ref = kernels::scalar_table();
  Rng rng(33);
  const Mlp net = Mlp::glorot({2, 64, 64, 1}, 0.2, rng);
  const PointBatch x = normals(rng, 300, 2);
  const Vector up = normals(rng, 300, 1);
  const Vector a = forward_batch(net, x, ref), b = forward_batch(net, x, *simd);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  const MlpGradients ga = backward(net, x, up, ref), gb = backward(net, x, up, *simd);
  for (std::size_t k = 0; k < ga.params.size(); ++k)
    CHECK(ga.params[k] == doctest::Approx(gb.params[k]).epsilon(1e-10).scale(1e-12));
  CHECK((ga.inputs - gb.inputs).cwiseAbs().maxCoeff() < 1e-12);
  Vector o1, o2;
  PointBatch i1, i2;
  forward_with_input_grad(net, x, o1, i1, ref);
  forward_with_input_grad(net, x, o2, i2, *simd);
  CHECK((o1 - o2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((i1 - i2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("input gradients from the forward pass") {
  Rng rng(34);
  const Mlp net = perturbed_net(rng);
  const PointBatch x = normals(rng, 20, 2);
  Vector out;
  PointBatch grad;
  forward_with_input_grad(net, x, out, grad);
  CHECK((out - forward_batch(net, x)).cwiseAbs().maxCoeff() < 1e-14);
  const MlpGradients g = backward(net, x, Vector::Ones(20));
  CHECK((grad - g.inputs).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("optimizers") {
  std::vector<double> p{1.0};
  OptState sgd(OptimizerSettings::sgd(0.1), 1);
  sgd.step(p, std::vector<double>{2.0});
  CHECK(p[0] == doctest::Approx(0.8));
  sgd.step(p, std::vector<double>{0.0});
  CHECK(p[0] == doctest::Approx(0.8));

  std::vector<double> q{1.0};
  OptState adam(OptimizerSettings::adam(1e-3, 0.9, 0.999), 1);
  adam.step(q, std::vector<double>{2.0});
  CHECK(std::abs((1.0 - q[0]) - 1e-3) < 1e-6);

  std::vector<double> r{1.0};
  OptState adam0(OptimizerSettings::adam(1e-3), 1);
  adam0.step(r, std::vector<double>{0.0});
  CHECK(r[0] == 1.0);
  CHECK(adam0.step_count() == 1);
}

TEST_CASE("discriminator updates") {
  const RatioVariant g = RatioVariant::vanilla_gan();
  SUBCASE("ascent on shared batches") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(200 + seed);
      Mlp net = Mlp::glorot({2, 16, 16, 1}, 0.2, rng);
      const PointBatch batch = normals(rng, 64, 2);
      OptState opt(OptimizerSettings::sgd(1e-2), net.parameters().size());
      const double before = disc_update(net, g, batch, batch, opt);
      const double after = mc_objective(
          g, [&](const Vector& x) { return forward(net, x); }, batch, batch);
      CHECK(after >= before - 1e-12);
    }
  }
  SUBCASE("zero learning rate leaves parameters") {
    Rng rng(40);
    Mlp net = Mlp::glorot({2, 16, 16, 1}, 0.2, rng);
    const std::vector<double> before(net.parameters().begin(), net.parameters().end());
    OptState opt(OptimizerSettings::adam(0.0), net.parameters().size());
    disc_update(net, g, normals(rng, 32, 2), normals(rng, 32, 2), opt);
    CHECK(std::equal(before.begin(), before.end(), net.parameters().begin()));
  }
  SUBCASE("learns the log ratio of a Gaussian pair") {
    const Gaussian p = target(), q = initial();
    Rng rng(41);
    Mlp net = Mlp::glorot({2, 64, 64, 1}, 0.2, rng);
    OptState opt(OptimizerSettings::adam(1e-3), net.parameters().size());
    for (int k = 0; k < 500; ++k) disc_update(net, g, p.sample(rng, 512), q.sample(rng, 512), opt);
    // Held-out target samples: mean absolute error against the exact log ratio.
    const PointBatch held = p.sample(rng, 2000);
    Vector u;
    PointBatch grad;
    log_ratio_and_grad(p, q, held, u, grad);
    CHECK((forward_batch(net, held) - u).cwiseAbs().mean() < 0.25);
    // On samples of q the logistic loss saturates in the far tail where log r
    // reaches tens of nats, so only the typical (median) error is bounded.
    const PointBatch held_q = q.sample(rng, 2001);
    log_ratio_and_grad(p, q, held_q, u, grad);
    Vector e = (forward_batch(net, held_q) - u).cwiseAbs();
    std::sort(e.data(), e.data() + e.size());
    CHECK(e(1000) < 0.25);
  }
  SUBCASE("separable clouds are classified perfectly") {
    Rng rng(42);
    Mlp net = Mlp::glorot({2, 16, 16, 1}, 0.2, rng);
    OptState opt(OptimizerSettings::adam(1e-2), net.parameters().size());
    PointBatch real = normals(rng, 128, 2), fake = normals(rng, 128, 2);
    real.col(0).array() = real.col(0).array().abs() + 0.5;
    fake.col(0).array() = -fake.col(0).array().abs() - 0.5;
    double accuracy = 0.0;
    for (int k = 0; k < 200 && accuracy < 1.0; ++k) {
      disc_update(net, g, real, fake, opt);
      const Vector dr = forward_batch(net, real), df = forward_batch(net, fake);
      accuracy = ((dr.array() > 0).count() + (df.array() < 0).count()) / 256.0;
    }
    CHECK(accuracy == 1.0);
  }
  SUBCASE("non-finite parameters are reported") {
    Rng rng(43);
    Mlp net = Mlp::glorot({2, 4, 1}, 0.2, rng);
    OptState opt(OptimizerSettings::sgd(1e308), net.parameters().size());
    PointBatch big = normals(rng, 8, 2) * 1e10;
    CHECK_THROWS_AS(
        {
          for (int k = 0; k < 5; ++k) disc_update(net, g, big, -big, opt);
        },
        NumericOverflow);
  }
}
