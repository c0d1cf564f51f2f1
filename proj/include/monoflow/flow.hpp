#pragma once

// Particle simulation of the rescaled KL flow dx/dt = h'(log r) grad log r,
// with a Langevin comparator and KL / dissipation monitoring.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "monoflow/gaussian.hpp"
#include "monoflow/hfunctions.hpp"
#include "monoflow/neural.hpp"
#include "monoflow/ratio_variants.hpp"
#include "monoflow/rng.hpp"

namespace monoflow {

struct ParticleCloud {
  PointBatch positions;
  double time = 0.0;
};

enum class RatioSourceKind { AnalyticPair, MomentMatched, Discriminator };

std::string to_string(RatioSourceKind kind);
RatioSourceKind parse_ratio_source(std::string_view name);

/// Where log r(x) = log p(x) - log q(x) and its gradient come from.
class RatioSource {
 public:
  /// Both densities fixed.
  static RatioSource analytic_pair(Gaussian p, Gaussian q);
  /// q is refit to the cloud on every refresh().
  static RatioSource moment_matched(Gaussian p, double jitter = 1e-8);
  /// log r = log T(d(x)) under the variant's output convention.
  static RatioSource discriminator(Mlp net, RatioVariant convention);

  RatioSourceKind kind() const { return kind_; }

  /// Re-estimates q from the current cloud (MomentMatched only).
  void refresh(const ParticleCloud& cloud);

  /// Current q for the analytic kinds.
  const Gaussian& q() const;
  const Gaussian& p() const;
  Mlp& network();
  const Mlp& network() const;
  const RatioVariant& convention() const;

  /// Row-wise log ratio and its gradient.
  void log_ratio(const PointBatch& x, Vector& u, PointBatch& grad) const;

 private:
  explicit RatioSource(RatioSourceKind kind) : kind_(kind) {}

  RatioSourceKind kind_;
  std::optional<Gaussian> p_;
  std::optional<Gaussian> q_;
  double jitter_ = 0.0;
  std::optional<Mlp> net_;
  std::optional<RatioVariant> convention_;
};

/// h'(u) grad u at a single point.
Vector vector_field(const RatioSource& src, const HFunction& h, const Vector& x);
/// Row-wise field; NumericOverflow messages name the offending row.
PointBatch vector_field(const RatioSource& src, const HFunction& h, const PointBatch& x);

/// Moves every particle by alpha times the field and advances time by alpha.
ParticleCloud euler_step(const ParticleCloud& cloud, const RatioSource& src, const HFunction& h,
                         double alpha);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean over particles of -h'(log r) |score_q(x) - score_p(x)|^2 with
/// r = p / q_hat.
McEstimate dissipation_estimate(const ParticleCloud& cloud, const Gaussian& p,
                                const Gaussian& q_hat, const HFunction& h);

/// x += dt score_p(x) + sqrt(2 dt) xi for standard normal xi.
ParticleCloud langevin_step(const ParticleCloud& cloud, const Gaussian& p, double dt, Rng& rng);

struct DiscriminatorSettings {
  std::vector<std::size_t> hidden = {64, 64};
  double leaky_slope = 0.2;
  OptimizerSettings optimizer = OptimizerSettings::adam(1e-3, 0.5, 0.999);
  int updates_per_step = 1;
  int batch = 512;
  /// Updates on the initial cloud before the first flow step.
  int warmup_updates = 500;
};

struct FlowSettings {
  double alpha = 1e-3;
  int steps = 5000;
  int particles = 4096;
  RatioSourceKind source = RatioSourceKind::MomentMatched;
  double jitter = 1e-8;
  DiscriminatorSettings disc;
};

struct FlowRecord {
  double time = 0.0;
  Vector mean;
  Matrix cov;
  /// KL(q_hat || p) for the Gaussian moment-matched to the cloud.
  double kl = 0.0;
  McEstimate dissipation;
};

struct FlowTrace {
  std::vector<FlowRecord> records;
  ParticleCloud final_cloud;
};

/// Samples x_0 ~ q0 and integrates with forward Euler. Records one entry
/// before the first step and one after each step.
FlowTrace run_flow(const Gaussian& p, const Gaussian& q0, const HFunction& h,
                   const FlowSettings& settings, Rng& rng);

/// Header time,mean_0,mean_1,cov_00,cov_01,cov_11,kl,dissipation (2D only).
void write_flow_csv(std::ostream& out, const FlowTrace& trace);

}  // namespace monoflow
