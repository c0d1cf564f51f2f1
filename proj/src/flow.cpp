#include "monoflow/flow.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "monoflow/error.hpp"

namespace monoflow {

std::string to_string(RatioSourceKind kind) {
  switch (kind) {
    case RatioSourceKind::AnalyticPair: return "analytic_pair";
    case RatioSourceKind::MomentMatched: return "moment_matched";
    case RatioSourceKind::Discriminator: return "discriminator";
  }
  return "?";
}

RatioSourceKind parse_ratio_source(std::string_view name) {
  if (name == "analytic_pair") return RatioSourceKind::AnalyticPair;
  if (name == "moment_matched") return RatioSourceKind::MomentMatched;
  if (name == "discriminator") return RatioSourceKind::Discriminator;
  throw ConfigError("unknown ratio source '" + std::string(name) + "'");
}

RatioSource RatioSource::analytic_pair(Gaussian p, Gaussian q) {
  if (p.dim() != q.dim()) throw DomainError("analytic_pair: dimension mismatch");
  RatioSource src(RatioSourceKind::AnalyticPair);
  src.p_.emplace(std::move(p));
  src.q_.emplace(std::move(q));
  return src;
}

RatioSource RatioSource::moment_matched(Gaussian p, double jitter) {
  RatioSource src(RatioSourceKind::MomentMatched);
  src.p_.emplace(std::move(p));
  src.jitter_ = jitter;
  return src;
}

RatioSource RatioSource::discriminator(Mlp net, RatioVariant convention) {
  RatioSource src(RatioSourceKind::Discriminator);
  src.net_.emplace(std::move(net));
  src.convention_.emplace(convention);
  return src;
}

void RatioSource::refresh(const ParticleCloud& cloud) {
  if (kind_ != RatioSourceKind::MomentMatched) return;
  if (cloud.positions.cols() != p_->dim()) throw DomainError("cloud dimension mismatch");
  q_.emplace(fit_gaussian(cloud.positions, jitter_));
}

const Gaussian& RatioSource::q() const {
  if (!q_) throw DomainError("ratio source has no analytic q (refresh a moment-matched source)");
  return *q_;
}

const Gaussian& RatioSource::p() const {
  if (!p_) throw DomainError("discriminator sources carry no analytic p");
  return *p_;
}

Mlp& RatioSource::network() {
  if (!net_) throw DomainError("ratio source has no network");
  return *net_;
}

const Mlp& RatioSource::network() const {
  if (!net_) throw DomainError("ratio source has no network");
  return *net_;
}

const RatioVariant& RatioSource::convention() const {
  if (!convention_) throw DomainError("ratio source has no output convention");
  return *convention_;
}

void RatioSource::log_ratio(const PointBatch& x, Vector& u, PointBatch& grad) const {
  if (kind_ != RatioSourceKind::Discriminator) {
    log_ratio_and_grad(p(), q(), x, u, grad);
    return;
  }
  if (static_cast<std::size_t>(x.cols()) != net_->input_dim())
    throw DomainError("discriminator input size does not match the cloud");
  Vector d;
  forward_with_input_grad(*net_, x, d, grad);
  u.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    u(i) = convention_->log_ratio(d(i));
    grad.row(i) *= convention_->log_ratio_slope(d(i));
  }
}

Vector vector_field(const RatioSource& src, const HFunction& h, const Vector& x) {
  PointBatch row = x.transpose();
  return vector_field(src, h, row).row(0).transpose();
}

PointBatch vector_field(const RatioSource& src, const HFunction& h, const PointBatch& x) {
  Vector u;
  PointBatch grad;
  src.log_ratio(x, u, grad);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double scale;
    try {
      scale = h.derivative(u(i));
    } catch (const NumericOverflow& e) {
      throw NumericOverflow(std::string(e.what()) + " (particle " + std::to_string(i) + ")");
    }
    grad.row(i) *= scale;
  }
  return grad;
}

ParticleCloud euler_step(const ParticleCloud& cloud, const RatioSource& src, const HFunction& h,
                         double alpha) {
  if (!(alpha > 0.0)) throw DomainError("euler_step: step size must be positive");
  ParticleCloud next{cloud.positions + alpha * vector_field(src, h, cloud.positions),
                     cloud.time + alpha};
  if (!next.positions.allFinite()) throw NumericOverflow("euler_step: non-finite particle");
  return next;
}

McEstimate dissipation_estimate(const ParticleCloud& cloud, const Gaussian& p,
                                const Gaussian& q_hat, const HFunction& h) {
  const Eigen::Index n = cloud.positions.rows();
  if (n < 2) throw DomainError("dissipation_estimate: need at least two particles");
  Vector u;
  PointBatch grad;
  log_ratio_and_grad(p, q_hat, cloud.positions, u, grad);
  double sum = 0.0, sum_sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double term = -h.derivative(u(i)) * grad.row(i).squaredNorm();
    sum += term;
    sum_sq += term * term;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / static_cast<double>(n - 1));
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

ParticleCloud langevin_step(const ParticleCloud& cloud, const Gaussian& p, double dt, Rng& rng) {
  if (!(dt > 0.0)) throw DomainError("langevin_step: dt must be positive");
  const double noise = std::sqrt(2.0 * dt);
  const Eigen::Index d = p.dim();
  if (cloud.positions.cols() != d) throw DomainError("langevin_step: dimension mismatch");
  ParticleCloud next{cloud.positions, cloud.time + dt};
  const Matrix& prec = p.precision();
  std::vector<double> diff(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < next.positions.rows(); ++i) {
    double* xi = next.positions.data() + i * d;
    for (Eigen::Index k = 0; k < d; ++k) diff[k] = xi[k] - p.mean()[k];
    for (Eigen::Index r = 0; r < d; ++r) {
      double score = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) score -= prec(r, c) * diff[c];
      xi[r] += dt * score;
    }
    for (Eigen::Index k = 0; k < d; ++k) xi[k] += noise * rng.normal();
  }
  return next;
}

namespace {

PointBatch random_rows(const PointBatch& x, int count, Rng& rng) {
  PointBatch out(count, x.cols());
  const auto n = static_cast<std::uint64_t>(x.rows());
  for (int i = 0; i < count; ++i) out.row(i) = x.row(static_cast<Eigen::Index>(rng.next_u64() % n));
  return out;
}

FlowRecord record(const ParticleCloud& cloud, const Gaussian& p, const HFunction& h,
                  double jitter) {
  const Gaussian q_hat = fit_gaussian(cloud.positions, jitter);
  FlowRecord r;
  r.time = cloud.time;
  r.mean = q_hat.mean();
  r.cov = q_hat.cov();
  r.kl = kl_closed_form(q_hat, p);
  r.dissipation = dissipation_estimate(cloud, p, q_hat, h);
  return r;
}

}  // namespace

FlowTrace run_flow(const Gaussian& p, const Gaussian& q0, const HFunction& h,
                   const FlowSettings& settings, Rng& rng) {
  if (settings.steps < 1) throw DomainError("run_flow: steps must be at least 1");
  if (settings.particles < p.dim() + 1) throw DomainError("run_flow: too few particles");
  if (!(settings.alpha > 0.0)) throw DomainError("run_flow: alpha must be positive");
  if (p.dim() != q0.dim()) throw DomainError("run_flow: dimension mismatch");

  ParticleCloud cloud{q0.sample(rng, settings.particles), 0.0};
  RatioSource src = [&] {
    switch (settings.source) {
      case RatioSourceKind::AnalyticPair: return RatioSource::analytic_pair(p, q0);
      case RatioSourceKind::MomentMatched: return RatioSource::moment_matched(p, settings.jitter);
      case RatioSourceKind::Discriminator: {
        std::vector<std::size_t> sizes{static_cast<std::size_t>(p.dim())};
        sizes.insert(sizes.end(), settings.disc.hidden.begin(), settings.disc.hidden.end());
        sizes.push_back(1);
        Rng init = rng.split(1);
        return RatioSource::discriminator(Mlp::glorot(sizes, settings.disc.leaky_slope, init),
                                          RatioVariant::vanilla_gan());
      }
    }
    throw DomainError("run_flow: unknown ratio source");
  }();

  std::optional<OptState> disc_opt;
  const RatioVariant gan = RatioVariant::vanilla_gan();
  auto train_disc = [&](int updates) {
    for (int i = 0; i < updates; ++i) {
      const PointBatch real = p.sample(rng, settings.disc.batch);
      const PointBatch fake = random_rows(cloud.positions, settings.disc.batch, rng);
      disc_update(src.network(), gan, real, fake, *disc_opt);
    }
  };
  if (settings.source == RatioSourceKind::Discriminator) {
    disc_opt.emplace(settings.disc.optimizer, src.network().parameters().size());
    train_disc(settings.disc.warmup_updates);
  }

  FlowTrace trace;
  trace.records.reserve(static_cast<std::size_t>(settings.steps) + 1);
  trace.records.push_back(record(cloud, p, h, settings.jitter));
  for (int k = 0; k < settings.steps; ++k) {
    try {
      if (settings.source == RatioSourceKind::Discriminator)
        train_disc(settings.disc.updates_per_step);
      src.refresh(cloud);
      cloud = euler_step(cloud, src, h, settings.alpha);
      trace.records.push_back(record(cloud, p, h, settings.jitter));
    } catch (const NumericOverflow& e) {
      throw NumericOverflow("step " + std::to_string(k + 1) + ": " + e.what());
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite("step " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  trace.final_cloud = std::move(cloud);
  return trace;
}

void write_flow_csv(std::ostream& out, const FlowTrace& trace) {
  out << "time,mean_0,mean_1,cov_00,cov_01,cov_11,kl,dissipation\n";
  char line[512];
  for (const FlowRecord& r : trace.records) {
    if (r.mean.size() != 2) throw DomainError("flow CSV export supports 2D clouds only");
    std::snprintf(line, sizeof line, "%.10g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.time,
                  r.mean(0), r.mean(1), r.cov(0, 0), r.cov(0, 1), r.cov(1, 1), r.kl,
                  r.dissipation.mean);
    out << line;
  }
}

}  // namespace monoflow
