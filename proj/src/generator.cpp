#include "monoflow/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "monoflow/error.hpp"

namespace monoflow {

PointBatch gen_sample(const GaussianGenerator& g, const PointBatch& z) {
  if (z.cols() != g.mu.size()) throw DomainError("gen_sample: z has the wrong dimension");
  PointBatch x = z * g.s;
  x.rowwise() += g.mu.transpose();
  return x;
}

namespace {

// Contracts per-sample vectors v_i (gradients with respect to x_i) with
// dx_i/dtheta: identity for mu, z_i v_i^T for s.
GeneratorGradient pull_back(const PointBatch& z, const PointBatch& v) {
  const double n = static_cast<double>(z.rows());
  GeneratorGradient out;
  out.mu = v.colwise().sum().transpose() / n;
  out.s = z.transpose() * v / n;
  return out;
}

}  // namespace

GeneratorGradient full_gradient(const GaussianGenerator& g, const FDivergence& f,
                                const Gaussian& target, const PointBatch& z) {
  const Gaussian q = g.as_gaussian();
  const PointBatch x = gen_sample(g, z);
  Vector u;
  PointBatch grad_u;
  log_ratio_and_grad(target, q, x, u, grad_u);
  const HFunction h = HFunction::negated(f.kind());
  const Matrix& prec = q.precision();
  const Eigen::Index n = z.rows(), dim = z.cols();

  PointBatch v(n, dim);
  Vector explicit_mu = Vector::Zero(dim);
  Matrix explicit_g = Matrix::Zero(dim, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    // f'(r) r, via h(log r) = -f(r).
    const double w = -h.derivative(u(i));
    v.row(i) = w * grad_u.row(i);
    // d log q / d mu = P (x - mu); d log q / d Sigma = -P/2 + P (x-mu)(x-mu)^T P / 2.
    const Vector a = prec * (x.row(i).transpose() - g.mu);
    explicit_mu -= w * a;
    explicit_g -= w * 0.5 * (a * a.transpose() - prec);
  }
  GeneratorGradient out = pull_back(z, v);
  out.mu += explicit_mu / static_cast<double>(n);
  // Sigma = s^T s, so d/ds = s (G + G^T) = 2 s G for symmetric G.
  out.s += 2.0 * g.s * explicit_g / static_cast<double>(n);
  return out;
}

GeneratorGradient detached_gradient(const GaussianGenerator& g, const HFunction& h,
                                    const Gaussian& target, const PointBatch& z) {
  const Gaussian q = g.as_gaussian();
  const PointBatch x = gen_sample(g, z);
  Vector u;
  PointBatch grad_u;
  log_ratio_and_grad(target, q, x, u, grad_u);
  for (Eigen::Index i = 0; i < x.rows(); ++i) grad_u.row(i) *= -h.derivative(u(i));
  return pull_back(z, grad_u);
}

GeneratorGradient discriminator_gradient(const GaussianGenerator& g, const HFunction& h,
                                         const Mlp& disc, const PointBatch& z) {
  const PointBatch x = gen_sample(g, z);
  Vector d;
  PointBatch grad_d;
  forward_with_input_grad(disc, x, d, grad_d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) grad_d.row(i) *= -h.derivative(d(i));
  return pull_back(z, grad_d);
}

std::string to_string(RatioModel model) {
  switch (model) {
    case RatioModel::Full: return "full";
    case RatioModel::Detached: return "detached";
    case RatioModel::GanBilevel: return "gan";
  }
  return "?";
}

RatioModel parse_ratio_model(std::string_view name) {
  if (name == "full") return RatioModel::Full;
  if (name == "detached") return RatioModel::Detached;
  if (name == "gan") return RatioModel::GanBilevel;
  throw ConfigError("unknown ratio model '" + std::string(name) + "'");
}

GeneratorOptimizer::GeneratorOptimizer(OptimizerSettings settings, Eigen::Index dim)
    : state_(settings, static_cast<std::size_t>(dim + dim * dim)),
      flat_params_(static_cast<std::size_t>(dim + dim * dim)),
      flat_grads_(flat_params_.size()) {}

void GeneratorOptimizer::step(GaussianGenerator& g, GeneratorGradient grad, double clip_norm) {
  const double norm = grad.norm();
  if (!std::isfinite(norm)) throw NumericOverflow("generator gradient is not finite");
  if (norm > clip_norm) {
    grad.mu *= clip_norm / norm;
    grad.s *= clip_norm / norm;
  }
  const auto dim = static_cast<std::size_t>(g.mu.size());
  if (flat_params_.size() != dim + dim * dim)
    throw DomainError("generator optimizer sized for another dimension");
  std::copy_n(g.mu.data(), dim, flat_params_.begin());
  std::copy_n(g.s.data(), dim * dim, flat_params_.begin() + static_cast<std::ptrdiff_t>(dim));
  std::copy_n(grad.mu.data(), dim, flat_grads_.begin());
  std::copy_n(grad.s.data(), dim * dim, flat_grads_.begin() + static_cast<std::ptrdiff_t>(dim));
  state_.step(flat_params_, flat_grads_);
  std::copy_n(flat_params_.begin(), dim, g.mu.data());
  std::copy_n(flat_params_.begin() + static_cast<std::ptrdiff_t>(dim), dim * dim, g.s.data());
}

void gan_bilevel_step(GaussianGenerator& g, Mlp& disc, const HFunction& h,
                      const PointBatch& data_batch, const PointBatch& z_batch,
                      OptState& disc_opt, GeneratorOptimizer& gen_opt,
                      const BilevelOptions& opts) {
  const RatioVariant gan = RatioVariant::vanilla_gan();
  const PointBatch fake = gen_sample(g, z_batch);
  for (int i = 0; i < opts.disc_updates; ++i) disc_update(disc, gan, data_batch, fake, disc_opt);
  gen_opt.step(g, discriminator_gradient(g, h, disc, z_batch), opts.clip_norm);
}

Matrix TrainConfig::default_target_cov() {
  Matrix cov(2, 2);
  cov << 1.0, 0.8, 0.8, 0.89;
  return cov;
}

DiscriminatorSettings TrainConfig::default_gan_discriminator() {
  DiscriminatorSettings d;
  d.optimizer = OptimizerSettings::adam(5e-3, 0.5, 0.999);
  d.updates_per_step = 1;
  d.warmup_updates = 0;
  return d;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(std::string(field) + ": " + what);
  };
  need(steps >= 1, "train.steps", "must be at least 1");
  need(batch >= 1, "train.batch", "must be at least 1");
  need(tail_window >= 1, "train.tail_window", "must be at least 1");
  need(tol_mean > 0.0, "train.tol_mean", "must be positive");
  need(tol_cov > 0.0, "train.tol_cov", "must be positive");
  need(clip_norm > 0.0, "train.clip_norm", "must be positive");
  need(generator.lr >= 0.0, "train.generator.lr", "must be non-negative");
  need(disc.updates_per_step >= 1, "train.disc.updates_per_step", "must be at least 1");
  need(disc.optimizer.lr >= 0.0, "train.disc.lr", "must be non-negative");
  const Eigen::Index d = target_mean.size();
  need(d >= 1, "target.mean", "must be nonempty");
  need(target_cov.rows() == d && target_cov.cols() == d, "target.cov", "must be d x d");
  need(init_mean.size() == d, "init.mean", "must match the target dimension");
  need(init_scale.rows() == d && init_scale.cols() == d, "init.scale", "must be d x d");
}

std::string to_string(TrainOutcome outcome) {
  switch (outcome) {
    case TrainOutcome::Converged: return "converged";
    case TrainOutcome::NotConverged: return "not_converged";
    case TrainOutcome::Diverged: return "diverged";
  }
  return "?";
}

bool judge_converged(const std::vector<double>& mu_dist, const std::vector<double>& cov_dist,
                     double tol_mean, double tol_cov, int tail_window) {
  if (mu_dist.empty() || mu_dist.size() != cov_dist.size()) return false;
  const std::size_t window = std::min(mu_dist.size(), static_cast<std::size_t>(tail_window));
  const auto tail_mean = [&](const std::vector<double>& v) {
    return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(window), v.end(), 0.0) /
           static_cast<double>(window);
  };
  const double m = tail_mean(mu_dist), c = tail_mean(cov_dist);
  return std::isfinite(m) && std::isfinite(c) && m <= tol_mean && c <= tol_cov;
}

TrainReport train(const TrainConfig& cfg) {
  cfg.validate();
  const Gaussian target(cfg.target_mean, cfg.target_cov);
  const Eigen::Index dim = target.dim();
  const HFunction h = HFunction::negated(cfg.divergence);
  const FDivergence f(cfg.divergence);

  Rng rng(cfg.seed);
  Rng z_rng = rng.split(1);
  Rng data_rng = rng.split(2);
  Rng init_rng = rng.split(3);

  GaussianGenerator g{cfg.init_mean, cfg.init_scale};
  GeneratorOptimizer gen_opt(cfg.generator, dim);
  std::optional<Mlp> disc;
  std::optional<OptState> disc_opt;
  if (cfg.ratio_model == RatioModel::GanBilevel) {
    std::vector<std::size_t> sizes{static_cast<std::size_t>(dim)};
    sizes.insert(sizes.end(), cfg.disc.hidden.begin(), cfg.disc.hidden.end());
    sizes.push_back(1);
    disc.emplace(Mlp::glorot(sizes, cfg.disc.leaky_slope, init_rng));
    disc_opt.emplace(cfg.disc.optimizer, disc->parameters().size());
  }
  const BilevelOptions bilevel{cfg.disc.updates_per_step, cfg.clip_norm};

  auto standard_normals = [&](Rng& r) {
    PointBatch z(cfg.batch, dim);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = r.normal();
    return z;
  };

  TrainReport report;
  report.loss.reserve(static_cast<std::size_t>(cfg.steps));
  report.mu_dist.reserve(static_cast<std::size_t>(cfg.steps));
  report.cov_dist.reserve(static_cast<std::size_t>(cfg.steps));
  try {
    for (int step = 0; step < cfg.steps; ++step) {
      const PointBatch z = standard_normals(z_rng);
      double loss = 0.0;
      if (cfg.ratio_model == RatioModel::GanBilevel) {
        const PointBatch data = target.sample(data_rng, cfg.batch);
        gan_bilevel_step(g, *disc, h, data, z, *disc_opt, gen_opt, bilevel);
        const Vector d = forward_batch(*disc, gen_sample(g, z));
        for (Eigen::Index i = 0; i < d.size(); ++i) loss -= h.value(d(i));
      } else {
        const Gaussian q = g.as_gaussian();
        const PointBatch x = gen_sample(g, z);
        const Vector u = target.log_density(x) - q.log_density(x);
        for (Eigen::Index i = 0; i < u.size(); ++i) loss -= h.value(u(i));
        gen_opt.step(g,
                     cfg.ratio_model == RatioModel::Full ? full_gradient(g, f, target, z)
                                                         : detached_gradient(g, h, target, z),
                     cfg.clip_norm);
      }
      if (!g.mu.allFinite() || !g.s.allFinite())
        throw NumericOverflow("generator parameters became non-finite");
      report.loss.push_back(loss / static_cast<double>(cfg.batch));
      report.mu_dist.push_back((g.mu - cfg.target_mean).norm());
      report.cov_dist.push_back((g.covariance() - cfg.target_cov).norm());
    }
  } catch (const Error& e) {
    report.outcome = TrainOutcome::Diverged;
    report.behavior = std::string("diverged at step ") + std::to_string(report.loss.size() + 1) +
                      ": " + e.what();
  }

  report.final_mu = g.mu;
  report.final_s = g.s;
  report.final_cov = g.covariance();
  if (!report.mu_dist.empty()) {
    const std::size_t window =
        std::min(report.mu_dist.size(), static_cast<std::size_t>(cfg.tail_window));
    const auto tail = [&](const std::vector<double>& v) {
      return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(window), v.end(), 0.0) /
             static_cast<double>(window);
    };
    report.tail_mu_dist = tail(report.mu_dist);
    report.tail_cov_dist = tail(report.cov_dist);
  }
  if (report.outcome == TrainOutcome::Diverged) return report;

  report.converged = judge_converged(report.mu_dist, report.cov_dist, cfg.tol_mean, cfg.tol_cov,
                                     cfg.tail_window);
  report.outcome = report.converged ? TrainOutcome::Converged : TrainOutcome::NotConverged;
  if (!report.converged) {
    const double start_mu = (cfg.init_mean - cfg.target_mean).norm();
    const double start_cov =
        (cfg.init_scale.transpose() * cfg.init_scale - cfg.target_cov).norm();
    const std::size_t n = report.mu_dist.size();
    const std::size_t window = std::min(n, static_cast<std::size_t>(cfg.tail_window));
    double lo = report.mu_dist[n - window], hi = lo;
    for (std::size_t i = n - window; i < n; ++i) {
      lo = std::min(lo, report.mu_dist[i]);
      hi = std::max(hi, report.mu_dist[i]);
    }
    char buf[256];
    const bool away = report.tail_mu_dist > start_mu || report.tail_cov_dist > start_cov;
    std::snprintf(buf, sizeof buf,
                  "%s; tail mean distance %.3g (range %.3g..%.3g), covariance distance %.3g",
                  away ? "moved away from the target" : "stalled short of the target",
                  report.tail_mu_dist, lo, hi, report.tail_cov_dist);
    report.behavior = buf;
  }
  return report;
}

void write_train_csv(std::ostream& out, const TrainReport& report) {
  out << "step,loss,mu_dist,cov_dist\n";
  char line[256];
  for (std::size_t i = 0; i < report.loss.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.12g,%.12g,%.12g\n", i + 1, report.loss[i],
                  report.mu_dist[i], report.cov_dist[i]);
    out << line;
  }
}

std::vector<HFunction> generator_losses(const std::vector<double>& shifts) {
  std::vector<HFunction> out{HFunction::vanilla(), HFunction::non_saturated(), HFunction::mle(),
                             HFunction::logit(), HFunction::arcsinh()};
  for (double c : shifts) out.push_back(HFunction::shifted_vanilla(c));
  return out;
}

LossProfile loss_rescaling_profile(const std::vector<HFunction>& losses,
                                   const std::vector<double>& d_grid) {
  LossProfile p;
  p.d = d_grid;
  p.losses = losses;
  for (const HFunction& h : losses) {
    std::vector<double> value, slope;
    value.reserve(d_grid.size());
    slope.reserve(d_grid.size());
    for (double d : d_grid) {
      if (!std::isfinite(d)) throw DomainError("loss profile grid must be finite");
      value.push_back(h.value(d));
      slope.push_back(h.derivative(d));
    }
    p.value.push_back(std::move(value));
    p.slope.push_back(std::move(slope));
  }
  return p;
}

void write_profile_csv(std::ostream& out, const LossProfile& profile) {
  out << "d";
  for (const HFunction& h : profile.losses) {
    std::string name = h.name();
    std::replace(name.begin(), name.end(), ':', '_');
    out << ",h_" << name << ",dh_" << name;
  }
  out << '\n';
  char cell[64];
  for (std::size_t i = 0; i < profile.d.size(); ++i) {
    std::snprintf(cell, sizeof cell, "%.12g", profile.d[i]);
    out << cell;
    for (std::size_t j = 0; j < profile.losses.size(); ++j) {
      std::snprintf(cell, sizeof cell, ",%.12g,%.12g", profile.value[j][i], profile.slope[j][i]);
      out << cell;
    }
    out << '\n';
  }
}

}  // namespace monoflow
