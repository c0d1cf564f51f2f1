#pragma once

// Reparameterized Gaussian generator x = mu + s^T z and the three ways of
// estimating its gradient: through the explicit density ratio (with or
// without the density-parameter term) or through a trained discriminator.

#include <cmath>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "monoflow/flow.hpp"
#include "monoflow/gaussian.hpp"
#include "monoflow/hfunctions.hpp"
#include "monoflow/neural.hpp"
#include "monoflow/rng.hpp"

namespace monoflow {

/// Samples are x = mu + s^T z, so the generated covariance is s^T s.
struct GaussianGenerator {
  Vector mu;
  Matrix s;

  Matrix covariance() const { return s.transpose() * s; }
  /// Throws NotPositiveDefinite when s^T s is singular.
  Gaussian as_gaussian() const { return Gaussian(mu, covariance()); }
};

/// Row i is mu + s^T z_i.
PointBatch gen_sample(const GaussianGenerator& g, const PointBatch& z);

/// Gradient of a generator loss with respect to (mu, s).
struct GeneratorGradient {
  Vector mu;
  Matrix s;

  double norm() const { return std::sqrt(mu.squaredNorm() + s.squaredNorm()); }
};

/// Batch gradient of mean f(r(x(z), theta)) with r = p / q_theta, including
/// the term from q_theta's own dependence on theta.
GeneratorGradient full_gradient(const GaussianGenerator& g, const FDivergence& f,
                                const Gaussian& target, const PointBatch& z);

/// Batch gradient of -mean h(log r(x(z))) with the density inside r held
/// fixed: h'(log r) grad_x log r pushed through dx/dtheta.
GeneratorGradient detached_gradient(const GaussianGenerator& g, const HFunction& h,
                                    const Gaussian& target, const PointBatch& z);

/// Same contraction with the log ratio read from a discriminator logit.
GeneratorGradient discriminator_gradient(const GaussianGenerator& g, const HFunction& h,
                                         const Mlp& disc, const PointBatch& z);

enum class RatioModel { Full, Detached, GanBilevel };

std::string to_string(RatioModel model);
RatioModel parse_ratio_model(std::string_view name);

/// Adam state for the six generator parameters, flattened as (mu, s row-major).
class GeneratorOptimizer {
 public:
  GeneratorOptimizer(OptimizerSettings settings, Eigen::Index dim);
  /// Descends along `grad` after clipping its norm to `clip_norm`.
  void step(GaussianGenerator& g, GeneratorGradient grad, double clip_norm);

 private:
  OptState state_;
  std::vector<double> flat_params_;
  std::vector<double> flat_grads_;
};

struct BilevelOptions {
  int disc_updates = 1;
  double clip_norm = 1e3;
};

/// Discriminator ascent on real vs generated samples, then one generator
/// step on -mean h(d(g(z))) with the discriminator frozen.
void gan_bilevel_step(GaussianGenerator& g, Mlp& disc, const HFunction& h,
                      const PointBatch& data_batch, const PointBatch& z_batch,
                      OptState& disc_opt, GeneratorOptimizer& gen_opt,
                      const BilevelOptions& opts = {});

struct TrainConfig {
  FKind divergence = FKind::KL;
  RatioModel ratio_model = RatioModel::Full;
  int steps = 5000;
  int batch = 512;
  OptimizerSettings generator = OptimizerSettings::adam(1e-2, 0.9, 0.999);
  DiscriminatorSettings disc = default_gan_discriminator();
  double clip_norm = 1e3;
  std::uint64_t seed = 0;
  double tol_mean = 0.1;
  double tol_cov = 0.15;
  int tail_window = 100;

  Vector target_mean = Vector::Zero(2);
  Matrix target_cov = default_target_cov();
  Vector init_mean = Vector::Ones(2);
  Matrix init_scale = Matrix::Identity(2, 2);

  static Matrix default_target_cov();
  static DiscriminatorSettings default_gan_discriminator();
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

enum class TrainOutcome { Converged, NotConverged, Diverged };

std::string to_string(TrainOutcome outcome);

struct TrainReport {
  Vector final_mu;
  Matrix final_s;
  Matrix final_cov;
  std::vector<double> loss;
  std::vector<double> mu_dist;
  std::vector<double> cov_dist;
  /// Tail averages of mu_dist and cov_dist.
  double tail_mu_dist = 0.0;
  double tail_cov_dist = 0.0;
  bool converged = false;
  TrainOutcome outcome = TrainOutcome::NotConverged;
  /// For runs that do not converge: how they failed.
  std::string behavior;
};

/// Tail averages of the distance traces compared against the tolerances.
bool judge_converged(const std::vector<double>& mu_dist, const std::vector<double>& cov_dist,
                     double tol_mean, double tol_cov, int tail_window);

TrainReport train(const TrainConfig& cfg);

/// Header step,loss,mu_dist,cov_dist.
void write_train_csv(std::ostream& out, const TrainReport& report);

struct LossProfile {
  std::vector<double> d;
  std::vector<HFunction> losses;
  /// value[j][i] = h_j(d_i); slope[j][i] = h_j'(d_i).
  std::vector<std::vector<double>> value;
  std::vector<std::vector<double>> slope;
};

/// Vanilla, NonSaturated, MLE, Logit, Arcsinh and ShiftedVanilla at each C.
std::vector<HFunction> generator_losses(const std::vector<double>& shifts = {0, 1, 3, 5});

LossProfile loss_rescaling_profile(const std::vector<HFunction>& losses,
                                   const std::vector<double>& d_grid);

/// Header d, then h_<name>,dh_<name> per loss (':' in names becomes '_').
void write_profile_csv(std::ostream& out, const LossProfile& profile);

}  // namespace monoflow
