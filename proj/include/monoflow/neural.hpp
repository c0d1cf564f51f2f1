#pragma once

// Fully-connected leaky-ReLU network with a scalar logit head, exact
// reverse-mode gradients, and SGD/Adam.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "monoflow/gaussian.hpp"
#include "monoflow/kernels.hpp"
#include "monoflow/ratio_variants.hpp"
#include "monoflow/rng.hpp"

namespace monoflow {

/// All parameters live in one flat buffer: for each layer, the weight block
/// (fan_in x fan_out, row-major) followed by the bias.
class Mlp {
 public:
  using WeightView = Eigen::Map<Matrix>;
  using ConstWeightView = Eigen::Map<const Matrix>;
  using BiasView = Eigen::Map<Eigen::VectorXd>;
  using ConstBiasView = Eigen::Map<const Eigen::VectorXd>;

  /// Zero-initialized network. layer_sizes = {input, hidden..., 1}.
  Mlp(std::vector<std::size_t> layer_sizes, double leaky_slope);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static Mlp glorot(std::vector<std::size_t> layer_sizes, double leaky_slope, Rng& rng);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  double leaky_slope() const { return slope_; }

  WeightView weight(std::size_t layer);
  ConstWeightView weight(std::size_t layer) const;
  BiasView bias(std::size_t layer);
  ConstBiasView bias(std::size_t layer) const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  /// Offset of layer `layer`'s weight block in the flat buffer; its bias
  /// follows immediately after.
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  bool all_finite() const;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  double slope_;
};

double forward(const Mlp& net, const Vector& x);

/// One logit per row of x.
Vector forward_batch(const Mlp& net, const PointBatch& x,
                     const kernels::KernelTable& k = kernels::active());

struct MlpGradients {
  /// Same layout as Mlp::parameters().
  std::vector<double> params;
  /// Row i is the gradient with respect to input row i.
  PointBatch inputs;
};

/// Gradients of sum_i upstream[i] * forward(net, x_i).
MlpGradients backward(const Mlp& net, const PointBatch& x, const Vector& upstream,
                      const kernels::KernelTable& k = kernels::active());

/// Forward values and input gradients of every row in one pass.
void forward_with_input_grad(const Mlp& net, const PointBatch& x, Vector& out,
                             PointBatch& input_grads,
                             const kernels::KernelTable& k = kernels::active());

struct OptimizerSettings {
  enum class Kind { Sgd, Adam };

  Kind kind = Kind::Adam;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerSettings sgd(double lr) { return {Kind::Sgd, lr, 0.0, 0.0, 0.0}; }
  static OptimizerSettings adam(double lr, double beta1 = 0.5, double beta2 = 0.999,
                                double eps = 1e-8) {
    return {Kind::Adam, lr, beta1, beta2, eps};
  }
};

class OptState {
 public:
  OptState(OptimizerSettings settings, std::size_t parameter_count);

  const OptimizerSettings& settings() const { return settings_; }
  std::size_t step_count() const { return steps_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

  /// params -= update(grads). Descends; negate grads to ascend.
  void step(std::span<double> params, std::span<const double> grads,
            const kernels::KernelTable& k = kernels::active());

 private:
  OptimizerSettings settings_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t steps_ = 0;
};

inline void opt_step(OptState& opt, std::span<double> params, std::span<const double> grads) {
  opt.step(params, grads);
}

/// One ascent step on mean phi(d(real)) + mean psi(d(fake)). Returns the
/// objective at the pre-step parameters.
double disc_update(Mlp& net, const RatioVariant& v, const PointBatch& real_batch,
                   const PointBatch& fake_batch, OptState& opt);

}  // namespace monoflow
