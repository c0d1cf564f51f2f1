#include "monoflow/neural.hpp"

#include <cmath>
#include <string>

#include "monoflow/error.hpp"

namespace monoflow {

Mlp::Mlp(std::vector<std::size_t> layer_sizes, double leaky_slope)
    : sizes_(std::move(layer_sizes)), slope_(leaky_slope) {
  if (sizes_.size() < 2) throw DomainError("Mlp needs at least an input and an output size");
  if (sizes_.back() != 1) throw DomainError("Mlp output dimension must be 1");
  for (std::size_t s : sizes_)
    if (s == 0) throw DomainError("Mlp layer sizes must be positive");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw DomainError("leaky slope must lie in (0, 1)");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::glorot(std::vector<std::size_t> layer_sizes, double leaky_slope, Rng& rng) {
  Mlp net(std::move(layer_sizes), leaky_slope);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double fan_in = static_cast<double>(net.sizes_[l]);
    const double fan_out = static_cast<double>(net.sizes_[l + 1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto w = net.weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
  }
  return net;
}

Mlp::WeightView Mlp::weight(std::size_t layer) {
  return WeightView(params_.data() + offsets_[layer], static_cast<Eigen::Index>(sizes_[layer]),
                    static_cast<Eigen::Index>(sizes_[layer + 1]));
}

Mlp::ConstWeightView Mlp::weight(std::size_t layer) const {
  return ConstWeightView(params_.data() + offsets_[layer],
                         static_cast<Eigen::Index>(sizes_[layer]),
                         static_cast<Eigen::Index>(sizes_[layer + 1]));
}

Mlp::BiasView Mlp::bias(std::size_t layer) {
  return BiasView(params_.data() + offsets_[layer] + sizes_[layer] * sizes_[layer + 1],
                  static_cast<Eigen::Index>(sizes_[layer + 1]));
}

Mlp::ConstBiasView Mlp::bias(std::size_t layer) const {
  return ConstBiasView(params_.data() + offsets_[layer] + sizes_[layer] * sizes_[layer + 1],
                       static_cast<Eigen::Index>(sizes_[layer + 1]));
}

bool Mlp::all_finite() const {
  for (double p : params_)
    if (!std::isfinite(p)) return false;
  return true;
}

namespace {

// Pre- and post-activation buffers for every layer, row-major batch x width,
// plus the two buffers the backward sweep alternates between. One instance
// per thread is reused across calls so large batches do not fault in fresh
// pages on every pass.
struct Tape {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
  std::vector<double> grad;
  std::vector<double> below;
};

Tape& workspace() {
  thread_local Tape tape;
  return tape;
}

void check_input(const Mlp& net, const PointBatch& x) {
  if (static_cast<std::size_t>(x.cols()) != net.input_dim())
    throw DomainError("network input has " + std::to_string(x.cols()) + " columns, expected " +
                      std::to_string(net.input_dim()));
}

void run_forward(const Mlp& net, const PointBatch& x, const kernels::KernelTable& k,
                 Tape& tape) {
  const std::size_t batch = static_cast<std::size_t>(x.rows());
  const auto& sizes = net.layer_sizes();
  const std::size_t layers = net.layer_count();
  tape.pre.resize(layers);
  tape.post.resize(layers);
  const double* input = x.data();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    auto& pre = tape.pre[l];
    pre.resize(batch * out);
    k.gemm_nn(batch, out, in, input, net.weight(l).data(), pre.data(), false);
    if (l + 1 < layers) {
      auto& post = tape.post[l];
      post.resize(batch * out);
      k.bias_leaky_relu(batch, out, net.bias(l).data(), net.leaky_slope(), pre.data(),
                        post.data());
      input = post.data();
    } else {
      k.bias_leaky_relu(batch, out, net.bias(l).data(), 1.0, pre.data(), pre.data());
    }
  }
}

// Backpropagates tape.grad (batch x 1) from the head. Fills parameter
// gradients when `param_grads` is non-null; on return tape.grad holds the
// input gradients.
void run_backward(const Mlp& net, const PointBatch& x, Tape& tape, double* param_grads,
                  const kernels::KernelTable& k) {
  const std::size_t batch = static_cast<std::size_t>(x.rows());
  const auto& sizes = net.layer_sizes();
  std::vector<double>& grad = tape.grad;
  std::vector<double>& below = tape.below;
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* input = l == 0 ? x.data() : tape.post[l - 1].data();
    if (param_grads) {
      double* gw = param_grads + net.weight_offset(l);
      k.gemm_tn(in, out, batch, input, grad.data(), gw, false);
      k.column_sums(batch, out, grad.data(), gw + in * out, false);
    }
    below.resize(batch * in);
    k.gemm_nt(batch, in, out, grad.data(), net.weight(l).data(), below.data(), false);
    if (l > 0) k.leaky_relu_backward(batch * in, tape.pre[l - 1].data(), net.leaky_slope(),
                                     below.data());
    grad.swap(below);
  }
}

}  // namespace

double forward(const Mlp& net, const Vector& x) {
  PointBatch row = x.transpose();
  return forward_batch(net, row)(0);
}

Vector forward_batch(const Mlp& net, const PointBatch& x, const kernels::KernelTable& k) {
  check_input(net, x);
  Tape& tape = workspace();
  run_forward(net, x, k, tape);
  return Eigen::Map<const Vector>(tape.pre.back().data(), x.rows());
}

MlpGradients backward(const Mlp& net, const PointBatch& x, const Vector& upstream,
                      const kernels::KernelTable& k) {
  check_input(net, x);
  if (upstream.size() != x.rows())
    throw DomainError("upstream length must equal the batch size");
  Tape& tape = workspace();
  run_forward(net, x, k, tape);
  MlpGradients out;
  out.params.assign(net.parameters().size(), 0.0);
  tape.grad.assign(upstream.data(), upstream.data() + upstream.size());
  run_backward(net, x, tape, out.params.data(), k);
  out.inputs = Eigen::Map<const PointBatch>(tape.grad.data(), x.rows(), x.cols());
  return out;
}

void forward_with_input_grad(const Mlp& net, const PointBatch& x, Vector& out,
                             PointBatch& input_grads, const kernels::KernelTable& k) {
  check_input(net, x);
  Tape& tape = workspace();
  run_forward(net, x, k, tape);
  out = Eigen::Map<const Vector>(tape.pre.back().data(), x.rows());
  tape.grad.assign(static_cast<std::size_t>(x.rows()), 1.0);
  run_backward(net, x, tape, nullptr, k);
  input_grads = Eigen::Map<const PointBatch>(tape.grad.data(), x.rows(), x.cols());
}

OptState::OptState(OptimizerSettings settings, std::size_t parameter_count)
    : settings_(settings) {
  if (!(settings.lr >= 0.0)) throw DomainError("learning rate must be non-negative");
  if (settings.kind == OptimizerSettings::Kind::Adam) {
    if (!(settings.beta1 >= 0.0 && settings.beta1 < 1.0 && settings.beta2 >= 0.0 &&
          settings.beta2 < 1.0 && settings.eps > 0.0))
      throw DomainError("Adam needs beta1, beta2 in [0, 1) and eps > 0");
    m_.assign(parameter_count, 0.0);
    v_.assign(parameter_count, 0.0);
  }
}

void OptState::step(std::span<double> params, std::span<const double> grads,
                    const kernels::KernelTable& k) {
  if (params.size() != grads.size())
    throw DomainError("parameter and gradient sizes differ");
  ++steps_;
  if (settings_.kind == OptimizerSettings::Kind::Sgd) {
    k.axpy(params.size(), -settings_.lr, grads.data(), params.data());
    return;
  }
  if (params.size() != m_.size()) throw DomainError("optimizer state sized for another model");
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(settings_.beta1, t);
  const double bc2 = 1.0 - std::pow(settings_.beta2, t);
  k.adam_update(params.size(), params.data(), grads.data(), m_.data(), v_.data(), settings_.lr,
                settings_.beta1, settings_.beta2, settings_.eps, bc1, bc2);
}

double disc_update(Mlp& net, const RatioVariant& v, const PointBatch& real_batch,
                   const PointBatch& fake_batch, OptState& opt) {
  if (real_batch.rows() == 0 || fake_batch.rows() == 0)
    throw DomainError("disc_update needs nonempty batches");
  const Eigen::Index n_real = real_batch.rows();
  const Eigen::Index n_fake = fake_batch.rows();
  PointBatch both(n_real + n_fake, real_batch.cols());
  both << real_batch, fake_batch;

  check_input(net, both);
  Tape& tape = workspace();
  run_forward(net, both, kernels::active(), tape);
  const Eigen::Map<const Vector> d(tape.pre.back().data(), both.rows());
  std::vector<double>& upstream = tape.grad;
  upstream.resize(static_cast<std::size_t>(both.rows()));
  double objective = 0.0;
  for (Eigen::Index i = 0; i < n_real; ++i) {
    objective += v.phi(d(i)) / static_cast<double>(n_real);
    upstream[i] = -v.phi_prime(d(i)) / static_cast<double>(n_real);
  }
  for (Eigen::Index j = 0; j < n_fake; ++j) {
    const double dj = d(n_real + j);
    objective += v.psi(dj) / static_cast<double>(n_fake);
    upstream[n_real + j] = -v.psi_prime(dj) / static_cast<double>(n_fake);
  }
  std::vector<double> grads(net.parameters().size());
  run_backward(net, both, tape, grads.data(), kernels::active());
  opt.step(net.parameters(), grads);
  if (!net.all_finite()) throw NumericOverflow("discriminator parameters became non-finite");
  return objective;
}

}  // namespace monoflow
