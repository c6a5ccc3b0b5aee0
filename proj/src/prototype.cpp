#include "relkit/prototype.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "relkit/errors.hpp"
#include "relkit/kernels.hpp"
#include "relkit/rng.hpp"

namespace relkit {

namespace {

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

constexpr int kMaxHalvings = 64;

void check_finite_params(double value, const char* what) {
  if (!(value >= 0.0) || !std::isfinite(value)) throw std::invalid_argument(std::string(what) + " must be >= 0");
}

}  // namespace

RbmExpert::RbmExpert(Tensor factor_weights, Tensor factor_biases, Tensor precision)
    : weights_(std::move(factor_weights)), biases_(std::move(factor_biases)), precision_(std::move(precision)) {
  if (precision_.rank() != 2 || precision_.shape()[0] != precision_.shape()[1]) {
    throw ShapeError("expert precision must be a square matrix");
  }
  const std::size_t d = precision_.shape()[0];
  if (biases_.empty()) {
    // no factors: pure Gaussian
    weights_ = Tensor();
  } else {
    if (biases_.rank() != 1) throw ShapeError("expert factor biases must be a vector");
    if (weights_.rank() != 2 || weights_.shape()[0] != biases_.size() || weights_.shape()[1] != d) {
      throw ShapeError("expert factor weights must be (factors x " + std::to_string(d) + ")");
    }
  }
  Eigen::MatrixXd p(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      p(i, j) = precision_[i * d + j];
      if (std::abs(precision_[i * d + j] - precision_[j * d + i]) > 1e-12) {
        throw std::invalid_argument("expert precision matrix is not symmetric");
      }
    }
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(p);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("expert precision matrix is not positive definite");
}

std::pair<double, Tensor> rbm_log_density(const RbmExpert& expert, const Tensor& x) {
  const std::size_t d = expert.dimension();
  if (x.size() != d) throw ShapeError("expert expects " + std::to_string(d) + " inputs, got " + std::to_string(x.size()));
  const auto& k = kernels::active();
  const Tensor& p = expert.precision();
  Tensor grad(x.shape());
  double value = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double px = k.dot(p.data() + i * d, x.data(), d);
    value -= 0.5 * x[i] * px;
    grad[i] = -px;
  }
  for (std::size_t j = 0; j < expert.factor_count(); ++j) {
    const double* w = expert.factor_weights().data() + j * d;
    const double t = k.dot(w, x.data(), d) + expert.factor_biases()[j];
    value += softplus(t);
    k.axpy(sigmoid(t), w, grad.data(), d);
  }
  return {value, std::move(grad)};
}

ObjectiveValue evaluate_objective(const Network& network, const AmObjective& objective, const Tensor& x) {
  if (objective.class_index >= network.class_count()) throw std::out_of_range("AM class index out of range");
  const ActivationTrace trace = forward(network, x);
  const Tensor log_p = log_softmax(trace.logits());
  ObjectiveValue out;
  out.value = log_p[objective.class_index];
  // d log p_c / d logits = onehot(c) - softmax
  Tensor seed(log_p.shape());
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = -std::exp(log_p[i]);
  seed[objective.class_index] += 1.0;
  out.gradient = backward(network, trace, seed);

  const auto& k = kernels::active();
  auto pull_towards = [&](double weight, const Tensor* anchor) {
    // value -= weight ||x - anchor||^2, gradient -= 2 weight (x - anchor)
    Tensor diff = anchor != nullptr ? subtract(x, anchor->reshaped(x.shape())) : x;
    out.value -= weight * k.dot(diff.data(), diff.data(), diff.size());
    k.axpy(-2.0 * weight, diff.data(), out.gradient.data(), diff.size());
  };

  std::visit(
      [&](const auto& reg) {
        using T = std::decay_t<decltype(reg)>;
        if constexpr (std::is_same_v<T, L2>) {
          check_finite_params(reg.lambda, "lambda");
          pull_towards(reg.lambda, nullptr);
        } else if constexpr (std::is_same_v<T, L2Mean>) {
          check_finite_params(reg.lambda, "lambda");
          if (reg.mean.size() != x.size()) throw ShapeError("L2Mean mean does not match the input");
          pull_towards(reg.lambda, &reg.mean);
        } else if constexpr (std::is_same_v<T, ExpertPrior>) {
          auto [value, grad] = rbm_log_density(reg.expert, x);
          out.value += value;
          k.axpy(1.0, grad.data(), out.gradient.data(), grad.size());
        }
      },
      objective.regularizer);

  if (objective.localization) {
    check_finite_params(objective.localization->eta, "eta");
    if (objective.localization->anchor.size() != x.size()) throw ShapeError("localization anchor does not match the input");
    pull_towards(objective.localization->eta, &objective.localization->anchor);
  }
  return out;
}

AmResult activation_maximize(const Network& network, const AmObjective& objective, const AmOptions& options) {
  Tensor x;
  if (!options.init.empty()) {
    if (options.init.shape() != network.input_shape()) {
      throw ShapeError("AM init shape " + shape_to_string(options.init.shape()) + " does not match network input " +
                       shape_to_string(network.input_shape()));
    }
    x = options.init;
  } else if (const auto* mean = std::get_if<L2Mean>(&objective.regularizer); mean != nullptr && !mean->mean.empty()) {
    x = mean->mean.reshaped(network.input_shape());
  } else {
    x = Tensor(network.input_shape());
  }
  if (options.init_noise > 0.0) {
    Rng rng(options.seed);
    for (double& v : x.values()) v += options.init_noise * rng.normal();
  }
  if (!(options.step_size > 0.0)) throw std::invalid_argument("AM step size must be positive");

  ObjectiveValue current = evaluate_objective(network, objective, x);
  if (!std::isfinite(current.value) || !current.gradient.all_finite()) {
    throw std::domain_error("AM objective is not finite at the starting point");
  }

  AmResult result;
  result.trajectory.push_back(current.value);
  double step = options.step_size;
  while (result.iterations < options.max_iterations) {
    if (l2_norm(current.gradient) < options.gradient_tolerance) break;
    bool accepted = false;
    for (int halving = 0; halving < kMaxHalvings; ++halving) {
      Tensor candidate = x;
      kernels::active().axpy(step, current.gradient.data(), candidate.data(), candidate.size());
      if (candidate.all_finite()) {
        ObjectiveValue next = evaluate_objective(network, objective, candidate);
        if (std::isfinite(next.value) && next.value >= current.value && next.gradient.all_finite()) {
          x = std::move(candidate);
          current = std::move(next);
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    result.trajectory.push_back(current.value);
    ++result.iterations;
  }

  if (options.clip) {
    const auto [lo, hi] = *options.clip;
    for (double& v : x.values()) v = std::clamp(v, lo, hi);
  }
  result.class_probability = softmax(forward(network, x).logits())[objective.class_index];
  result.prototype = std::move(x);
  return result;
}

}  // namespace relkit
