#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "relkit/network.hpp"

namespace relkit {

/// Gaussian-RBM data density used as an expert prior:
///   log p(x) = sum_j softplus(w_j . x + b_j) - 1/2 x^T P x + const
/// with factor weights w_j (rows of a factors x dim tensor), factor biases b_j
/// and a symmetric positive definite precision matrix P.
class RbmExpert {
 public:
  /// Throws std::invalid_argument if P is not symmetric (1e-12) or its
  /// Cholesky factorization fails.
  RbmExpert(Tensor factor_weights, Tensor factor_biases, Tensor precision);

  const Tensor& factor_weights() const noexcept { return weights_; }
  const Tensor& factor_biases() const noexcept { return biases_; }
  const Tensor& precision() const noexcept { return precision_; }
  std::size_t dimension() const noexcept { return precision_.shape()[0]; }
  std::size_t factor_count() const noexcept { return biases_.size(); }

  friend bool operator==(const RbmExpert&, const RbmExpert&) = default;

 private:
  Tensor weights_;
  Tensor biases_;
  Tensor precision_;
};

/// Unnormalized log-density and its gradient with respect to x (any shape
/// with `dimension()` elements; the gradient has x's shape).
std::pair<double, Tensor> rbm_log_density(const RbmExpert& expert, const Tensor& x);

struct NoRegularizer {};
/// -lambda ||x||^2
struct L2 {
  double lambda = 0.0;
};
/// -lambda ||x - mean||^2
struct L2Mean {
  double lambda = 0.0;
  Tensor mean;
};
/// + log p_expert(x)
struct ExpertPrior {
  RbmExpert expert;
};

using AmRegularizer = std::variant<NoRegularizer, L2, L2Mean, ExpertPrior>;

/// -eta ||x - anchor||^2
struct Localization {
  double eta = 0.0;
  Tensor anchor;
};

/// Maximized quantity: log p(class | x) + regularizer + localization.
struct AmObjective {
  std::size_t class_index = 0;
  AmRegularizer regularizer = NoRegularizer{};
  std::optional<Localization> localization;
};

struct AmOptions {
  double step_size = 0.1;
  std::size_t max_iterations = 1000;
  double gradient_tolerance = 1e-6;
  /// Starting point; empty selects the L2Mean mean if present, else zeros.
  Tensor init;
  /// Gaussian jitter added to the starting point, drawn from `seed`.
  double init_noise = 0.0;
  std::uint64_t seed = 0;
  /// Post-processing clamp of the returned prototype.
  std::optional<std::pair<double, double>> clip;
};

struct AmResult {
  Tensor prototype;
  /// Objective at the start point and after every accepted step.
  std::vector<double> trajectory;
  double class_probability = 0.0;
  std::size_t iterations = 0;
};

struct ObjectiveValue {
  double value = 0.0;
  Tensor gradient;
};

ObjectiveValue evaluate_objective(const Network& network, const AmObjective& objective, const Tensor& x);

/// Gradient ascent with step halving: a step that would lower the objective
/// is retried at half the step size (and the smaller size is kept), so the
/// recorded trajectory never decreases. Stops after max_iterations accepted
/// steps, when the gradient norm drops below tolerance, or when 64
/// consecutive halvings fail to find an ascent step.
AmResult activation_maximize(const Network& network, const AmObjective& objective, const AmOptions& options);

}  // namespace relkit
