#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "relkit/network.hpp"

namespace relkit {

/// Input-space relevance scores and what they decompose.
struct Heatmap {
  Tensor scores;
  /// Sum of scores (compensated summation).
  double total = 0.0;
  /// The quantity being decomposed: f(x) for LRP and simple Taylor,
  /// the squared gradient norm for sensitivity.
  double explained_value = 0.0;
  std::string method;
  /// Number of units whose relevance was absorbed by a zero denominator.
  std::size_t absorbed = 0;

  static Heatmap make(Tensor scores, double explained_value, std::string method, std::size_t absorbed = 0);

  /// explained_value - total; zero when the decomposition is conservative.
  double residual() const noexcept { return explained_value - total; }
};

/// Any explanation method applied to one input.
using Explainer = std::function<Heatmap(const Network&, const Tensor&)>;

// Propagation rules, one per layer.

/// R_j = sum_k (alpha a_j w+_jk / z+_k - beta a_j w-_jk / z-_k) R_k with
/// alpha - beta = 1, beta >= 0. Biases are not part of the denominators.
struct AlphaBeta {
  double alpha = 1.0;
  double beta = 0.0;
};
/// R_j = sum_k a_j w_jk / (z_k + eps sign(z_k)) R_k, z_k including the bias.
struct Epsilon {
  double epsilon = 1e-2;
};
/// First layer, unbounded real inputs: R_i = sum_j w_ij^2 / sum_i w_ij^2 R_j.
struct WSquare {};
/// First layer, inputs bounded by lower <= x <= upper with lower <= 0 <= upper.
struct ZB {
  Tensor lower;
  Tensor upper;
};
struct PoolProportional {};
struct PoolWinnerTakeAll {};
/// ReLU and Flatten: relevance passes unchanged to the layer input.
struct PassThrough {};

using LayerRule = std::variant<AlphaBeta, Epsilon, WSquare, ZB, PoolProportional, PoolWinnerTakeAll, PassThrough>;

enum class ExplainedOutput { Logit, LogProbability };

/// Domain of the network input, selecting the first-layer deep Taylor rule:
/// NonNegative -> z+ (alpha1beta0), Bounded -> ZB, Real -> w^2.
enum class InputDomain { Real, NonNegative, Bounded };

struct RuleConfig {
  std::vector<LayerRule> rules;
  /// Denominators with magnitude below this contribute no relevance.
  double stabilizer = 1e-9;
  ExplainedOutput explained_output = ExplainedOutput::Logit;

  /// z+ for Dense/Conv2D, proportional pooling, pass-through for ReLU and
  /// Flatten, and the first weighted layer chosen from `domain`. `lower` and
  /// `upper` (network input shape) are required for InputDomain::Bounded.
  static RuleConfig deep_taylor(const Network& network, InputDomain domain, const Tensor& lower = {},
                                const Tensor& upper = {});
  /// AlphaBeta(alpha, beta) on every Dense/Conv2D layer, proportional pooling.
  static RuleConfig alpha_beta(const Network& network, double alpha, double beta);
  static RuleConfig epsilon(const Network& network, double epsilon);
};

/// Relevance at every activation of the trace; relevance[i] is shaped like
/// activations[i], relevance[0] is the input heatmap.
struct RelevanceTrace {
  std::vector<Tensor> relevance;
  double explained_value = 0.0;
  std::size_t absorbed = 0;

  const Tensor& input_relevance() const { return relevance.front(); }
};

/// Squared partial derivatives of logit[class_index].
Heatmap sensitivity(const Network& network, const Tensor& input, std::size_t class_index);

/// gradient * input of logit[class_index]; explained_value is the logit.
Heatmap simple_taylor(const Network& network, const Tensor& input, std::size_t class_index);

/// Layer-wise relevance propagation of the selected output through `trace`.
/// Throws std::invalid_argument for a missing rule, a rule that does not fit
/// its layer kind, or a first-layer-only rule (ZB, WSquare) on a hidden layer.
RelevanceTrace lrp(const Network& network, const ActivationTrace& trace, std::size_t class_index,
                   const RuleConfig& config);

/// lrp() packaged as a Heatmap.
Heatmap explain_lrp(const Network& network, const Tensor& input, std::size_t class_index, const RuleConfig& config);

/// Runs lrp() but multiplies the relevance at activation `layer_index` by
/// `mask` before propagating further down.
Heatmap filter_relevance(const Network& network, const ActivationTrace& trace, std::size_t class_index,
                         const RuleConfig& config, std::size_t layer_index, const Tensor& mask);

// Single-layer rules on dense weights W (in x out).

Tensor lrp_dense_alphabeta(const Tensor& activations, const Tensor& weights, const Tensor& relevance, double alpha,
                           double beta, double stabilizer = 1e-9);

/// The z+ rule written as forward/backward passes of a positive-weight,
/// zero-bias clone of the layer.
Tensor lrp_dense_zplus(const Tensor& activations, const Tensor& weights, const Tensor& relevance,
                       double stabilizer = 1e-9);

Tensor lrp_dense_epsilon(const Tensor& activations, const Tensor& weights, const Tensor& bias,
                         const Tensor& relevance, double epsilon);

Tensor lrp_input_wsquare(const Tensor& weights, const Tensor& relevance, double stabilizer = 1e-9);

Tensor lrp_input_zb(const Tensor& input, const Tensor& weights, const Tensor& relevance, const Tensor& lower,
                    const Tensor& upper, double stabilizer = 1e-9);

enum class PoolPolicy { Proportional, WinnerTakeAll };

/// Redistributes relevance through a pooling layer. `argmax` is the
/// winner map recorded by forward() for MaxPool (may be empty otherwise).
Tensor lrp_pool(const LayerSpec& pool, const Tensor& pool_input, const std::vector<std::size_t>& argmax,
                const Tensor& relevance, PoolPolicy policy, double stabilizer = 1e-9);

}  // namespace relkit
