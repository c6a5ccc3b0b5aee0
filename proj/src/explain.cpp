#include "relkit/explain.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "relkit/errors.hpp"

namespace relkit {

namespace {

struct Propagated {
  Tensor relevance;
  std::size_t absorbed = 0;
};

bool usable(double denominator, double stabilizer) { return std::abs(denominator) >= stabilizer; }

// Divides relevance by denominators, zeroing entries whose denominator is
// unusable. Counts absorbed entries that carried relevance.
Tensor safe_divide(const Tensor& relevance, const Tensor& denominators, double stabilizer, std::size_t& absorbed) {
  Tensor s(relevance.shape());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (usable(denominators[k], stabilizer)) {
      s[k] = relevance[k] / denominators[k];
    } else if (relevance[k] != 0.0) {
      ++absorbed;
    }
  }
  return s;
}

void check_alpha_beta(double alpha, double beta) {
  if (beta < 0.0 || std::abs(alpha - beta - 1.0) > 1e-12) {
    throw std::invalid_argument("alpha-beta rule needs alpha - beta = 1 and beta >= 0, got alpha=" +
                                std::to_string(alpha) + " beta=" + std::to_string(beta));
  }
}

Propagated relprop_alphabeta(const LayerSpec& layer, const Tensor& a, const Tensor& relevance, double alpha,
                             double beta, double stabilizer) {
  check_alpha_beta(alpha, beta);
  const Tensor w_pos = positive_part(layer.weights);
  const Tensor z_pos = linear_forward(layer, a, w_pos, false);
  Propagated out;
  if (beta == 0.0) {
    Tensor s(relevance.shape());
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (usable(z_pos[k], stabilizer)) {
        s[k] = alpha * relevance[k] / z_pos[k];
      } else if (relevance[k] != 0.0) {
        ++out.absorbed;
      }
    }
    out.relevance = multiply(a, linear_transpose(layer, s, w_pos, a.shape()));
    return out;
  }

  const Tensor w_neg = negative_part(layer.weights);
  const Tensor z_neg = linear_forward(layer, a, w_neg, false);
  Tensor s_pos(relevance.shape());
  Tensor s_neg(relevance.shape());
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    const bool has_pos = usable(z_pos[k], stabilizer);
    const bool has_neg = usable(z_neg[k], stabilizer);
    if (has_pos && has_neg) {
      s_pos[k] = alpha * relevance[k] / z_pos[k];
      s_neg[k] = -beta * relevance[k] / z_neg[k];
    } else if (has_pos) {
      // no inhibitory input: the whole (alpha - beta) R_k goes the excitatory way
      s_pos[k] = (alpha - beta) * relevance[k] / z_pos[k];
    } else if (has_neg) {
      s_neg[k] = -beta * relevance[k] / z_neg[k];
      if (relevance[k] != 0.0) ++out.absorbed;
    } else if (relevance[k] != 0.0) {
      ++out.absorbed;
    }
  }
  Tensor c = linear_transpose(layer, s_pos, w_pos, a.shape());
  const Tensor c_neg = linear_transpose(layer, s_neg, w_neg, a.shape());
  for (std::size_t j = 0; j < c.size(); ++j) c[j] += c_neg[j];
  out.relevance = multiply(a, c);
  return out;
}

Propagated relprop_epsilon(const LayerSpec& layer, const Tensor& a, const Tensor& relevance, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon rule needs epsilon > 0");
  const Tensor z = linear_forward(layer, a, layer.weights, true);
  Tensor s(relevance.shape());
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double sign = z[k] >= 0.0 ? 1.0 : -1.0;
    s[k] = relevance[k] / (z[k] + epsilon * sign);
  }
  return {multiply(a, linear_transpose(layer, s, layer.weights, a.shape())), 0};
}

Propagated relprop_wsquare(const LayerSpec& layer, const Shape& input_shape, const Tensor& relevance,
                           double stabilizer) {
  const Tensor w_sq = multiply(layer.weights, layer.weights);
  const Tensor z = linear_forward(layer, Tensor(input_shape, 1.0), w_sq, false);
  Propagated out;
  const Tensor s = safe_divide(relevance, z, stabilizer, out.absorbed);
  out.relevance = linear_transpose(layer, s, w_sq, input_shape);
  return out;
}

Propagated relprop_zb(const LayerSpec& layer, const Tensor& x, const Tensor& relevance, const Tensor& lower,
                      const Tensor& upper, double stabilizer) {
  if (lower.size() != x.size() || upper.size() != x.size()) {
    throw ShapeError("ZB bounds have " + std::to_string(lower.size()) + "/" + std::to_string(upper.size()) +
                     " entries, layer input has " + std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] <= 0.0 && 0.0 <= upper[i])) {
      throw std::invalid_argument("ZB bounds must satisfy lower <= 0 <= upper at index " + std::to_string(i));
    }
  }
  const Tensor l = lower.reshaped(x.shape());
  const Tensor h = upper.reshaped(x.shape());
  const Tensor w_pos = positive_part(layer.weights);
  const Tensor w_neg = negative_part(layer.weights);
  Tensor z = linear_forward(layer, x, layer.weights, false);
  const Tensor z_low = linear_forward(layer, l, w_pos, false);
  const Tensor z_high = linear_forward(layer, h, w_neg, false);
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = z[k] - z_low[k] - z_high[k];

  Propagated out;
  const Tensor s = safe_divide(relevance, z, stabilizer, out.absorbed);
  const Tensor c = linear_transpose(layer, s, layer.weights, x.shape());
  const Tensor c_pos = linear_transpose(layer, s, w_pos, x.shape());
  const Tensor c_neg = linear_transpose(layer, s, w_neg, x.shape());
  out.relevance = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.relevance[i] = x[i] * c[i] - l[i] * c_pos[i] - h[i] * c_neg[i];
  }
  return out;
}

LayerSpec as_sum_pool(const LayerSpec& pool) {
  LayerSpec sum = pool;
  sum.kind = LayerKind::SumPool;
  return sum;
}

Propagated relprop_pool(const LayerSpec& pool, const Tensor& input, const std::vector<std::size_t>& argmax,
                        const Tensor& relevance, PoolPolicy policy, double stabilizer) {
  if (!pool.is_pool()) throw std::invalid_argument("pooling rule applied to a non-pooling layer");
  Propagated out;
  if (policy == PoolPolicy::WinnerTakeAll) {
    LayerSpec max = pool;
    max.kind = LayerKind::MaxPool;
    std::vector<std::size_t> winners = argmax;
    if (pool.kind != LayerKind::MaxPool || winners.size() != relevance.size()) forward_layer(max, input, &winners);
    out.relevance = backward_layer(max, input, winners, relevance);
    return out;
  }
  // proportional: z = sum-pool(x), s = R / z, R_j = x_j * sum-pool^T(s)
  const LayerSpec sum = as_sum_pool(pool);
  const Tensor z = forward_layer(sum, input);
  const Tensor s = safe_divide(relevance, z, stabilizer, out.absorbed);
  out.relevance = multiply(input, backward_layer(sum, input, {}, s));
  return out;
}

std::size_t first_weighted_layer(const Network& network) {
  for (std::size_t i = 0; i < network.layer_count(); ++i) {
    const LayerKind kind = network.layer(i).kind;
    if (kind == LayerKind::Flatten) continue;
    return network.layer(i).has_weights() ? i : ShapeError::kNoLayer;
  }
  return ShapeError::kNoLayer;
}

[[noreturn]] void rule_mismatch(std::size_t index, const LayerSpec& layer, const char* rule) {
  throw std::invalid_argument("layer " + std::to_string(index) + " (" + std::string(layer_kind_name(layer.kind)) +
                              "): rule " + rule + " does not apply");
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Propagated propagate_layer(const Network& network, std::size_t index, const ActivationTrace& trace,
                           const LayerRule& rule, const Tensor& relevance, double stabilizer) {
  const LayerSpec& layer = network.layer(index);
  const Tensor& a = trace.activations[index];
  const bool weighted = layer.has_weights();
  const bool first = index == first_weighted_layer(network);
  return std::visit(
      Overloaded{
          [&](const AlphaBeta& r) {
            if (!weighted) rule_mismatch(index, layer, "AlphaBeta");
            return relprop_alphabeta(layer, a, relevance, r.alpha, r.beta, stabilizer);
          },
          [&](const Epsilon& r) {
            if (!weighted) rule_mismatch(index, layer, "Epsilon");
            return relprop_epsilon(layer, a, relevance, r.epsilon);
          },
          [&](const WSquare&) {
            if (!weighted || !first) rule_mismatch(index, layer, "WSquare (first layer only)");
            return relprop_wsquare(layer, a.shape(), relevance, stabilizer);
          },
          [&](const ZB& r) {
            if (!weighted || !first) rule_mismatch(index, layer, "ZB (first layer only)");
            return relprop_zb(layer, a, relevance, r.lower, r.upper, stabilizer);
          },
          [&](const PoolProportional&) {
            if (!layer.is_pool()) rule_mismatch(index, layer, "PoolProportional");
            return relprop_pool(layer, a, trace.argmax[index], relevance, PoolPolicy::Proportional, stabilizer);
          },
          [&](const PoolWinnerTakeAll&) {
            if (!layer.is_pool()) rule_mismatch(index, layer, "PoolWinnerTakeAll");
            return relprop_pool(layer, a, trace.argmax[index], relevance, PoolPolicy::WinnerTakeAll, stabilizer);
          },
          [&](const PassThrough&) {
            if (layer.kind != LayerKind::ReLU && layer.kind != LayerKind::Flatten) {
              rule_mismatch(index, layer, "PassThrough");
            }
            return Propagated{relevance.reshaped(a.shape()), 0};
          },
      },
      rule);
}

struct Mask {
  std::size_t layer_index;
  const Tensor* values;
};

RelevanceTrace run_lrp(const Network& network, const ActivationTrace& trace, std::size_t class_index,
                       const RuleConfig& config, std::optional<Mask> mask) {
  if (class_index >= network.class_count()) {
    throw std::out_of_range("class index " + std::to_string(class_index) + " out of range");
  }
  if (config.rules.size() != network.layer_count()) {
    throw std::invalid_argument("rule config assigns " + std::to_string(config.rules.size()) + " rules to " +
                                std::to_string(network.layer_count()) + " layers");
  }
  if (trace.activations.size() != network.layer_count() + 1 || trace.argmax.size() != network.layer_count()) {
    throw std::invalid_argument("activation trace does not belong to this network");
  }
  for (std::size_t i = 0; i < trace.activations.size(); ++i) {
    if (trace.activations[i].shape() != network.shapes()[i]) {
      throw ShapeError("trace activation shape mismatch", i == 0 ? 0 : i - 1);
    }
  }
  if (mask && (mask->layer_index > network.layer_count() ||
               mask->values->shape() != network.shapes()[mask->layer_index])) {
    throw ShapeError("filter mask does not match the relevance at activation " + std::to_string(mask->layer_index));
  }

  RelevanceTrace out;
  out.relevance.resize(network.layer_count() + 1);
  const Tensor& logits = trace.logits();
  out.explained_value = config.explained_output == ExplainedOutput::Logit ? logits[class_index]
                                                                          : log_softmax(logits)[class_index];
  Tensor top(logits.shape());
  top[class_index] = out.explained_value;
  out.relevance.back() = std::move(top);

  auto apply_mask = [&](std::size_t i) {
    if (mask && mask->layer_index == i) out.relevance[i] = multiply(out.relevance[i], *mask->values);
  };
  apply_mask(network.layer_count());
  for (std::size_t i = network.layer_count(); i-- > 0;) {
    Propagated p = propagate_layer(network, i, trace, config.rules[i], out.relevance[i + 1], config.stabilizer);
    out.absorbed += p.absorbed;
    out.relevance[i] = std::move(p.relevance);
    apply_mask(i);
  }
  return out;
}

std::string lrp_tag(const RuleConfig& config) {
  return config.explained_output == ExplainedOutput::Logit ? "lrp" : "lrp-logprob";
}

}  // namespace

Heatmap Heatmap::make(Tensor scores, double explained_value, std::string method, std::size_t absorbed) {
  Heatmap h;
  h.total = compensated_sum(scores.values());
  h.scores = std::move(scores);
  h.explained_value = explained_value;
  h.method = std::move(method);
  h.absorbed = absorbed;
  return h;
}

RuleConfig RuleConfig::deep_taylor(const Network& network, InputDomain domain, const Tensor& lower,
                                   const Tensor& upper) {
  RuleConfig config = alpha_beta(network, 1.0, 0.0);
  const std::size_t first = first_weighted_layer(network);
  if (first == ShapeError::kNoLayer) return config;
  switch (domain) {
    case InputDomain::NonNegative:
      break;
    case InputDomain::Real:
      config.rules[first] = WSquare{};
      break;
    case InputDomain::Bounded:
      if (lower.size() != element_count(network.input_shape()) ||
          upper.size() != element_count(network.input_shape())) {
        throw ShapeError("deep Taylor bounds must match the network input");
      }
      config.rules[first] = ZB{lower, upper};
      break;
  }
  return config;
}

RuleConfig RuleConfig::alpha_beta(const Network& network, double alpha, double beta) {
  check_alpha_beta(alpha, beta);
  RuleConfig config;
  for (const LayerSpec& layer : network.layers()) {
    if (layer.has_weights()) {
      config.rules.emplace_back(AlphaBeta{alpha, beta});
    } else if (layer.is_pool()) {
      config.rules.emplace_back(PoolProportional{});
    } else {
      config.rules.emplace_back(PassThrough{});
    }
  }
  return config;
}

RuleConfig RuleConfig::epsilon(const Network& network, double epsilon) {
  RuleConfig config = alpha_beta(network, 1.0, 0.0);
  for (std::size_t i = 0; i < network.layer_count(); ++i) {
    if (network.layer(i).has_weights()) config.rules[i] = Epsilon{epsilon};
  }
  return config;
}

Heatmap sensitivity(const Network& network, const Tensor& input, std::size_t class_index) {
  const Tensor grad = gradient(network, input, class_index);
  Tensor scores = multiply(grad, grad);
  const double norm_sq = compensated_sum(scores.values());
  return Heatmap::make(std::move(scores), norm_sq, "sensitivity");
}

Heatmap simple_taylor(const Network& network, const Tensor& input, std::size_t class_index) {
  const ActivationTrace trace = forward(network, input);
  const Tensor grad = gradient(network, trace, class_index);
  return Heatmap::make(multiply(grad, input), trace.logits()[class_index], "taylor");
}

RelevanceTrace lrp(const Network& network, const ActivationTrace& trace, std::size_t class_index,
                   const RuleConfig& config) {
  return run_lrp(network, trace, class_index, config, std::nullopt);
}

Heatmap explain_lrp(const Network& network, const Tensor& input, std::size_t class_index, const RuleConfig& config) {
  RelevanceTrace r = lrp(network, forward(network, input), class_index, config);
  return Heatmap::make(std::move(r.relevance.front()), r.explained_value, lrp_tag(config), r.absorbed);
}

Heatmap filter_relevance(const Network& network, const ActivationTrace& trace, std::size_t class_index,
                         const RuleConfig& config, std::size_t layer_index, const Tensor& mask) {
  RelevanceTrace r = run_lrp(network, trace, class_index, config, Mask{layer_index, &mask});
  const double masked_total = compensated_sum(r.relevance[layer_index].values());
  return Heatmap::make(std::move(r.relevance.front()), masked_total, lrp_tag(config) + "-filtered", r.absorbed);
}

namespace {

LayerSpec dense_view(const Tensor& weights) {
  if (weights.rank() != 2) throw ShapeError("dense weights must be (in x out)");
  return LayerSpec::dense(weights, Tensor({weights.shape()[1]}));
}

void check_dense_shapes(const Tensor& a, const Tensor& weights, const Tensor& relevance) {
  if (weights.rank() != 2 || a.size() != weights.shape()[0] || relevance.size() != weights.shape()[1]) {
    throw ShapeError("dense rule: activations " + shape_to_string(a.shape()) + ", weights " +
                     shape_to_string(weights.shape()) + ", relevance " + shape_to_string(relevance.shape()));
  }
}

}  // namespace

Tensor lrp_dense_alphabeta(const Tensor& activations, const Tensor& weights, const Tensor& relevance, double alpha,
                           double beta, double stabilizer) {
  check_dense_shapes(activations, weights, relevance);
  return relprop_alphabeta(dense_view(weights), activations, relevance, alpha, beta, stabilizer).relevance;
}

Tensor lrp_dense_zplus(const Tensor& activations, const Tensor& weights, const Tensor& relevance,
                       double stabilizer) {
  check_dense_shapes(activations, weights, relevance);
  // clone with W = max(0, W), B = 0
  const LayerSpec clone = LayerSpec::dense(positive_part(weights), Tensor({weights.shape()[1]}));
  const Tensor z = forward_layer(clone, activations);
  Tensor s(relevance.shape());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (usable(z[k], stabilizer)) s[k] = relevance[k] / z[k];
  }
  const Tensor c = backward_layer(clone, activations, {}, s);
  return multiply(activations, c);
}

Tensor lrp_dense_epsilon(const Tensor& activations, const Tensor& weights, const Tensor& bias,
                         const Tensor& relevance, double epsilon) {
  check_dense_shapes(activations, weights, relevance);
  if (bias.size() != weights.shape()[1]) throw ShapeError("epsilon rule: bias size mismatch");
  return relprop_epsilon(LayerSpec::dense(weights, bias.reshaped({bias.size()})), activations, relevance, epsilon)
      .relevance;
}

Tensor lrp_input_wsquare(const Tensor& weights, const Tensor& relevance, double stabilizer) {
  const LayerSpec view = dense_view(weights);
  if (relevance.size() != weights.shape()[1]) throw ShapeError("w^2 rule: relevance size mismatch");
  return relprop_wsquare(view, {weights.shape()[0]}, relevance, stabilizer).relevance;
}

Tensor lrp_input_zb(const Tensor& input, const Tensor& weights, const Tensor& relevance, const Tensor& lower,
                    const Tensor& upper, double stabilizer) {
  check_dense_shapes(input, weights, relevance);
  return relprop_zb(dense_view(weights), input, relevance, lower, upper, stabilizer).relevance;
}

Tensor lrp_pool(const LayerSpec& pool, const Tensor& pool_input, const std::vector<std::size_t>& argmax,
                const Tensor& relevance, PoolPolicy policy, double stabilizer) {
  return relprop_pool(pool, pool_input, argmax, relevance, policy, stabilizer).relevance;
}

}  // namespace relkit
