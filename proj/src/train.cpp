#include "relkit/train.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "relkit/errors.hpp"
#include "relkit/kernels.hpp"
#include "relkit/rng.hpp"

namespace relkit {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::size_t parse_count(std::string_view token, std::string_view item) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw std::invalid_argument("bad number '" + std::string(token) + "' in layer '" + std::string(item) + "'");
  }
  return value;
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

}  // namespace

Network build_network(const Shape& input_shape, std::string_view architecture, std::size_t class_count,
                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LayerSpec> layers;
  Shape shape = input_shape;
  for (std::string_view item : split(architecture, ',')) {
    const auto fields = split(item, ':');
    const std::string_view name = fields[0];
    auto arg = [&](std::size_t i, std::size_t fallback) {
      return i < fields.size() ? parse_count(fields[i], item) : fallback;
    };
    LayerSpec layer;
    if (name == "dense") {
      if (fields.size() != 2) throw std::invalid_argument("dense takes one argument: dense:N");
      if (shape.size() != 1) throw ShapeError("dense needs a flat input; insert 'flatten'", layers.size());
      const std::size_t out = arg(1, 0);
      layer = LayerSpec::dense(he_normal({shape[0], out}, shape[0], rng), Tensor({out}));
    } else if (name == "conv") {
      if (fields.size() < 3 || fields.size() > 5) throw std::invalid_argument("conv takes conv:C:K[:stride[:pad]]");
      if (shape.size() != 3) throw ShapeError("conv needs a (C,H,W) input", layers.size());
      const std::size_t out = arg(1, 0), k = arg(2, 0);
      layer = LayerSpec::conv2d(he_normal({out, shape[0], k, k}, shape[0] * k * k, rng), Tensor({out}), arg(3, 1),
                                arg(4, 0));
    } else if (name == "relu") {
      layer = LayerSpec::relu();
    } else if (name == "flatten") {
      layer = LayerSpec::flatten();
    } else if (name == "sumpool") {
      layer = LayerSpec::sum_pool(arg(1, 2), arg(2, 0));
    } else if (name == "avgpool") {
      layer = LayerSpec::avg_pool(arg(1, 2), arg(2, 0));
    } else if (name == "maxpool") {
      layer = LayerSpec::max_pool(arg(1, 2), arg(2, 0));
    } else {
      throw std::invalid_argument("unknown layer '" + std::string(item) + "' in architecture");
    }
    shape = layer_output_shape(layer, shape, layers.size());
    layers.push_back(std::move(layer));
  }
  return Network(input_shape, std::move(layers), class_count);
}

Network train_sgd(const Network& network, const Dataset& data, const TrainConfig& config) {
  if (data.size() == 0) throw std::invalid_argument("train_sgd: empty dataset");
  if (data.labels.size() != data.inputs.size()) throw std::invalid_argument("train_sgd: label count mismatch");
  if (config.batch_size == 0) throw std::invalid_argument("train_sgd: batch size must be positive");
  for (std::size_t label : data.labels) {
    if (label >= network.class_count()) throw std::invalid_argument("train_sgd: label out of range");
  }

  std::vector<LayerSpec> layers = network.layers();
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  const auto& k = kernels::active();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const Network current(network.input_shape(), layers, network.class_count());
      std::vector<ParamGrad> total;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        const ActivationTrace trace = forward(current, data.inputs[idx]);
        // d(-log p_y)/d logits = softmax - onehot(y)
        Tensor seed = softmax(trace.logits());
        seed[data.labels[idx]] -= 1.0;
        std::vector<ParamGrad> grads;
        backward(current, trace, seed, &grads);
        if (total.empty()) {
          total = std::move(grads);
          continue;
        }
        for (std::size_t l = 0; l < layers.size(); ++l) {
          if (!layers[l].has_weights()) continue;
          k.axpy(1.0, grads[l].weights.data(), total[l].weights.data(), total[l].weights.size());
          k.axpy(1.0, grads[l].bias.data(), total[l].bias.data(), total[l].bias.size());
        }
      }
      const double step = -config.learning_rate / static_cast<double>(stop - start);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!layers[l].has_weights()) continue;
        k.axpy(step, total[l].weights.data(), layers[l].weights.data(), layers[l].weights.size());
        k.axpy(step, total[l].bias.data(), layers[l].bias.data(), layers[l].bias.size());
        if (config.nonpositive_bias) {
          for (double& b : layers[l].bias.values()) b = std::min(b, 0.0);
        }
      }
    }
  }
  return Network(network.input_shape(), std::move(layers), network.class_count());
}

std::size_t predict(const Network& network, const Tensor& input) {
  return argmax_index(forward(network, input).logits());
}

double accuracy(const Network& network, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict(network, data.inputs[i]) == data.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace relkit
