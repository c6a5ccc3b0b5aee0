#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "relkit/network.hpp"

namespace relkit {

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return inputs.size(); }
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  /// Clamp every bias to <= 0 after each update.
  bool nonpositive_bias = false;
};

/// Plain minibatch SGD on the mean cross-entropy of log_softmax(logits).
/// Deterministic for a given seed.
Network train_sgd(const Network& network, const Dataset& data, const TrainConfig& config);

/// Builds a network from a comma-separated layer list and initializes it with
/// He-normal weights and zero biases. Items:
///   dense:N  conv:C:K[:stride[:pad]]  relu  flatten
///   sumpool:K[:stride]  avgpool:K[:stride]  maxpool:K[:stride]
/// The last item must produce `class_count` outputs.
Network build_network(const Shape& input_shape, std::string_view architecture, std::size_t class_count,
                      std::uint64_t seed);

std::size_t predict(const Network& network, const Tensor& input);
double accuracy(const Network& network, const Dataset& data);

}  // namespace relkit
