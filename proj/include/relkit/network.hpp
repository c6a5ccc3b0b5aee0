#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "relkit/tensor.hpp"

namespace relkit {

enum class LayerKind { Dense, Conv2D, ReLU, SumPool, AvgPool, MaxPool, Flatten };

std::string_view layer_kind_name(LayerKind kind);
/// Inverse of layer_kind_name; nullopt for unknown names.
std::optional<LayerKind> parse_layer_kind(std::string_view name);

/// One layer and its parameters.
///
/// Dense: weights (in x out), bias (out), input must be 1-D.
/// Conv2D: weights (out_ch x in_ch x kh x kw), bias (out_ch), input (C,H,W),
///   explicit zero padding.
/// Pools: window (kh, kw) and stride over (C,H,W) inputs; no padding.
/// Output extent along a spatial axis is floor((in + 2*pad - k) / stride) + 1.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  Tensor weights;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::array<std::size_t, 2> window{1, 1};

  static LayerSpec dense(Tensor weights, Tensor bias);
  static LayerSpec conv2d(Tensor weights, Tensor bias, std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec sum_pool(std::size_t size, std::size_t stride = 0);
  static LayerSpec avg_pool(std::size_t size, std::size_t stride = 0);
  static LayerSpec max_pool(std::size_t size, std::size_t stride = 0);

  bool has_weights() const noexcept { return kind == LayerKind::Dense || kind == LayerKind::Conv2D; }
  bool is_pool() const noexcept {
    return kind == LayerKind::SumPool || kind == LayerKind::AvgPool || kind == LayerKind::MaxPool;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Output shape of `layer` applied to `input`; throws ShapeError naming
/// `index` when they do not compose.
Shape layer_output_shape(const LayerSpec& layer, const Shape& input, std::size_t index);

/// Validated, immutable layer stack whose final output is a vector of
/// class_count logits.
class Network {
 public:
  Network(Shape input_shape, std::vector<LayerSpec> layers, std::size_t class_count);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::size_t class_count() const noexcept { return class_count_; }

  /// shapes()[0] is the input shape, shapes()[i + 1] the output of layer i.
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }

  friend bool operator==(const Network& a, const Network& b) {
    return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_ && a.class_count_ == b.class_count_;
  }

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::size_t class_count_;
  std::vector<Shape> shapes_;
};

/// Activations of one forward pass. activations[0] is the input,
/// activations[i + 1] the output of layer i; the last entry holds the logits.
/// argmax[i] is filled for MaxPool layers only and maps each pooled output to
/// the linear index of its winning input.
struct ActivationTrace {
  std::vector<Tensor> activations;
  std::vector<std::vector<std::size_t>> argmax;

  const Tensor& input() const { return activations.front(); }
  const Tensor& logits() const { return activations.back(); }

  friend bool operator==(const ActivationTrace&, const ActivationTrace&) = default;
};

/// Applies a single layer. `argmax` receives the winner map for MaxPool.
Tensor forward_layer(const LayerSpec& layer, const Tensor& input, std::vector<std::size_t>* argmax = nullptr);

ActivationTrace forward(const Network& network, const Tensor& input);

/// Numerically stable log-softmax of a 1-D logit vector.
Tensor log_softmax(const Tensor& logits);
Tensor softmax(const Tensor& logits);

struct ParamGrad {
  Tensor weights;
  Tensor bias;
};

/// Vector-Jacobian product of one layer. `param_grad`, if given, receives the
/// weight and bias gradients of Dense/Conv2D layers. ReLU'(0) is taken as 0.
Tensor backward_layer(const LayerSpec& layer, const Tensor& input, const std::vector<std::size_t>& argmax,
                      const Tensor& grad_output, ParamGrad* param_grad = nullptr);

/// Pulls `output_grad` (shaped like the logits) back to the input.
Tensor backward(const Network& network, const ActivationTrace& trace, const Tensor& output_grad,
                std::vector<ParamGrad>* param_grads = nullptr);

/// d logit[class_index] / d input.
Tensor gradient(const Network& network, const Tensor& input, std::size_t class_index);
Tensor gradient(const Network& network, const ActivationTrace& trace, std::size_t class_index);

/// Linear part of a Dense/Conv2D layer evaluated with substitute weights
/// (same shape as the layer's own), optionally adding the layer's bias.
Tensor linear_forward(const LayerSpec& layer, const Tensor& input, const Tensor& weights, bool with_bias);

/// Transpose of linear_forward (without bias) applied to `output_values`.
Tensor linear_transpose(const LayerSpec& layer, const Tensor& output_values, const Tensor& weights,
                        const Shape& input_shape);

std::size_t argmax_index(const Tensor& values);

}  // namespace relkit
