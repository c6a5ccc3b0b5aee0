#include "relkit/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "relkit/errors.hpp"
#include "relkit/kernels.hpp"

namespace relkit {

namespace {

constexpr std::array<std::string_view, 7> kKindNames{"Dense",   "Conv2D",  "ReLU",   "SumPool",
                                                     "AvgPool", "MaxPool", "Flatten"};

std::size_t pooled_extent(std::size_t in, std::size_t pad, std::size_t k, std::size_t stride, std::size_t layer,
                          const char* axis) {
  if (in + 2 * pad < k) {
    throw ShapeError(std::string("window larger than padded input along ") + axis, layer);
  }
  return (in + 2 * pad - k) / stride + 1;
}

// Range of output positions o in [0, out_extent) whose input coordinate
// o * stride + k - pad lands inside [0, in_extent).
struct Span {
  std::size_t first;
  std::size_t last;  // exclusive
};

Span valid_outputs(std::size_t in_extent, std::size_t out_extent, std::size_t k, std::size_t stride,
                   std::size_t pad) {
  std::size_t first = 0;
  if (pad > k) first = (pad - k + stride - 1) / stride;
  // largest o with o * stride + k - pad <= in_extent - 1
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in_extent) - 1 + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(k);
  if (top < 0) return {0, 0};
  const std::size_t last = std::min(out_extent, static_cast<std::size_t>(top) / stride + 1);
  return {first, std::max(first, last)};
}

struct ConvGeometry {
  std::size_t in_ch, in_h, in_w;
  std::size_t out_ch, k_h, k_w;
  std::size_t out_h, out_w;
  std::size_t stride, pad;
};

ConvGeometry conv_geometry(const LayerSpec& layer, const Shape& in) {
  const Shape& ws = layer.weights.shape();
  ConvGeometry g{};
  g.in_ch = in[0];
  g.in_h = in[1];
  g.in_w = in[2];
  g.out_ch = ws[0];
  g.k_h = ws[2];
  g.k_w = ws[3];
  g.stride = layer.stride;
  g.pad = layer.padding;
  g.out_h = (g.in_h + 2 * g.pad - g.k_h) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.k_w) / g.stride + 1;
  return g;
}

// Visits every (weight, input row, output row) triple of a convolution with
// the contiguous column range they share. fn(w_index, in_offset, out_offset,
// count) where offsets point at the first valid element of each row.
template <typename Fn>
void for_each_conv_row(const ConvGeometry& g, Fn&& fn) {
  for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
    for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        const Span rows = valid_outputs(g.in_h, g.out_h, ky, g.stride, g.pad);
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          const Span cols = valid_outputs(g.in_w, g.out_w, kx, g.stride, g.pad);
          if (cols.first >= cols.last) continue;
          const std::size_t w_index = ((oc * g.in_ch + ic) * g.k_h + ky) * g.k_w + kx;
          for (std::size_t oy = rows.first; oy < rows.last; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad;
            const std::size_t ix = cols.first * g.stride + kx - g.pad;
            fn(w_index, (ic * g.in_h + iy) * g.in_w + ix, (oc * g.out_h + oy) * g.out_w + cols.first,
               cols.last - cols.first);
          }
        }
      }
    }
  }
}

Tensor conv_forward(const LayerSpec& layer, const Tensor& input, const Tensor& weights, bool with_bias) {
  const ConvGeometry g = conv_geometry(layer, input.shape());
  Tensor out({g.out_ch, g.out_h, g.out_w});
  if (with_bias) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
      std::fill_n(out.data() + oc * plane, plane, layer.bias[oc]);
    }
  }
  const auto& k = kernels::active();
  const double* in = input.data();
  double* o = out.data();
  const std::size_t stride = g.stride;
  for_each_conv_row(g, [&](std::size_t w, std::size_t in_off, std::size_t out_off, std::size_t count) {
    const double wv = weights[w];
    if (stride == 1) {
      k.axpy(wv, in + in_off, o + out_off, count);
    } else {
      for (std::size_t c = 0; c < count; ++c) o[out_off + c] += wv * in[in_off + c * stride];
    }
  });
  return out;
}

Tensor conv_transpose(const LayerSpec& layer, const Tensor& values, const Tensor& weights, const Shape& in_shape) {
  const ConvGeometry g = conv_geometry(layer, in_shape);
  Tensor out(in_shape);
  const auto& k = kernels::active();
  const double* v = values.data();
  double* o = out.data();
  const std::size_t stride = g.stride;
  for_each_conv_row(g, [&](std::size_t w, std::size_t in_off, std::size_t out_off, std::size_t count) {
    const double wv = weights[w];
    if (stride == 1) {
      k.axpy(wv, v + out_off, o + in_off, count);
    } else {
      for (std::size_t c = 0; c < count; ++c) o[in_off + c * stride] += wv * v[out_off + c];
    }
  });
  return out;
}

Tensor conv_weight_grad(const LayerSpec& layer, const Tensor& input, const Tensor& grad_out) {
  const ConvGeometry g = conv_geometry(layer, input.shape());
  Tensor gw(layer.weights.shape());
  const auto& k = kernels::active();
  const double* in = input.data();
  const double* go = grad_out.data();
  const std::size_t stride = g.stride;
  for_each_conv_row(g, [&](std::size_t w, std::size_t in_off, std::size_t out_off, std::size_t count) {
    if (stride == 1) {
      gw[w] += k.dot(in + in_off, go + out_off, count);
    } else {
      double acc = 0.0;
      for (std::size_t c = 0; c < count; ++c) acc += in[in_off + c * stride] * go[out_off + c];
      gw[w] += acc;
    }
  });
  return gw;
}

Tensor dense_forward(const LayerSpec& layer, const Tensor& input, const Tensor& weights, bool with_bias) {
  const std::size_t n_in = weights.shape()[0];
  const std::size_t n_out = weights.shape()[1];
  Tensor out = with_bias ? layer.bias : Tensor({n_out});
  const auto& k = kernels::active();
  for (std::size_t j = 0; j < n_in; ++j) {
    const double a = input[j];
    if (a != 0.0) k.axpy(a, weights.data() + j * n_out, out.data(), n_out);
  }
  return out;
}

Tensor dense_transpose(const Tensor& values, const Tensor& weights) {
  const std::size_t n_in = weights.shape()[0];
  const std::size_t n_out = weights.shape()[1];
  Tensor out({n_in});
  const auto& k = kernels::active();
  for (std::size_t j = 0; j < n_in; ++j) out[j] = k.dot(weights.data() + j * n_out, values.data(), n_out);
  return out;
}

template <typename Visit>
void for_each_pool(const Shape& in, const LayerSpec& layer, Visit&& visit) {
  const std::size_t c_n = in[0], h = in[1], w = in[2];
  const std::size_t kh = layer.window[0], kw = layer.window[1], s = layer.stride;
  const std::size_t oh = (h - kh) / s + 1, ow = (w - kw) / s + 1;
  std::size_t out_index = 0;
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++out_index) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            visit(out_index, (c * h + oy * s + ky) * w + ox * s + kx);
          }
        }
      }
    }
  }
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<LayerKind>(i);
  }
  return std::nullopt;
}

LayerSpec LayerSpec::dense(Tensor weights, Tensor bias) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  return l;
}

LayerSpec LayerSpec::conv2d(Tensor weights, Tensor bias, std::size_t stride, std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv2D;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}

namespace {
LayerSpec make_pool(LayerKind kind, std::size_t size, std::size_t stride) {
  LayerSpec l;
  l.kind = kind;
  l.window = {size, size};
  l.stride = stride == 0 ? size : stride;
  return l;
}
}  // namespace

LayerSpec LayerSpec::sum_pool(std::size_t size, std::size_t stride) { return make_pool(LayerKind::SumPool, size, stride); }
LayerSpec LayerSpec::avg_pool(std::size_t size, std::size_t stride) { return make_pool(LayerKind::AvgPool, size, stride); }
LayerSpec LayerSpec::max_pool(std::size_t size, std::size_t stride) { return make_pool(LayerKind::MaxPool, size, stride); }

Shape layer_output_shape(const LayerSpec& layer, const Shape& input, std::size_t index) {
  switch (layer.kind) {
    case LayerKind::Dense: {
      if (input.size() != 1) throw ShapeError("Dense expects a 1-D input, got " + shape_to_string(input), index);
      const Shape& ws = layer.weights.shape();
      if (ws.size() != 2) throw ShapeError("Dense weights must be (in x out)", index);
      if (ws[0] != input[0]) {
        throw ShapeError("Dense weights expect " + std::to_string(ws[0]) + " inputs, got " +
                             std::to_string(input[0]),
                         index);
      }
      if (layer.bias.shape() != Shape{ws[1]}) throw ShapeError("Dense bias must have " + std::to_string(ws[1]) + " entries", index);
      return {ws[1]};
    }
    case LayerKind::Conv2D: {
      if (input.size() != 3) throw ShapeError("Conv2D expects a (C,H,W) input, got " + shape_to_string(input), index);
      const Shape& ws = layer.weights.shape();
      if (ws.size() != 4) throw ShapeError("Conv2D weights must be (out x in x kh x kw)", index);
      if (ws[1] != input[0]) {
        throw ShapeError("Conv2D weights expect " + std::to_string(ws[1]) + " input channels, got " +
                             std::to_string(input[0]),
                         index);
      }
      if (layer.bias.shape() != Shape{ws[0]}) throw ShapeError("Conv2D bias must have one entry per output channel", index);
      if (layer.stride == 0) throw ShapeError("stride must be positive", index);
      return {ws[0], pooled_extent(input[1], layer.padding, ws[2], layer.stride, index, "height"),
              pooled_extent(input[2], layer.padding, ws[3], layer.stride, index, "width")};
    }
    case LayerKind::ReLU:
      return input;
    case LayerKind::Flatten:
      return {element_count(input)};
    case LayerKind::SumPool:
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: {
      if (input.size() != 3) throw ShapeError("pooling expects a (C,H,W) input, got " + shape_to_string(input), index);
      if (layer.stride == 0 || layer.window[0] == 0 || layer.window[1] == 0) {
        throw ShapeError("pool window and stride must be positive", index);
      }
      if (layer.padding != 0) throw ShapeError("pooling layers do not support padding", index);
      return {input[0], pooled_extent(input[1], 0, layer.window[0], layer.stride, index, "height"),
              pooled_extent(input[2], 0, layer.window[1], layer.stride, index, "width")};
    }
  }
  throw UnsupportedLayerError("unknown layer kind");
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers, std::size_t class_count)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), class_count_(class_count) {
  if (input_shape_.empty()) throw ShapeError("network input shape is empty");
  for (std::size_t extent : input_shape_) {
    if (extent == 0) throw ShapeError("network input extents must be positive");
  }
  if (class_count_ == 0) throw ShapeError("class_count must be positive");
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(layer_output_shape(layers_[i], shapes_.back(), i));
  }
  if (shapes_.back() != Shape{class_count_}) {
    throw ShapeError("network output " + shape_to_string(shapes_.back()) + " is not a vector of " +
                         std::to_string(class_count_) + " logits",
                     layers_.empty() ? ShapeError::kNoLayer : layers_.size() - 1);
  }
}

Tensor forward_layer(const LayerSpec& layer, const Tensor& input, std::vector<std::size_t>* argmax) {
  switch (layer.kind) {
    case LayerKind::Dense:
      return dense_forward(layer, input, layer.weights, true);
    case LayerKind::Conv2D:
      return conv_forward(layer, input, layer.weights, true);
    case LayerKind::ReLU:
      return positive_part(input);
    case LayerKind::Flatten:
      return input.reshaped({input.size()});
    case LayerKind::SumPool:
    case LayerKind::AvgPool: {
      Tensor out(layer_output_shape(layer, input.shape(), 0));
      for_each_pool(input.shape(), layer, [&](std::size_t o, std::size_t i) { out[o] += input[i]; });
      if (layer.kind == LayerKind::AvgPool) {
        const double inv = 1.0 / static_cast<double>(layer.window[0] * layer.window[1]);
        for (double& v : out.values()) v *= inv;
      }
      return out;
    }
    case LayerKind::MaxPool: {
      Tensor out(layer_output_shape(layer, input.shape(), 0), -std::numeric_limits<double>::infinity());
      std::vector<std::size_t> winners(out.size(), 0);
      std::vector<bool> seen(out.size(), false);
      // raster order with strict '>' keeps the lowest linear index on ties
      for_each_pool(input.shape(), layer, [&](std::size_t o, std::size_t i) {
        if (!seen[o] || input[i] > out[o]) {
          out[o] = input[i];
          winners[o] = i;
          seen[o] = true;
        }
      });
      if (argmax != nullptr) *argmax = std::move(winners);
      return out;
    }
  }
  throw UnsupportedLayerError("unknown layer kind");
}

ActivationTrace forward(const Network& network, const Tensor& input) {
  if (input.shape() != network.input_shape()) {
    throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match network input " +
                         shape_to_string(network.input_shape()),
                     0);
  }
  if (!input.all_finite()) throw std::invalid_argument("network input contains non-finite values");
  ActivationTrace trace;
  trace.activations.reserve(network.layer_count() + 1);
  trace.argmax.resize(network.layer_count());
  trace.activations.push_back(input);
  for (std::size_t i = 0; i < network.layer_count(); ++i) {
    trace.activations.push_back(forward_layer(network.layer(i), trace.activations.back(), &trace.argmax[i]));
  }
  return trace;
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw ShapeError("log_softmax expects a 1-D logit vector");
  const double peak = *std::max_element(logits.values().begin(), logits.values().end());
  double total = 0.0;
  for (double v : logits.values()) total += std::exp(v - peak);
  const double log_norm = peak + std::log(total);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = log_softmax(logits);
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

Tensor backward_layer(const LayerSpec& layer, const Tensor& input, const std::vector<std::size_t>& argmax,
                      const Tensor& grad_output, ParamGrad* param_grad) {
  switch (layer.kind) {
    case LayerKind::Dense: {
      if (param_grad != nullptr) {
        const std::size_t n_in = layer.weights.shape()[0];
        const std::size_t n_out = layer.weights.shape()[1];
        param_grad->weights = Tensor(layer.weights.shape());
        const auto& k = kernels::active();
        for (std::size_t j = 0; j < n_in; ++j) {
          if (input[j] != 0.0) k.axpy(input[j], grad_output.data(), param_grad->weights.data() + j * n_out, n_out);
        }
        param_grad->bias = grad_output;
      }
      return dense_transpose(grad_output, layer.weights);
    }
    case LayerKind::Conv2D: {
      if (param_grad != nullptr) {
        param_grad->weights = conv_weight_grad(layer, input, grad_output);
        const std::size_t out_ch = layer.weights.shape()[0];
        const std::size_t plane = grad_output.size() / out_ch;
        param_grad->bias = Tensor({out_ch});
        for (std::size_t oc = 0; oc < out_ch; ++oc) {
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) acc += grad_output[oc * plane + p];
          param_grad->bias[oc] = acc;
        }
      }
      return conv_transpose(layer, grad_output, layer.weights, input.shape());
    }
    case LayerKind::ReLU: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
      return out;
    }
    case LayerKind::Flatten:
      return grad_output.reshaped(input.shape());
    case LayerKind::SumPool:
    case LayerKind::AvgPool: {
      Tensor out(input.shape());
      const double factor =
          layer.kind == LayerKind::AvgPool ? 1.0 / static_cast<double>(layer.window[0] * layer.window[1]) : 1.0;
      for_each_pool(input.shape(), layer, [&](std::size_t o, std::size_t i) { out[i] += factor * grad_output[o]; });
      return out;
    }
    case LayerKind::MaxPool: {
      Tensor out(input.shape());
      for (std::size_t o = 0; o < argmax.size(); ++o) out[argmax[o]] += grad_output[o];
      return out;
    }
  }
  throw UnsupportedLayerError("unknown layer kind");
}

Tensor backward(const Network& network, const ActivationTrace& trace, const Tensor& output_grad,
                std::vector<ParamGrad>* param_grads) {
  if (output_grad.shape() != network.shapes().back()) throw ShapeError("output gradient shape mismatch");
  if (param_grads != nullptr) param_grads->assign(network.layer_count(), ParamGrad{});
  Tensor grad = output_grad;
  for (std::size_t i = network.layer_count(); i-- > 0;) {
    grad = backward_layer(network.layer(i), trace.activations[i], trace.argmax[i], grad,
                          param_grads != nullptr ? &(*param_grads)[i] : nullptr);
  }
  return grad;
}

Tensor gradient(const Network& network, const ActivationTrace& trace, std::size_t class_index) {
  if (class_index >= network.class_count()) {
    throw std::out_of_range("class index " + std::to_string(class_index) + " out of range for " +
                            std::to_string(network.class_count()) + " classes");
  }
  Tensor seed({network.class_count()});
  seed[class_index] = 1.0;
  return backward(network, trace, seed);
}

Tensor gradient(const Network& network, const Tensor& input, std::size_t class_index) {
  if (class_index >= network.class_count()) {
    throw std::out_of_range("class index " + std::to_string(class_index) + " out of range for " +
                            std::to_string(network.class_count()) + " classes");
  }
  return gradient(network, forward(network, input), class_index);
}

Tensor linear_forward(const LayerSpec& layer, const Tensor& input, const Tensor& weights, bool with_bias) {
  if (layer.kind == LayerKind::Dense) return dense_forward(layer, input, weights, with_bias);
  if (layer.kind == LayerKind::Conv2D) return conv_forward(layer, input, weights, with_bias);
  throw std::invalid_argument("linear_forward on a layer without weights");
}

Tensor linear_transpose(const LayerSpec& layer, const Tensor& output_values, const Tensor& weights,
                        const Shape& input_shape) {
  if (layer.kind == LayerKind::Dense) return dense_transpose(output_values, weights);
  if (layer.kind == LayerKind::Conv2D) return conv_transpose(layer, output_values, weights, input_shape);
  throw std::invalid_argument("linear_transpose on a layer without weights");
}

std::size_t argmax_index(const Tensor& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace relkit
