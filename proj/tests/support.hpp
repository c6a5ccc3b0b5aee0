#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "relkit/explain.hpp"
#include "relkit/network.hpp"
#include "relkit/rng.hpp"
#include "relkit/tensor.hpp"

namespace testing {

using namespace relkit;

// f(x) = max(0, 0.5 relu(x1 - x2) + 0.5 relu(x2 - x1) + 0.5 relu(x1 + x2)), i.e. max(x1, x2) on x >= 0.
inline Network max_network() {
  Tensor w1({2, 3}, {1, -1, 1, -1, 1, 1});
  Tensor w2({3, 1}, {0.5, 0.5, 0.5});
  return Network({2}, {LayerSpec::dense(w1, Tensor({3})), LayerSpec::relu(), LayerSpec::dense(w2, Tensor({1})),
                       LayerSpec::relu()},
                 1);
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

enum class BiasMode { Zero, Random, NonPositive };

inline Tensor make_bias(std::size_t n, Rng& rng, BiasMode mode) {
  Tensor b({n});
  for (double& v : b.values()) {
    if (mode == BiasMode::Random) v = rng.uniform(-0.3, 0.3);
    if (mode == BiasMode::NonPositive) v = rng.uniform(-0.3, 0.0);
  }
  return b;
}

/// Dense ReLU stack in -> hidden... -> classes; no ReLU after the last layer.
inline Network random_mlp(Rng& rng, std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes,
                          BiasMode mode) {
  std::vector<LayerSpec> layers;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    const double s = std::sqrt(2.0 / static_cast<double>(prev));
    layers.push_back(LayerSpec::dense(random_tensor({prev, h}, rng, -s, s), make_bias(h, rng, mode)));
    layers.push_back(LayerSpec::relu());
    prev = h;
  }
  const double s = std::sqrt(2.0 / static_cast<double>(prev));
  layers.push_back(LayerSpec::dense(random_tensor({prev, classes}, rng, -s, s), make_bias(classes, rng, mode)));
  return Network({in}, layers, classes);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// Central differences of a scalar function.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(max|a|, max|b|)
inline double max_relative_difference(const Tensor& a, const Tensor& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

inline double logit(const Network& net, const Tensor& x, std::size_t c) { return forward(net, x).logits()[c]; }

// Per-edge oracle for dense/ReLU stacks: for every weighted layer, every
// edge (j, k) gets its share R_{j<-k} computed from scratch, then R_j sums the
// shares. Rules: alpha/beta on hidden layers, `first` on the first layer.
struct EdgeRule {
  enum Kind { AlphaBeta, ZB, WSquare } kind = AlphaBeta;
  double alpha = 1.0, beta = 0.0;
  std::vector<double> lower, upper;
};

inline std::vector<double> brute_force_lrp(const Network& net, const Tensor& x, std::size_t c, EdgeRule first,
                                           double alpha, double beta) {
  // Plain re-implementation of the forward pass.
  std::vector<std::vector<double>> acts{std::vector<double>(x.values().begin(), x.values().end())};
  for (const LayerSpec& l : net.layers()) {
    const auto& a = acts.back();
    std::vector<double> out;
    if (l.kind == LayerKind::Dense) {
      const std::size_t in = l.weights.shape()[0], n = l.weights.shape()[1];
      out.assign(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        double z = l.bias[k];
        for (std::size_t j = 0; j < in; ++j) z += a[j] * l.weights[j * n + k];
        out[k] = z;
      }
    } else {
      for (double v : a) out.push_back(v > 0 ? v : 0.0);
    }
    acts.push_back(out);
  }
  std::vector<double> rel(acts.back().size(), 0.0);
  rel[c] = acts.back()[c];

  std::size_t first_weighted = 0;
  while (net.layer(first_weighted).kind != LayerKind::Dense) ++first_weighted;

  for (std::size_t li = net.layer_count(); li-- > 0;) {
    const LayerSpec& l = net.layer(li);
    if (l.kind != LayerKind::Dense) continue;
    const auto& a = acts[li];
    const std::size_t in = l.weights.shape()[0], n = l.weights.shape()[1];
    std::vector<std::vector<double>> share(in, std::vector<double>(n, 0.0));
    const EdgeRule rule = li == first_weighted ? first : EdgeRule{EdgeRule::AlphaBeta, alpha, beta, {}, {}};
    for (std::size_t k = 0; k < n; ++k) {
      if (rule.kind == EdgeRule::AlphaBeta) {
        double zp = 0.0, zn = 0.0;
        for (std::size_t j = 0; j < in; ++j) {
          const double t = a[j] * l.weights[j * n + k];
          if (l.weights[j * n + k] > 0) zp += t;
          if (l.weights[j * n + k] < 0) zn += t;
        }
        const bool pos_ok = std::abs(zp) >= 1e-9, neg_ok = std::abs(zn) >= 1e-9;
        // An empty branch hands its weight to the other so the layer still conserves.
        const double wp = neg_ok ? rule.alpha : rule.alpha - rule.beta;
        const double wn = rule.beta;
        for (std::size_t j = 0; j < in; ++j) {
          const double w = l.weights[j * n + k];
          double s = 0.0;
          if (w > 0 && pos_ok) s += wp * a[j] * w / zp;
          if (w < 0 && neg_ok) s -= wn * a[j] * w / zn;
          share[j][k] = s * rel[k];
        }
      } else if (rule.kind == EdgeRule::ZB) {
        double den = 0.0;
        std::vector<double> num(in);
        for (std::size_t j = 0; j < in; ++j) {
          const double w = l.weights[j * n + k];
          num[j] = a[j] * w - rule.lower[j] * std::max(w, 0.0) - rule.upper[j] * std::min(w, 0.0);
          den += num[j];
        }
        for (std::size_t j = 0; j < in; ++j) share[j][k] = std::abs(den) < 1e-9 ? 0.0 : num[j] / den * rel[k];
      } else {
        double den = 0.0;
        for (std::size_t j = 0; j < in; ++j) den += l.weights[j * n + k] * l.weights[j * n + k];
        for (std::size_t j = 0; j < in; ++j) {
          share[j][k] = std::abs(den) < 1e-9 ? 0.0 : l.weights[j * n + k] * l.weights[j * n + k] / den * rel[k];
        }
      }
    }
    std::vector<double> lower(in, 0.0);
    for (std::size_t j = 0; j < in; ++j) {
      for (std::size_t k = 0; k < n; ++k) lower[j] += share[j][k];
    }
    rel = lower;
  }
  return rel;
}

}  // namespace testing
