#include "relkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "relkit/errors.hpp"
#include "relkit/rng.hpp"

namespace relkit {

std::vector<std::vector<std::size_t>> flip_regions(const Shape& shape, const FlipConfig& config) {
  const std::size_t n = element_count(shape);
  std::vector<std::vector<std::size_t>> regions;
  if (config.granularity == FlipGranularity::Feature) {
    regions.resize(n);
    for (std::size_t i = 0; i < n; ++i) regions[i] = {i};
    return regions;
  }
  const std::size_t p = config.patch;
  if (p == 0) throw std::invalid_argument("patch side must be >= 1");
  if (shape.size() == 1) {
    for (std::size_t start = 0; start < n; start += p) {
      std::vector<std::size_t> run(std::min(p, n - start));
      std::iota(run.begin(), run.end(), start);
      regions.push_back(std::move(run));
    }
    return regions;
  }
  const std::size_t h = shape[shape.size() - 2];
  const std::size_t w = shape[shape.size() - 1];
  const std::size_t planes = n / (h * w);
  for (std::size_t py = 0; py < h; py += p) {
    for (std::size_t px = 0; px < w; px += p) {
      std::vector<std::size_t> members;
      for (std::size_t c = 0; c < planes; ++c) {
        for (std::size_t y = py; y < std::min(h, py + p); ++y) {
          for (std::size_t x = px; x < std::min(w, px + p); ++x) members.push_back((c * h + y) * w + x);
        }
      }
      regions.push_back(std::move(members));
    }
  }
  return regions;
}

FlipCurve pixel_flip_order(const Network& network, const Tensor& input, std::span<const std::size_t> order,
                           std::size_t class_index, const FlipConfig& config) {
  if (class_index >= network.class_count()) throw std::out_of_range("pixel_flip: class index out of range");
  const auto regions = flip_regions(input.shape(), config);
  std::size_t steps = std::min(order.size(), regions.size());
  if (config.max_steps) steps = std::min(steps, *config.max_steps);

  FlipCurve curve;
  Tensor x = input;
  curve.values.push_back(forward(network, x).logits()[class_index]);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t region = order[step];
    if (region >= regions.size()) throw std::out_of_range("pixel_flip: region index out of range");
    for (std::size_t i : regions[region]) x[i] = config.fill;
    curve.order.push_back(region);
    curve.values.push_back(forward(network, x).logits()[class_index]);
  }
  curve.auc = auc(curve.values);
  return curve;
}

FlipCurve pixel_flip(const Network& network, const Tensor& input, const Heatmap& heatmap, std::size_t class_index,
                     const FlipConfig& config) {
  if (heatmap.scores.shape() != input.shape()) {
    throw ShapeError("heatmap " + shape_to_string(heatmap.scores.shape()) + " does not match input " +
                     shape_to_string(input.shape()));
  }
  const auto regions = flip_regions(input.shape(), config);
  std::vector<double> pooled(regions.size(), 0.0);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    for (std::size_t i : regions[r]) pooled[r] += heatmap.scores[i];
  }
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] > pooled[b]; });
  return pixel_flip_order(network, input, order, class_index, config);
}

std::vector<std::size_t> random_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

double auc(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("auc needs at least one value");
  if (values.size() == 1) return values[0];
  double area = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) area += 0.5 * (values[i - 1] + values[i]);
  return area / static_cast<double>(values.size() - 1);
}

double continuity_estimate(const Explainer& explainer, const Network& network, std::span<const Tensor> probes,
                           double delta, std::size_t trials, std::uint64_t seed) {
  if (!(delta > 0.0)) throw std::invalid_argument("continuity_estimate: delta must be positive");
  double worst = 0.0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const Tensor& x = probes[p];
    const Tensor base = explainer(network, x).scores;
    Rng rng = Rng::derive(seed, p);
    for (std::size_t t = 0; t < trials; ++t) {
      Tensor direction(x.shape());
      for (double& v : direction.values()) v = rng.normal();
      const double norm = l2_norm(direction);
      if (norm == 0.0) continue;
      Tensor moved = x;
      for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += delta * direction[i] / norm;
      const double distance = l2_norm(subtract(moved, x));
      if (distance == 0.0) continue;
      const double ratio = l1_norm(subtract(explainer(network, moved).scores, base)) / distance;
      worst = std::max(worst, ratio);
    }
  }
  return worst;
}

}  // namespace relkit
