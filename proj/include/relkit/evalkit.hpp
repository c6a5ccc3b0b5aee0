#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "relkit/explain.hpp"

namespace relkit {

enum class FlipGranularity { Feature, Patch };

struct FlipConfig {
  FlipGranularity granularity = FlipGranularity::Patch;
  /// Side of the square patches tiling the two trailing axes (all channels
  /// together). Border patches are truncated when the side does not divide
  /// the extent. For 1-D inputs a patch is a run of `patch` features.
  std::size_t patch = 4;
  /// Value written into removed features.
  double fill = 0.0;
  /// Number of removals; nullopt removes every region.
  std::optional<std::size_t> max_steps;
};

struct FlipCurve {
  /// values[0] = f(x); values[i] = f after i removals.
  std::vector<double> values;
  /// Region indices in removal order.
  std::vector<std::size_t> order;
  double auc = 0.0;
};

/// Feature indices of every removal region, in region index order.
std::vector<std::vector<std::size_t>> flip_regions(const Shape& shape, const FlipConfig& config);

/// Greedy removal in descending region relevance of `heatmap` (order fixed
/// up front, ties to the lowest region index), re-evaluating logit
/// `class_index` after each removal.
FlipCurve pixel_flip(const Network& network, const Tensor& input, const Heatmap& heatmap, std::size_t class_index,
                     const FlipConfig& config);

/// Same procedure with an explicit region order (e.g. a random baseline).
FlipCurve pixel_flip_order(const Network& network, const Tensor& input, std::span<const std::size_t> order,
                           std::size_t class_index, const FlipConfig& config);

/// Uniformly random permutation of 0..n-1.
std::vector<std::size_t> random_order(std::size_t n, std::uint64_t seed);

/// Trapezoidal area over unit-spaced steps divided by the number of steps;
/// a single value is returned as is.
double auc(std::span<const double> values);

/// Sampled lower bound of max ||R(x) - R(x')||_1 / ||x - x'||_2: for every
/// probe, `trials` perturbations of norm `delta` in random directions. Probe
/// i draws from its own stream derived from (seed, i), so increasing `trials`
/// only adds samples.
double continuity_estimate(const Explainer& explainer, const Network& network, std::span<const Tensor> probes,
                           double delta, std::size_t trials, std::uint64_t seed);

}  // namespace relkit
