#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relkit/explain.hpp"

namespace relkit {

/// Assigns every input feature to exactly one region.
struct RegionPartition {
  std::vector<std::size_t> region_of;
  std::size_t region_count = 0;

  static RegionPartition single(std::size_t features);
  /// One region per spatial location of a (C,H,W) shape, summing channels.
  static RegionPartition per_pixel(const Shape& shape);
  /// Four quadrants over the trailing two axes (top-left, top-right,
  /// bottom-left, bottom-right); odd extents put the middle row/column in the
  /// lower/right half.
  static RegionPartition quadrants(const Shape& shape);
};

/// Per-region sums of the heatmap scores.
std::vector<double> pool_relevance(const Heatmap& heatmap, const RegionPartition& partition);

struct Shift {
  std::ptrdiff_t dy = 0;
  std::ptrdiff_t dx = 0;

  Shift inverse() const noexcept { return {-dy, -dx}; }
  friend bool operator==(const Shift&, const Shift&) = default;
};

struct TranslationSet {
  std::vector<Shift> shifts;
  /// Must be set to use a set without the identity shift.
  bool identity_optional = false;

  static TranslationSet identity();
  /// Every shift with |dy|, |dx| <= radius.
  static TranslationSet within(std::size_t radius);

  bool contains_identity() const;
};

/// Moves content by `shift` over the trailing two axes; vacated positions are
/// zero and content leaving the frame is dropped.
Tensor translate(const Tensor& image, Shift shift);

/// Mean over shifts of inverse_shift(explainer(shift(image))).
Heatmap translation_average(const Explainer& explainer, const Network& network, const Tensor& image,
                            const TranslationSet& shifts);

/// Top-left corners (row, col) of the windows visited on a grid of `stride`.
std::vector<std::pair<std::size_t, std::size_t>> window_locations(const Shape& image, const Shape& window,
                                                                  std::size_t stride);

/// Explains g(X) = sum over windows of f(X[window]) by summing per-window
/// LRP heatmaps into image coordinates. explained_value is g(X). Overlaps
/// add up without normalization; see window_coverage for a display view.
Heatmap sliding_window_explain(const Network& network, const Tensor& image, std::size_t stride,
                               const RuleConfig& config, std::size_t class_index);

/// Number of windows covering each feature of `image`.
Tensor window_coverage(const Shape& image, const Shape& window, std::size_t stride);

enum class PatternNormalization { Rescale, ClipPercentile };

struct PatternOptions {
  PatternNormalization mode = PatternNormalization::ClipPercentile;
  double percentile = 99.0;
};

struct Pattern {
  Tensor values;
  /// Set when the heatmap has no positive score and the pattern is all zero.
  bool degenerate = false;
};

/// Negative scores clipped to 0, then scaled to [0, 1] (by the maximum, or
/// by the given percentile with larger values clipped).
Tensor normalize_heatmap(const Heatmap& heatmap, const PatternOptions& options);

/// image * normalized heatmap.
Pattern pattern(const Tensor& image, const Heatmap& heatmap, const PatternOptions& options = {});

enum class Colormap { Diverging, SequentialRed };

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Renders a 1-D, (H,W) or channel-pooled (C,H,W) heatmap. Diverging: white at
/// 0, red for positive, blue for negative, symmetric around 0 with scale
/// max|R|. SequentialRed: white to red over the positive part.
Image render_heatmap(const Heatmap& heatmap, Colormap colormap);

}  // namespace relkit
