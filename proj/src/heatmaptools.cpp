#include "relkit/heatmaptools.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "relkit/errors.hpp"

namespace relkit {

namespace {

std::pair<std::size_t, std::size_t> spatial_extent(const Shape& shape) {
  if (shape.size() < 2) throw ShapeError("expected at least two axes, got " + shape_to_string(shape));
  return {shape[shape.size() - 2], shape[shape.size() - 1]};
}

}  // namespace

RegionPartition RegionPartition::single(std::size_t features) {
  return {std::vector<std::size_t>(features, 0), 1};
}

RegionPartition RegionPartition::per_pixel(const Shape& shape) {
  const auto [h, w] = spatial_extent(shape);
  const std::size_t n = element_count(shape);
  RegionPartition p{std::vector<std::size_t>(n), h * w};
  for (std::size_t i = 0; i < n; ++i) p.region_of[i] = i % (h * w);
  return p;
}

RegionPartition RegionPartition::quadrants(const Shape& shape) {
  const auto [h, w] = spatial_extent(shape);
  const std::size_t n = element_count(shape);
  RegionPartition p{std::vector<std::size_t>(n), 4};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = (i / w) % h;
    const std::size_t x = i % w;
    p.region_of[i] = (y >= h / 2 ? 2 : 0) + (x >= w / 2 ? 1 : 0);
  }
  return p;
}

std::vector<double> pool_relevance(const Heatmap& heatmap, const RegionPartition& partition) {
  if (partition.region_of.size() != heatmap.scores.size()) {
    throw ShapeError("partition covers " + std::to_string(partition.region_of.size()) + " features, heatmap has " +
                     std::to_string(heatmap.scores.size()));
  }
  std::vector<std::vector<double>> members(partition.region_count);
  for (std::size_t i = 0; i < partition.region_of.size(); ++i) {
    const std::size_t r = partition.region_of[i];
    if (r >= partition.region_count) {
      throw std::invalid_argument("feature " + std::to_string(i) + " has no region");
    }
    members[r].push_back(heatmap.scores[i]);
  }
  std::vector<double> pooled(partition.region_count);
  for (std::size_t r = 0; r < pooled.size(); ++r) pooled[r] = compensated_sum(members[r]);
  return pooled;
}

TranslationSet TranslationSet::identity() { return {{Shift{}}, false}; }

TranslationSet TranslationSet::within(std::size_t radius) {
  TranslationSet set;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx) set.shifts.push_back({dy, dx});
  }
  return set;
}

bool TranslationSet::contains_identity() const {
  return std::find(shifts.begin(), shifts.end(), Shift{}) != shifts.end();
}

Tensor translate(const Tensor& image, Shift shift) {
  const auto [h, w] = spatial_extent(image.shape());
  const std::size_t planes = image.size() / (h * w);
  Tensor out(image.shape());
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < planes; ++c) {
    for (std::ptrdiff_t y = 0; y < ih; ++y) {
      const std::ptrdiff_t ty = y + shift.dy;
      if (ty < 0 || ty >= ih) continue;
      for (std::ptrdiff_t x = 0; x < iw; ++x) {
        const std::ptrdiff_t tx = x + shift.dx;
        if (tx < 0 || tx >= iw) continue;
        out[(c * h + static_cast<std::size_t>(ty)) * w + static_cast<std::size_t>(tx)] =
            image[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)];
      }
    }
  }
  return out;
}

Heatmap translation_average(const Explainer& explainer, const Network& network, const Tensor& image,
                            const TranslationSet& shifts) {
  if (shifts.shifts.empty()) throw std::invalid_argument("translation set is empty");
  if (!shifts.identity_optional && !shifts.contains_identity()) {
    throw std::invalid_argument("translation set lacks the identity shift");
  }
  Tensor sum(image.shape());
  double explained = 0.0;
  std::string method;
  for (const Shift& s : shifts.shifts) {
    const bool identity = s == Shift{};
    const Heatmap h = explainer(network, identity ? image : translate(image, s));
    const Tensor back = identity ? h.scores : translate(h.scores, s.inverse());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += back[i];
    explained += h.explained_value;
    method = h.method;
  }
  const double n = static_cast<double>(shifts.shifts.size());
  for (double& v : sum.values()) v /= n;
  return Heatmap::make(std::move(sum), explained / n, method + "+translate");
}

std::vector<std::pair<std::size_t, std::size_t>> window_locations(const Shape& image, const Shape& window,
                                                                  std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("sliding window stride must be positive");
  if (image.size() != window.size()) throw ShapeError("image and window ranks differ");
  for (std::size_t a = 0; a + 2 < image.size(); ++a) {
    if (image[a] != window[a]) throw ShapeError("image and window differ outside the spatial axes");
  }
  const auto [h, w] = spatial_extent(image);
  const auto [wh, ww] = spatial_extent(window);
  if (h < wh || w < ww) {
    throw ShapeError("image " + shape_to_string(image) + " is smaller than the window " + shape_to_string(window));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t y = 0; y + wh <= h; y += stride) {
    for (std::size_t x = 0; x + ww <= w; x += stride) out.emplace_back(y, x);
  }
  return out;
}

namespace {

Tensor crop(const Tensor& image, const Shape& window, std::size_t y0, std::size_t x0) {
  const auto [h, w] = spatial_extent(image.shape());
  const auto [wh, ww] = spatial_extent(window);
  const std::size_t planes = image.size() / (h * w);
  Tensor out(window);
  for (std::size_t c = 0; c < planes; ++c) {
    for (std::size_t y = 0; y < wh; ++y) {
      std::copy_n(image.data() + (c * h + y0 + y) * w + x0, ww, out.data() + (c * wh + y) * ww);
    }
  }
  return out;
}

void accumulate(Tensor& image, const Tensor& patch, std::size_t y0, std::size_t x0) {
  const auto [h, w] = spatial_extent(image.shape());
  const auto [wh, ww] = spatial_extent(patch.shape());
  const std::size_t planes = image.size() / (h * w);
  for (std::size_t c = 0; c < planes; ++c) {
    for (std::size_t y = 0; y < wh; ++y) {
      for (std::size_t x = 0; x < ww; ++x) image[(c * h + y0 + y) * w + x0 + x] += patch[(c * wh + y) * ww + x];
    }
  }
}

}  // namespace

Heatmap sliding_window_explain(const Network& network, const Tensor& image, std::size_t stride,
                               const RuleConfig& config, std::size_t class_index) {
  const Shape& window = network.input_shape();
  const auto locations = window_locations(image.shape(), window, stride);
  Tensor scores(image.shape());
  double g = 0.0;
  std::size_t absorbed = 0;
  for (const auto& [y, x] : locations) {
    const Heatmap h = explain_lrp(network, crop(image, window, y, x), class_index, config);
    accumulate(scores, h.scores, y, x);
    g += h.explained_value;
    absorbed += h.absorbed;
  }
  return Heatmap::make(std::move(scores), g, "lrp+sliding", absorbed);
}

Tensor window_coverage(const Shape& image, const Shape& window, std::size_t stride) {
  Tensor counts(image);
  const Tensor ones(window, 1.0);
  for (const auto& [y, x] : window_locations(image, window, stride)) accumulate(counts, ones, y, x);
  return counts;
}

Tensor normalize_heatmap(const Heatmap& heatmap, const PatternOptions& options) {
  Tensor clipped = positive_part(heatmap.scores);
  double top = 0.0;
  for (double v : clipped.values()) top = std::max(top, v);
  if (top == 0.0) return clipped;
  double scale = top;
  if (options.mode == PatternNormalization::ClipPercentile) {
    if (!(options.percentile > 0.0 && options.percentile <= 100.0)) {
      throw std::invalid_argument("percentile must be in (0, 100]");
    }
    std::vector<double> sorted(clipped.values().begin(), clipped.values().end());
    std::sort(sorted.begin(), sorted.end());
    // linear interpolation between closest ranks
    const double rank = options.percentile / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double q = sorted[lo] + (rank - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    if (q > 0.0) scale = q;
  }
  for (double& v : clipped.values()) v = std::min(v / scale, 1.0);
  return clipped;
}

Pattern pattern(const Tensor& image, const Heatmap& heatmap, const PatternOptions& options) {
  if (image.shape() != heatmap.scores.shape()) {
    throw ShapeError("pattern: image " + shape_to_string(image.shape()) + " vs heatmap " +
                     shape_to_string(heatmap.scores.shape()));
  }
  const Tensor weights = normalize_heatmap(heatmap, options);
  Pattern out;
  out.degenerate = max_abs(weights) == 0.0;
  out.values = multiply(image, weights);
  return out;
}

Image render_heatmap(const Heatmap& heatmap, Colormap colormap) {
  const Shape& shape = heatmap.scores.shape();
  Image img;
  Tensor plane;
  if (shape.size() == 1) {
    img.height = 1;
    img.width = shape[0];
    plane = heatmap.scores;
  } else {
    const auto [h, w] = spatial_extent(shape);
    img.height = h;
    img.width = w;
    plane = Tensor({h * w});
    for (std::size_t i = 0; i < heatmap.scores.size(); ++i) plane[i % (h * w)] += heatmap.scores[i];
  }
  double scale = 0.0;
  for (double v : plane.values()) {
    scale = std::max(scale, colormap == Colormap::Diverging ? std::abs(v) : v);
  }
  auto level = [](double t) { return static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t))); };
  img.rgb.reserve(plane.size() * 3);
  for (double v : plane.values()) {
    double t = scale > 0.0 ? v / scale : 0.0;
    if (colormap == Colormap::SequentialRed) t = std::max(t, 0.0);
    t = std::clamp(t, -1.0, 1.0);
    const std::uint8_t fade = level(std::abs(t));
    if (t >= 0.0) {
      img.rgb.insert(img.rgb.end(), {255, fade, fade});
    } else {
      img.rgb.insert(img.rgb.end(), {fade, fade, 255});
    }
  }
  return img;
}

}  // namespace relkit
