#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relkit {

/// Raised when tensor or layer shapes do not compose. Carries the index of the
/// offending layer when one is known.
class ShapeError : public std::invalid_argument {
 public:
  static constexpr std::size_t kNoLayer = static_cast<std::size_t>(-1);

  explicit ShapeError(const std::string& what, std::size_t layer = kNoLayer)
      : std::invalid_argument(layer == kNoLayer ? what
                                                : "layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// Malformed model, dataset or heatmap file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer kind that the toolkit does not implement (e.g. "BatchNorm").
class UnsupportedLayerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relkit
