#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relkit/evalkit.hpp"
#include "relkit/explain.hpp"
#include "relkit/heatmaptools.hpp"
#include "relkit/network.hpp"
#include "relkit/prototype.hpp"

namespace relkit {

inline constexpr int kModelFormatVersion = 1;

struct InputBounds {
  Tensor lower;
  Tensor upper;
};

/// Contents of a model JSON document.
struct ModelFile {
  Network network;
  std::optional<RbmExpert> expert;
  std::optional<InputBounds> input_bounds;
};

/// Deterministic JSON text: sorted keys, shortest round-trip decimal floats.
std::string model_to_json(const ModelFile& model);
/// Throws ParseError (malformed JSON, missing fields, bad nesting),
/// UnsupportedLayerError (unknown kind) or ShapeError.
ModelFile model_from_json(std::string_view text);

ModelFile load_model_file(const std::filesystem::path& path);
void save_model_file(const ModelFile& model, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);
void save_model(const Network& network, const std::filesystem::path& path);

/// Unsigned-byte IDX array.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> values;
};

/// Accepts magic 0x00000803 (images, 3 dims) and 0x00000801 (labels, 1 dim).
/// Header checks run before the payload is touched.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
IdxArray load_idx(const std::filesystem::path& path);

/// Images as (1, rows, cols) tensors with bytes mapped to [0, 1] by /255.
std::vector<Tensor> idx_images(const IdxArray& array);
std::vector<std::size_t> idx_labels(const IdxArray& array);

std::vector<std::uint8_t> encode_idx_images(std::span<const Tensor> images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::size_t> labels);

/// Heatmap CSV: a "# shape=... method=... total=... explained_value=...
/// absorbed=..." line, an "index,relevance" header, one row per feature.
std::string heatmap_to_csv(const Heatmap& heatmap);
Heatmap heatmap_from_csv(std::string_view text);

/// Plain tensor CSV ("# shape=..." then "index,value").
std::string tensor_to_csv(const Tensor& tensor);

/// "# auc=... normalization=trapezoid/steps", then "step,value".
std::string curve_to_csv(const FlipCurve& curve);

/// Binary PPM (P6, maxval 255).
std::string encode_ppm(const Image& image);

std::string read_text(const std::filesystem::path& path);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// %.17g: enough digits to round-trip any double.
std::string format_double(double value);

}  // namespace relkit
