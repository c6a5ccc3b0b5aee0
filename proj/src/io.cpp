#include "relkit/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "relkit/errors.hpp"

namespace relkit {

using nlohmann::json;

namespace {

// ---- model JSON ----------------------------------------------------------

bool is_number_array(const json& j) {
  return j.is_array() && !j.empty() && std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); });
}

// Compact for flat numeric arrays, one element per line otherwise. Objects
// come out in key order because nlohmann::json stores them in a std::map.
void emit(const json& j, std::string& out, int depth) {
  const std::string pad(static_cast<std::size_t>(depth) * 1, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      out += "{\n";
      std::size_t i = 0;
      for (auto it = j.begin(); it != j.end(); ++it, ++i) {
        out += pad + " " + json(it.key()).dump() + ": ";
        emit(it.value(), out, depth + 1);
        if (i + 1 < j.size()) out += ",";
        out += "\n";
      }
      out += pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      if (is_number_array(j)) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i > 0) out += ", ";
          emit(j[i], out, depth + 1);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        out += pad + " ";
        emit(j[i], out, depth + 1);
        if (i + 1 < j.size()) out += ",";
        out += "\n";
      }
      out += pad + "]";
      return;
    }
    case json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

json nested(const Tensor& t, std::size_t axis, std::size_t& cursor) {
  json arr = json::array();
  const std::size_t extent = t.shape()[axis];
  for (std::size_t i = 0; i < extent; ++i) {
    if (axis + 1 == t.rank()) {
      arr.push_back(t[cursor++]);
    } else {
      arr.push_back(nested(t, axis + 1, cursor));
    }
  }
  return arr;
}

json to_nested(const Tensor& t) {
  std::size_t cursor = 0;
  return nested(t, 0, cursor);
}

void flatten_into(const json& j, std::size_t axis, Shape& shape, std::vector<double>& data, const std::string& where) {
  if (!j.is_array()) {
    throw ParseError(where + ": expected a nested array of numbers");
  }
  if (axis == shape.size()) shape.push_back(j.size());
  if (j.size() != shape[axis] || j.empty()) throw ParseError(where + ": ragged or empty array");
  for (const json& v : j) {
    if (v.is_array()) {
      flatten_into(v, axis + 1, shape, data, where);
    } else if (v.is_number()) {
      if (axis + 1 != shape.size()) throw ParseError(where + ": ragged array");
      data.push_back(v.get<double>());
    } else {
      throw ParseError(where + ": non-numeric entry");
    }
  }
}

Tensor from_nested(const json& j, const std::string& where, std::size_t expected_rank) {
  Shape shape;
  std::vector<double> data;
  flatten_into(j, 0, shape, data, where);
  if (expected_rank != 0 && shape.size() != expected_rank) {
    throw ParseError(where + ": expected rank " + std::to_string(expected_rank) + ", got " +
                     std::to_string(shape.size()));
  }
  if (data.size() != element_count(shape)) throw ParseError(where + ": ragged array");
  return Tensor(std::move(shape), std::move(data));
}

std::size_t get_count(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number_unsigned()) {
    throw ParseError(where + ": missing or invalid '" + key + "'");
  }
  return obj[key].get<std::size_t>();
}

json layer_to_json(const LayerSpec& layer) {
  json j;
  j["kind"] = std::string(layer_kind_name(layer.kind));
  if (layer.has_weights()) {
    j["weights"] = to_nested(layer.weights);
    j["bias"] = to_nested(layer.bias);
  }
  if (layer.kind == LayerKind::Conv2D) {
    j["stride"] = layer.stride;
    j["padding"] = layer.padding;
  }
  if (layer.is_pool()) {
    j["window"] = json::array({layer.window[0], layer.window[1]});
    j["stride"] = layer.stride;
  }
  return j;
}

LayerSpec layer_from_json(const json& j, std::size_t index) {
  const std::string where = "layer " + std::to_string(index);
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw ParseError(where + ": missing 'kind'");
  }
  const std::string kind_name = j["kind"].get<std::string>();
  const auto kind = parse_layer_kind(kind_name);
  if (!kind) throw UnsupportedLayerError(where + ": unsupported layer kind '" + kind_name + "'");
  switch (*kind) {
    case LayerKind::Dense:
      if (!j.contains("weights") || !j.contains("bias")) throw ParseError(where + ": Dense needs weights and bias");
      return LayerSpec::dense(from_nested(j["weights"], where + " weights", 2), from_nested(j["bias"], where + " bias", 1));
    case LayerKind::Conv2D:
      if (!j.contains("weights") || !j.contains("bias")) throw ParseError(where + ": Conv2D needs weights and bias");
      return LayerSpec::conv2d(from_nested(j["weights"], where + " weights", 4),
                               from_nested(j["bias"], where + " bias", 1), get_count(j, "stride", where),
                               get_count(j, "padding", where));
    case LayerKind::ReLU:
      return LayerSpec::relu();
    case LayerKind::Flatten:
      return LayerSpec::flatten();
    case LayerKind::SumPool:
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: {
      LayerSpec l;
      l.kind = *kind;
      if (!j.contains("window") || !j["window"].is_array() || j["window"].size() != 2 ||
          !j["window"][0].is_number_unsigned() || !j["window"][1].is_number_unsigned()) {
        throw ParseError(where + ": pool needs a two-entry 'window'");
      }
      l.window = {j["window"][0].get<std::size_t>(), j["window"][1].get<std::size_t>()};
      l.stride = get_count(j, "stride", where);
      return l;
    }
  }
  throw UnsupportedLayerError(where + ": unsupported layer kind");
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string model_to_json(const ModelFile& model) {
  const Network& net = model.network;
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["input_shape"] = net.input_shape();
  doc["class_count"] = net.class_count();
  doc["layers"] = json::array();
  for (const LayerSpec& layer : net.layers()) doc["layers"].push_back(layer_to_json(layer));
  if (model.expert) {
    json e;
    e["factor_weights"] = model.expert->factor_count() == 0 ? json::array() : to_nested(model.expert->factor_weights());
    e["factor_biases"] = model.expert->factor_count() == 0 ? json::array() : to_nested(model.expert->factor_biases());
    e["precision"] = to_nested(model.expert->precision());
    doc["expert"] = std::move(e);
  }
  if (model.input_bounds) {
    doc["input_bounds"] = {{"lower", to_nested(model.input_bounds->lower.reshaped({model.input_bounds->lower.size()}))},
                           {"upper", to_nested(model.input_bounds->upper.reshaped({model.input_bounds->upper.size()}))}};
  }
  std::string out;
  emit(doc, out, 0);
  out += "\n";
  return out;
}

ModelFile model_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("model JSON: top level must be an object");
  const std::size_t version = get_count(doc, "format_version", "model");
  if (version != static_cast<std::size_t>(kModelFormatVersion)) {
    throw ParseError("model JSON: unsupported format_version " + std::to_string(version));
  }
  if (!doc.contains("input_shape") || !doc["input_shape"].is_array()) throw ParseError("model: missing input_shape");
  Shape input_shape;
  for (const json& v : doc["input_shape"]) {
    if (!v.is_number_unsigned()) throw ParseError("model: input_shape entries must be positive integers");
    input_shape.push_back(v.get<std::size_t>());
  }
  const std::size_t classes = get_count(doc, "class_count", "model");
  if (!doc.contains("layers") || !doc["layers"].is_array()) throw ParseError("model: missing layers");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < doc["layers"].size(); ++i) layers.push_back(layer_from_json(doc["layers"][i], i));

  ModelFile model{Network(std::move(input_shape), std::move(layers), classes), std::nullopt, std::nullopt};
  if (doc.contains("expert")) {
    const json& e = doc["expert"];
    if (!e.is_object() || !e.contains("precision")) throw ParseError("model: expert needs a precision matrix");
    Tensor weights, biases;
    if (e.contains("factor_biases") && !e["factor_biases"].empty()) {
      biases = from_nested(e["factor_biases"], "expert factor_biases", 1);
      if (!e.contains("factor_weights")) throw ParseError("model: expert factor_weights missing");
      weights = from_nested(e["factor_weights"], "expert factor_weights", 2);
    }
    try {
      model.expert.emplace(std::move(weights), std::move(biases), from_nested(e["precision"], "expert precision", 2));
    } catch (const std::invalid_argument& err) {
      throw ParseError(std::string("model: ") + err.what());
    }
  }
  if (doc.contains("input_bounds")) {
    const json& b = doc["input_bounds"];
    if (!b.is_object() || !b.contains("lower") || !b.contains("upper")) {
      throw ParseError("model: input_bounds needs lower and upper");
    }
    const Shape& in = model.network.input_shape();
    InputBounds bounds{from_nested(b["lower"], "input_bounds lower", 1), from_nested(b["upper"], "input_bounds upper", 1)};
    if (bounds.lower.size() != element_count(in) || bounds.upper.size() != element_count(in)) {
      throw ShapeError("input_bounds do not match the network input");
    }
    model.input_bounds = InputBounds{bounds.lower.reshaped(in), bounds.upper.reshaped(in)};
  }
  return model;
}

ModelFile load_model_file(const std::filesystem::path& path) { return model_from_json(read_text(path)); }

void save_model_file(const ModelFile& model, const std::filesystem::path& path) {
  write_text(path, model_to_json(model));
}

Network load_model(const std::filesystem::path& path) { return load_model_file(path).network; }

void save_model(const Network& network, const std::filesystem::path& path) {
  save_model_file(ModelFile{network, std::nullopt, std::nullopt}, path);
}

// ---- IDX -------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError("IDX: file too short for a header");
  IdxArray out;
  out.magic = read_be32(bytes, 0);
  if (out.magic != kImageMagic && out.magic != kLabelMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08" PRIX32, out.magic);
    throw ParseError(std::string("IDX: unsupported magic ") + buf);
  }
  const std::size_t ndims = out.magic & 0xFF;
  if (bytes.size() < 4 + 4 * ndims) throw ParseError("IDX: truncated dimension header");
  std::size_t payload = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t extent = read_be32(bytes, 4 + 4 * d);
    if (extent != 0 && payload > static_cast<std::size_t>(-1) / extent) throw ParseError("IDX: dimension overflow");
    payload *= extent;
    out.dims.push_back(extent);
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() - header != payload) {
    throw ParseError("IDX: header declares " + std::to_string(payload) + " values, payload has " +
                     std::to_string(bytes.size() - header));
  }
  out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

IdxArray load_idx(const std::filesystem::path& path) { return parse_idx(read_bytes(path)); }

std::vector<Tensor> idx_images(const IdxArray& array) {
  if (array.magic != kImageMagic) throw ParseError("IDX: not an image file");
  const std::size_t count = array.dims[0], rows = array.dims[1], cols = array.dims[2];
  if (rows == 0 || cols == 0) throw ParseError("IDX: empty image extent");
  std::vector<Tensor> images;
  images.reserve(count);
  const std::size_t plane = rows * cols;
  for (std::size_t n = 0; n < count; ++n) {
    Tensor t({1, rows, cols});
    for (std::size_t i = 0; i < plane; ++i) t[i] = array.values[n * plane + i] / 255.0;
    images.push_back(std::move(t));
  }
  return images;
}

std::vector<std::size_t> idx_labels(const IdxArray& array) {
  if (array.magic != kLabelMagic) throw ParseError("IDX: not a label file");
  return {array.values.begin(), array.values.end()};
}

std::vector<std::uint8_t> encode_idx_images(std::span<const Tensor> images) {
  if (images.empty()) throw std::invalid_argument("encode_idx_images: no images");
  const Shape& s = images.front().shape();
  if (s.size() < 2) throw ShapeError("IDX images need at least two axes");
  const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  std::vector<std::uint8_t> out;
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.size()));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  for (const Tensor& img : images) {
    if (img.size() != rows * cols) throw ShapeError("IDX images must share one single-channel shape");
    for (double v : img.values()) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::size_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t l : labels) {
    if (l > 255) throw std::invalid_argument("IDX labels must fit in a byte");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

// ---- CSV / PPM ---------------------------------------------------------------

std::string heatmap_to_csv(const Heatmap& heatmap) {
  std::string out = "# shape=" + shape_to_string(heatmap.scores.shape()) + " method=" + heatmap.method +
                    " total=" + format_double(heatmap.total) +
                    " explained_value=" + format_double(heatmap.explained_value) +
                    " absorbed=" + std::to_string(heatmap.absorbed) + "\n";
  out += "index,relevance\n";
  for (std::size_t i = 0; i < heatmap.scores.size(); ++i) {
    out += std::to_string(i) + "," + format_double(heatmap.scores[i]) + "\n";
  }
  return out;
}

namespace {

Shape parse_shape(const std::string& text) {
  // "(1x28x28)"
  if (text.size() < 3 || text.front() != '(' || text.back() != ')') throw ParseError("heatmap CSV: bad shape " + text);
  Shape shape;
  std::stringstream ss(text.substr(1, text.size() - 2));
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      shape.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw ParseError("heatmap CSV: bad shape " + text);
    }
  }
  return shape;
}

}  // namespace

Heatmap heatmap_from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw ParseError("heatmap CSV: missing metadata line");
  std::istringstream meta(line.substr(2));
  std::string field;
  Shape shape;
  std::string method = "unknown";
  double explained = 0.0;
  std::size_t absorbed = 0;
  while (meta >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    try {
      if (key == "shape") shape = parse_shape(value);
      if (key == "method") method = value;
      if (key == "explained_value") explained = std::stod(value);
      if (key == "absorbed") absorbed = std::stoul(value);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("heatmap CSV: bad value for " + key);
    }
  }
  if (shape.empty()) throw ParseError("heatmap CSV: metadata lacks shape");
  if (!std::getline(in, line) || line != "index,relevance") throw ParseError("heatmap CSV: missing header");
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("heatmap CSV: bad row '" + line + "'");
    try {
      if (std::stoul(line.substr(0, comma)) != values.size()) throw ParseError("heatmap CSV: rows out of order");
      values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("heatmap CSV: bad row '" + line + "'");
    }
  }
  if (values.size() != element_count(shape)) throw ParseError("heatmap CSV: row count does not match shape");
  return Heatmap::make(Tensor(std::move(shape), std::move(values)), explained, method, absorbed);
}

std::string tensor_to_csv(const Tensor& tensor) {
  std::string out = "# shape=" + shape_to_string(tensor.shape()) + "\nindex,value\n";
  for (std::size_t i = 0; i < tensor.size(); ++i) out += std::to_string(i) + "," + format_double(tensor[i]) + "\n";
  return out;
}

std::string curve_to_csv(const FlipCurve& curve) {
  std::string out = "# auc=" + format_double(curve.auc) + " normalization=trapezoid/steps\nstep,value\n";
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    out += std::to_string(i) + "," + format_double(curve.values[i]) + "\n";
  }
  return out;
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(image.rgb.begin(), image.rgb.end());
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  return {text.begin(), text.end()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  write_text(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace relkit
