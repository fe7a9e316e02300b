#include <json.hpp>

#include <algorithm>

#include "f32io.hpp"
#include "xbt/error.hpp"
#include "xbt/netgraph.hpp"

namespace xbt {
namespace {

using json = nlohmann::json;
constexpr int kFormatVersion = 1;

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = std::string(to_string(l.kind));
  switch (l.kind) {
    case LayerKind::linear:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::conv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::batchnorm:
      j["channels"] = l.channels;
      j["eps"] = l.eps;
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l = LayerSpec::of(layer_kind_from_string(j.at("kind").get<std::string>()));
  switch (l.kind) {
    case LayerKind::linear:
      l.in_features = j.at("in_features").get<std::size_t>();
      l.out_features = j.at("out_features").get<std::size_t>();
      break;
    case LayerKind::conv2d:
      l.in_channels = j.at("in_channels").get<std::size_t>();
      l.out_channels = j.at("out_channels").get<std::size_t>();
      l.kernel = j.at("kernel").get<std::size_t>();
      l.stride = j.value("stride", std::size_t{1});
      l.padding = j.value("padding", std::size_t{0});
      break;
    case LayerKind::batchnorm:
      l.channels = j.at("channels").get<std::size_t>();
      l.eps = j.value("eps", 1e-5);
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      l.kernel = j.at("kernel").get<std::size_t>();
      l.stride = j.value("stride", l.kernel);
      break;
    default:
      break;
  }
  return l;
}

std::vector<unsigned char> encode_blob(const ModelSpec& spec, const ParameterStore& params) {
  std::vector<unsigned char> blob;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    for (auto name : param_names(spec.layers[i].kind))
      for (double v : params.layers[i].get(name).data()) detail::append_f32(blob, v);
  detail::append_u32(blob, detail::crc32(blob, blob.size()));
  return blob;
}

void check_saveable(const ModelSpec& spec, const ParameterStore& params) {
  if (spec.layers.empty()) throw ValueError("refusing to save a model with no layers");
  propagate_shapes(spec);
  validate_params(spec, params);
}

}  // namespace

void save_weights(const ModelSpec& spec, const ParameterStore& params,
                  const std::filesystem::path& weights_path, bool overwrite) {
  check_saveable(spec, params);
  detail::write_file(weights_path, encode_blob(spec, params), overwrite);
}

void save_model(const ModelSpec& spec, const ParameterStore& params,
                const std::filesystem::path& spec_path, const std::filesystem::path& weights_path,
                bool overwrite) {
  check_saveable(spec, params);
  if (!overwrite) {
    for (const auto& p : {spec_path, weights_path})
      if (std::filesystem::exists(p))
        throw FormatError(p.string() + " already exists (pass overwrite to replace it)");
  }

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["input_shape"] = spec.input_shape;
  manifest["num_classes"] = spec.num_classes;
  manifest["layers"] = json::array();
  std::size_t offset = 0;
  for (const auto& l : spec.layers) {
    json j = layer_to_json(l);
    json offsets = json::object();
    for (const auto& [name, shape] : param_shapes(l)) {
      offsets[std::string(name)] = offset;
      offset += shape_numel(shape);
    }
    if (!offsets.empty()) j["param_offsets"] = offsets;
    manifest["layers"].push_back(std::move(j));
  }
  detail::write_text(spec_path, manifest.dump(2) + "\n", overwrite);
  detail::write_file(weights_path, encode_blob(spec, params), overwrite);
}

LoadedModel load_model(const std::filesystem::path& spec_path,
                       const std::filesystem::path& weights_path) {
  LoadedModel model;
  std::vector<std::vector<std::pair<std::string, std::size_t>>> offsets;
  try {
    const json manifest = json::parse(detail::read_text(spec_path));
    const int version = manifest.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw FormatError("unsupported model format_version " + std::to_string(version));
    model.spec.input_shape = manifest.at("input_shape").get<Shape>();
    model.spec.num_classes = manifest.at("num_classes").get<std::size_t>();
    for (const auto& jl : manifest.at("layers")) {
      model.spec.layers.push_back(layer_from_json(jl));
      auto& entry = offsets.emplace_back();
      if (jl.contains("param_offsets"))
        for (const auto& [name, off] : jl.at("param_offsets").items())
          entry.emplace_back(name, off.get<std::size_t>());
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed model manifest " + spec_path.string() + ": " + e.what());
  }
  propagate_shapes(model.spec);

  const auto blob = detail::read_file(weights_path);
  if (blob.size() < 4 || blob.size() % 4 != 0)
    throw FormatError("weight blob " + weights_path.string() + " is truncated");
  const std::size_t payload = blob.size() - 4;
  if (detail::crc32(blob, payload) != detail::read_u32(blob.data() + payload))
    throw FormatError("weight blob " + weights_path.string() + " failed its CRC32 check");
  const std::size_t available = payload / 4;

  std::size_t declared = 0;
  model.params.layers.resize(model.spec.layers.size());
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const auto shapes = param_shapes(model.spec.layers[i]);
    if (shapes.size() != offsets[i].size())
      throw FormatError("layer " + std::to_string(i) + " declares " +
                        std::to_string(offsets[i].size()) + " parameter offsets, expected " +
                        std::to_string(shapes.size()));
    for (const auto& [name, shape] : shapes) {
      auto it = std::find_if(offsets[i].begin(), offsets[i].end(),
                             [&](const auto& e) { return e.first == name; });
      if (it == offsets[i].end())
        throw FormatError("layer " + std::to_string(i) + " has no offset for " + std::string(name));
      const std::size_t count = shape_numel(shape);
      if (it->second + count > available)
        throw FormatError("weight blob " + weights_path.string() + " holds " +
                          std::to_string(available) + " values, layer " + std::to_string(i) +
                          " needs up to " + std::to_string(it->second + count));
      std::vector<double> values(count);
      for (std::size_t k = 0; k < count; ++k)
        values[k] = detail::read_f32(blob.data() + 4 * (it->second + k));
      model.params.layers[i].get(name) = Tensor(shape, std::move(values));
      declared += count;
    }
  }
  if (declared != available)
    throw FormatError("weight blob " + weights_path.string() + " holds " +
                      std::to_string(available) + " values but the manifest declares " +
                      std::to_string(declared));
  return model;
}

}  // namespace xbt
