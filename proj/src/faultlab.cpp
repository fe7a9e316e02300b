#include "xbt/faultlab.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "f32io.hpp"
#include "xbt/error.hpp"

namespace xbt {

std::string_view to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::multiplicative_variation:
      return "multiplicative-variation";
    case FaultKind::additive_variation:
      return "additive-variation";
    case FaultKind::bit_flip:
      return "bit-flip";
    case FaultKind::level_flip:
      return "level-flip";
  }
  return "unknown";
}

FaultKind fault_kind_from_string(std::string_view name) {
  for (auto k : {FaultKind::multiplicative_variation, FaultKind::additive_variation,
                 FaultKind::bit_flip, FaultKind::level_flip})
    if (to_string(k) == name) return k;
  throw ValueError("unknown fault kind '" + std::string(name) + "'");
}

bool is_variation(FaultKind kind) noexcept {
  return kind == FaultKind::multiplicative_variation || kind == FaultKind::additive_variation;
}

void FaultConfig::validate() const {
  if (!(severity >= 0.0) || !std::isfinite(severity))
    throw ValueError("fault severity must be a finite value >= 0");
  if (!is_variation(kind) && severity > 100.0)
    throw ValueError("P_flip is a percentage and cannot exceed 100");
}

FaultConfig parse_fault_config(const std::string& json_text) {
  FaultConfig c;
  try {
    const auto j = nlohmann::json::parse(json_text);
    c.kind = fault_kind_from_string(j.at("kind").get<std::string>());
    c.severity = j.at("severity").get<double>();
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed fault config: ") + e.what());
  }
  c.validate();
  return c;
}

FaultConfig load_fault_config(const std::filesystem::path& path) {
  return parse_fault_config(detail::read_text(path));
}

std::string fault_config_to_json(const FaultConfig& config) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(config.kind));
  j["severity"] = config.severity;
  j["seed"] = config.seed;
  return j.dump();
}

std::size_t flip_count(double p_flip, std::size_t cells) {
  if (!(p_flip >= 0.0) || p_flip > 100.0) throw ValueError("P_flip must lie in [0, 100]");
  return static_cast<std::size_t>(std::llround(p_flip / 100.0 * static_cast<double>(cells)));
}

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    RngStream& rng) {
  if (count > population) throw ValueError("cannot sample more items than the population");
  std::vector<bool> taken(population, false);
  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  for (std::size_t j = population - count; j < population; ++j) {
    std::size_t t = rng.below(j + 1);
    if (taken[t]) t = j;
    taken[t] = true;
    chosen.push_back(t);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

ParameterStore inject_variation(const ParameterStore& params, FaultKind kind, double eta0,
                                RngStream& rng) {
  if (!is_variation(kind)) throw ValueError("inject_variation needs a variation fault kind");
  if (!(eta0 >= 0.0)) throw ValueError("eta0 must be >= 0");
  ParameterStore out = params;
  if (eta0 == 0.0) return out;
  for (auto& layer : out.layers) {
    for (auto& w : layer.weight.data()) {
      const double e = eta0 * rng.normal();
      w = kind == FaultKind::multiplicative_variation ? w * (1.0 + e) : w + e;
    }
  }
  return out;
}

CrossbarImage flip_cells(const CrossbarImage& img, const std::vector<std::size_t>& cells) {
  if (img.encoding != CellEncoding::bitwise) throw ValueError("bit flips need a bit-wise image");
  CrossbarImage out = img;
  for (std::size_t c : cells) {
    if (c >= out.cells.size()) throw ValueError("cell index out of range");
    out.cells[c] ^= 1u;
  }
  return out;
}

CrossbarImage inject_bitflip(const CrossbarImage& img, double p_flip, RngStream& rng) {
  if (img.encoding != CellEncoding::bitwise) throw ValueError("bit flips need a bit-wise image");
  const std::size_t n = flip_count(p_flip, img.cells.size());
  if (n == 0) return img;
  return flip_cells(img, sample_without_replacement(img.cells.size(), n, rng));
}

CrossbarImage inject_levelflip(const CrossbarImage& img, double p_flip, RngStream& rng) {
  if (img.encoding != CellEncoding::levelwise)
    throw ValueError("level flips need a level-wise image");
  const std::size_t weights = img.num_weights();
  const std::size_t n = flip_count(p_flip, weights);
  CrossbarImage out = img;
  if (n == 0) return out;
  for (std::size_t w : sample_without_replacement(weights, n, rng)) {
    const int level = static_cast<int>(rng.below(2 * kMaxLevel + 1)) - kMaxLevel;
    out.cells[2 * w] = level < 0 ? 1 : 0;
    out.cells[2 * w + 1] = static_cast<std::uint8_t>(std::abs(level));
  }
  return out;
}

ParameterStore realize_faulty_model(const ParameterStore& params, const QuantizedModel& quantized,
                                    const FaultConfig& config) {
  config.validate();
  RngStream rng(config.seed);
  if (is_variation(config.kind))
    return inject_variation(dequantize_model(params, quantized), config.kind, config.severity, rng);

  QuantizedModel faulty;
  faulty.weights.resize(quantized.weights.size());
  for (std::size_t i = 0; i < quantized.weights.size(); ++i) {
    if (!quantized.weights[i]) continue;
    if (config.kind == FaultKind::bit_flip) {
      faulty.weights[i] =
          decode_bitwise(inject_bitflip(encode_bitwise(*quantized.weights[i]), config.severity, rng));
    } else {
      faulty.weights[i] = decode_levelwise(
          inject_levelflip(encode_levelwise(*quantized.weights[i]), config.severity, rng));
    }
  }
  return dequantize_model(params, faulty);
}

ParameterStore realize_faulty_model(const ModelSpec& spec, const ParameterStore& params,
                                    const FaultConfig& config) {
  return realize_faulty_model(params, quantize_model(spec, params), config);
}

}  // namespace xbt
