#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xbt/netgraph.hpp"
#include "xbt/quantmap.hpp"
#include "xbt/rng.hpp"

namespace xbt {

enum class FaultKind { multiplicative_variation, additive_variation, bit_flip, level_flip };

std::string_view to_string(FaultKind kind);
/// Accepts "multiplicative-variation", "additive-variation", "bit-flip", "level-flip".
FaultKind fault_kind_from_string(std::string_view name);
bool is_variation(FaultKind kind) noexcept;

/// One fault instance description. severity is eta0 (noise standard deviation)
/// for variations and P_flip in percent for flips.
struct FaultConfig {
  FaultKind kind = FaultKind::multiplicative_variation;
  double severity = 0.0;
  std::uint64_t seed = 0;

  /// Throws ValueError unless severity >= 0 (and <= 100 for flips).
  void validate() const;
  bool operator==(const FaultConfig&) const = default;
};

/// JSON object {"kind": ..., "severity": ..., "seed": ...}; seed is optional.
FaultConfig parse_fault_config(const std::string& json_text);
FaultConfig load_fault_config(const std::filesystem::path& path);
std::string fault_config_to_json(const FaultConfig& config);

/// Number of cells a flip campaign alters: round(p_flip / 100 * cells).
std::size_t flip_count(double p_flip, std::size_t cells);

/// `count` distinct indices from [0, population), ascending (Floyd's algorithm).
std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    RngStream& rng);

/// Gaussian noise on every crossbar-mapped weight: W(1 + e) or W + e with
/// e ~ N(0, eta0^2) per element. Biases and batch-norm constants are untouched.
ParameterStore inject_variation(const ParameterStore& params, FaultKind kind, double eta0,
                                RngStream& rng);

/// Complements exactly flip_count(p_flip, cells) distinct cells of a bit-wise image.
CrossbarImage inject_bitflip(const CrossbarImage& img, double p_flip, RngStream& rng);

/// Reassigns flip_count(p_flip, weights) distinct weights of a level-wise image
/// to a level drawn uniformly from [-127, 127].
CrossbarImage inject_levelflip(const CrossbarImage& img, double p_flip, RngStream& rng);

/// Complements the given cells of a bit-wise image.
CrossbarImage flip_cells(const CrossbarImage& img, const std::vector<std::size_t>& cells);

/// Parameters of one faulty crossbar instance derived from fault-free `params`.
/// Flips: quantize, encode, inject per layer, decode, dequantize. Variations:
/// dequantize the quantized reference, then inject. The RNG is seeded from config.seed.
ParameterStore realize_faulty_model(const ModelSpec& spec, const ParameterStore& params,
                                    const FaultConfig& config);

/// Same, reusing a precomputed quantization of `params`.
ParameterStore realize_faulty_model(const ParameterStore& params, const QuantizedModel& quantized,
                                    const FaultConfig& config);

}  // namespace xbt
