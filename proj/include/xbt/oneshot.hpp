#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xbt/netgraph.hpp"
#include "xbt/rng.hpp"
#include "xbt/tensor.hpp"

namespace xbt {

// ---------------------------------------------------------------------------
// Output-distribution statistics and divergences
// ---------------------------------------------------------------------------

inline constexpr double kMinStddev = 1e-12;

struct OutputStats {
  double mean = 0.0;
  double stddev = 1.0;  // population convention, clamped below at kMinStddev
  std::size_t n = 0;

  bool operator==(const OutputStats&) const = default;
};

/// Throws ValueError when y has fewer than 2 elements.
OutputStats output_stats(const Tensor& y);

/// KL divergence of N(mean, stddev^2) from the unit Gaussian:
/// -ln(stddev) + (stddev^2 + mean^2) / 2 - 1/2.
double kl_divergence(double mean, double stddev);
double kl_divergence(const OutputStats& stats);

/// KL divergence of N(mean_hat, sd_hat^2) from N(mean, sd^2). Throws on nonpositive deviations.
double kl_general(double mean_hat, double sd_hat, double mean, double sd);

// ---------------------------------------------------------------------------
// Training targets and losses
// ---------------------------------------------------------------------------

enum class GroundTruthMode { standardized_self, gaussian_sample };
enum class LossKind { moment, pointwise_kl, mse };

std::string to_string(GroundTruthMode mode);
std::string to_string(LossKind kind);
GroundTruthMode ground_truth_mode_from_string(const std::string& name);
LossKind loss_kind_from_string(const std::string& name);

/// (y - mean) / stddev. Throws ValueError when y is degenerate (stddev clamped).
Tensor ground_truth(const Tensor& y);
/// n draws from N(0, 1).
Tensor ground_truth_sample(std::size_t n, RngStream& rng);

/// Loss value and its gradient with respect to the network output.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

/// (1/N) sum y_i ln(y_i / t_i); every y_i and t_i must be strictly positive.
LossValue loss_pointwise_kl(const Tensor& y, const Tensor& target);
/// mean^2 + (1 - stddev)^2 of y.
LossValue loss_moment(const Tensor& y);
/// (1/N) sum (y_i - t_i)^2.
LossValue loss_mse(const Tensor& y, const Tensor& target);

// ---------------------------------------------------------------------------
// Test-vector generation
// ---------------------------------------------------------------------------

enum class InitMode { gaussian, file };

struct GenConfig {
  LossKind loss = LossKind::moment;
  GroundTruthMode ground_truth = GroundTruthMode::standardized_self;
  double alpha0 = 0.1;
  std::size_t iterations = 300;
  std::size_t decay_every = 100;
  std::uint64_t seed = 0;
  InitMode init = InitMode::gaussian;
  std::string init_file;
  /// Generation is flagged unconverged when the baseline divergence ends above this.
  double target_dkl = 1e-7;

  void validate() const;
  bool operator==(const GenConfig&) const = default;
};

/// Step size at iteration t (1-based): alpha0 divided by 10 once per completed
/// multiple of decay_every, i.e. alpha0 * 10^-floor(t / decay_every).
double learning_rate(const GenConfig& config, std::size_t t);

/// Fault-free reference statistics of a test vector.
struct Baseline {
  double mu0 = 0.0;
  double sigma0 = 1.0;
  double dkl0 = 0.0;

  bool operator==(const Baseline&) const = default;
};

struct TestVector {
  Tensor input;
  std::string provenance;  // "gaussian-init" or "file-init:<path>"
  GenConfig config;
  Baseline baseline;
  bool converged = true;
  std::vector<double> loss_history;  // loss before each update
};

/// Pre-softmax statistics of `input` on the given model.
Baseline measure_baseline(const ModelSpec& spec, const ParameterStore& params, const Tensor& input);

/// Gradient descent on the input so the reference logits have zero mean and
/// unit variance. `reference` should be the quantized fault-free model.
/// `init` overrides the configured initialization when given. The final vector
/// is rounded to float32 before the baseline is measured, so a saved and
/// reloaded vector reproduces the baseline exactly.
TestVector generate_test_vector(const ModelSpec& spec, const ParameterStore& reference,
                                const GenConfig& config, std::optional<Tensor> init = {});

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

struct DetectionResult {
  OutputStats stats;
  double d_kl = 0.0;
  double threshold = 0.0;
  bool faulty = false;

  bool operator==(const DetectionResult&) const = default;
};

/// faulty iff d_kl >= threshold. Throws ValueError unless threshold > 0.
DetectionResult classify(const OutputStats& stats, double threshold);

/// One forward pass of the test vector through the model under test.
DetectionResult detect(const ModelSpec& spec, const ParameterStore& params_under_test,
                       const TestVector& tv, double threshold);

// ---------------------------------------------------------------------------
// Test-vector files: JSON manifest plus a sibling .bin of little-endian float32
// ---------------------------------------------------------------------------

/// Path of the payload file belonging to a manifest (same stem, .bin).
std::filesystem::path test_vector_payload_path(const std::filesystem::path& manifest);

void save_test_vector(const TestVector& tv, const std::filesystem::path& manifest,
                      bool overwrite = false);
TestVector load_test_vector(const std::filesystem::path& manifest);

/// Initial input read from a raw float32 .bin of matching size or a binary
/// PPM (P6) image scaled to [0, 1] for [3,H,W] inputs.
Tensor load_init_file(const std::filesystem::path& path, const Shape& shape);

}  // namespace xbt
