#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xbt/faultlab.hpp"
#include "xbt/netgraph.hpp"
#include "xbt/oneshot.hpp"

namespace xbt {

// ---------------------------------------------------------------------------
// Desk-scale fixture models
// ---------------------------------------------------------------------------

enum class ToyArch { mlp, cnn, resnet_mini };

std::string to_string(ToyArch arch);
ToyArch toy_arch_from_string(const std::string& name);

struct ToyModelOptions {
  bool trained = false;
  /// Spatial size of image inputs ([3, S, S]); must be a multiple of 4.
  std::size_t image_size = 16;
  double target_accuracy = 0.90;
  std::size_t max_epochs = 40;
  /// Final weight layer is rescaled so logits on unit-Gaussian inputs have this
  /// RMS spread (argmax unchanged). 0 keeps the raw scale.
  double logit_scale = 12.0;
};

struct ToyModel {
  ModelSpec spec;
  ParameterStore params;
  bool few_classes_warning = false;   // fewer than 20 outputs
  bool accuracy_warning = false;      // trained but below target accuracy
  double train_accuracy = 0.0;        // 0 for untrained models
  std::size_t epochs = 0;
};

/// Labelled synthetic Gaussian blobs: one random centre per class.
struct BlobDataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
};

BlobDataset make_blob_dataset(const Shape& input_shape, std::size_t num_classes,
                              std::size_t per_class, std::uint64_t seed);

double classification_accuracy(const ModelSpec& spec, const ParameterStore& params,
                               const BlobDataset& data);

/// Architecture-only description of a fixture model (layers and shapes).
ModelSpec toy_model_spec(ToyArch arch, std::size_t num_classes, std::size_t image_size = 16);

/// Deterministic in (arch, num_classes, seed, options). num_classes must be >= 2.
/// Parameters come back float32-representable, equal to what save_model writes.
/// Trained models are fit with mini-batch SGD on cross-entropy over a blob
/// dataset until the training accuracy target or the epoch cap is reached.
ToyModel make_toy_model(ToyArch arch, std::size_t num_classes, std::uint64_t seed,
                        const ToyModelOptions& options = {});

// ---------------------------------------------------------------------------
// Monte Carlo fault-coverage campaigns
// ---------------------------------------------------------------------------

struct GridEntry {
  FaultKind kind = FaultKind::multiplicative_variation;
  std::vector<double> severities;
};

struct CampaignSpec {
  std::string model;
  std::string weights;
  std::string tv;
  std::vector<GridEntry> grid;
  std::size_t instances = 1000;
  std::vector<double> thresholds{1e-4};
  std::uint64_t base_seed = 0;
  /// Directory that relative paths are resolved against.
  std::filesystem::path base_dir;

  /// Sorts thresholds descending and removes duplicates; throws ValueError on
  /// M < 1, nonpositive thresholds or invalid severities.
  void normalize();
};

CampaignSpec parse_campaign(const std::string& json_text, const std::filesystem::path& base_dir);
CampaignSpec load_campaign(const std::filesystem::path& path);

/// seed_i = splitmix64(base_seed XOR i); i counts instances across the whole campaign.
std::uint64_t instance_seed(std::uint64_t base_seed, std::uint64_t instance_index) noexcept;

struct CellResult {
  FaultKind kind;
  double severity;
  std::vector<double> d_kl;            // per instance, index order
  std::vector<std::size_t> detected;   // per threshold, campaign order
};

struct CoverageReport {
  CampaignSpec campaign;
  Baseline baseline;
  std::vector<CellResult> cells;
  /// Forward passes spent on fault instances (one per instance).
  std::uint64_t instance_forward_passes = 0;
};

double coverage_percent(std::size_t detected, std::size_t instances);

struct CoverageOptions {
  std::size_t threads = 1;
};

/// Runs the campaign on an in-memory model. `params` are the fault-free
/// (unquantized) parameters; each instance gets exactly one forward pass.
/// Throws ValueError when the test vector's baseline does not match the
/// quantized reference model.
CoverageReport run_coverage(const ModelSpec& spec, const ParameterStore& params,
                            const TestVector& tv, const CampaignSpec& campaign,
                            const CoverageOptions& options = {});

/// Loads model, weights and test vector named by the campaign and runs it.
CoverageReport run_coverage(const CampaignSpec& campaign, const CoverageOptions& options = {});

/// Canonical CSV: '#' provenance lines, then
/// kind,severity,threshold,detected,M,coverage_percent.
std::string report_csv(const CoverageReport& report);
/// JSON mirror including per-instance divergences.
std::string report_json(const CoverageReport& report);

/// Coverage matrix: rows are thresholds (descending), columns are grid cells.
struct SweepTable {
  std::vector<double> thresholds;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> coverage;  // [threshold][column]
  /// Coverage never drops as the threshold decreases, in every column.
  bool monotone = true;

  std::string to_text() const;
};

SweepTable threshold_sweep(const CoverageReport& report);

}  // namespace xbt
