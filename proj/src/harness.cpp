#include "xbt/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <thread>

#include "f32io.hpp"
#include "xbt/error.hpp"
#include "xbt/quantmap.hpp"

namespace xbt {
namespace {

using json = nlohmann::json;

// Shortest text that round-trips to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::filesystem::path resolve(const CampaignSpec& c, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : c.base_dir / path;
}

std::string column_name(const CellResult& cell) {
  return std::string(to_string(cell.kind)) + "@" + num(cell.severity);
}

}  // namespace

void CampaignSpec::normalize() {
  if (instances < 1) throw ValueError("campaign needs M >= 1 instances");
  if (thresholds.empty()) throw ValueError("campaign needs at least one threshold");
  for (double t : thresholds)
    if (!(t > 0.0) || !std::isfinite(t)) throw ValueError("thresholds must be positive and finite");
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  for (const auto& g : grid) {
    if (g.severities.empty()) throw ValueError("grid entry without severities");
    for (double s : g.severities) FaultConfig{g.kind, s, 0}.validate();
  }
}

CampaignSpec parse_campaign(const std::string& json_text, const std::filesystem::path& base_dir) {
  CampaignSpec c;
  c.base_dir = base_dir;
  try {
    const json j = json::parse(json_text);
    c.model = j.at("model").get<std::string>();
    c.weights = j.at("weights").get<std::string>();
    c.tv = j.at("tv").get<std::string>();
    for (const auto& g : j.at("grid")) {
      GridEntry e;
      e.kind = fault_kind_from_string(g.at("kind").get<std::string>());
      if (g.contains("severities")) {
        e.severities = g.at("severities").get<std::vector<double>>();
      } else {
        e.severities = {g.at("severity").get<double>()};
      }
      c.grid.push_back(std::move(e));
    }
    const auto m = j.value("M", std::int64_t{1000});
    if (m < 1) throw ValueError("campaign needs M >= 1 instances");
    c.instances = static_cast<std::size_t>(m);
    if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::vector<double>>();
    c.base_seed = j.value("base_seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed campaign: ") + e.what());
  }
  c.normalize();
  return c;
}

CampaignSpec load_campaign(const std::filesystem::path& path) {
  return parse_campaign(detail::read_text(path), path.parent_path());
}

std::uint64_t instance_seed(std::uint64_t base_seed, std::uint64_t instance_index) noexcept {
  return splitmix64(base_seed ^ instance_index);
}

double coverage_percent(std::size_t detected, std::size_t instances) {
  if (instances == 0) throw ValueError("coverage over zero instances");
  return 100.0 * static_cast<double>(detected) / static_cast<double>(instances);
}

CoverageReport run_coverage(const ModelSpec& spec, const ParameterStore& params,
                            const TestVector& tv, const CampaignSpec& campaign_in,
                            const CoverageOptions& options) {
  CampaignSpec campaign = campaign_in;
  campaign.normalize();
  validate_params(spec, params);
  if (tv.input.shape() != spec.input_shape)
    throw ShapeError("test vector " + shape_str(tv.input.shape()) + " does not fit model input " +
                     shape_str(spec.input_shape));

  const QuantizedModel quantized = quantize_model(spec, params);
  const ParameterStore reference = dequantize_model(params, quantized);
  const Baseline measured = measure_baseline(spec, reference, tv.input);
  if (std::abs(measured.dkl0 - tv.baseline.dkl0) > 1e-9 * std::max(1.0, std::abs(tv.baseline.dkl0)) ||
      std::abs(measured.mu0 - tv.baseline.mu0) > 1e-9 ||
      std::abs(measured.sigma0 - tv.baseline.sigma0) > 1e-9)
    throw ValueError("test vector baseline (D0 = " + num(tv.baseline.dkl0) +
                     ") does not match the reference model (D0 = " + num(measured.dkl0) +
                     "); was it generated for this model?");

  CoverageReport report;
  report.campaign = campaign;
  report.baseline = tv.baseline;
  const std::size_t M = campaign.instances;
  const std::size_t threads = std::max<std::size_t>(1, options.threads);

  std::uint64_t cell_index = 0;
  for (const auto& g : campaign.grid)
    for (double severity : g.severities) {
      CellResult cell{g.kind, severity, std::vector<double>(M, 0.0),
                      std::vector<std::size_t>(campaign.thresholds.size(), 0)};
      const std::uint64_t first = cell_index * M;
      auto work = [&](std::size_t worker) {
        for (std::size_t i = worker; i < M; i += threads) {
          const FaultConfig fc{g.kind, severity, instance_seed(campaign.base_seed, first + i)};
          const ParameterStore faulty = realize_faulty_model(params, quantized, fc);
          const Tensor y = forward_network(spec, faulty, tv.input).output;
          cell.d_kl[i] = kl_divergence(output_stats(y));
        }
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
      }
      for (double d : cell.d_kl)
        for (std::size_t k = 0; k < campaign.thresholds.size(); ++k)
          cell.detected[k] += d >= campaign.thresholds[k];
      report.instance_forward_passes += M;
      report.cells.push_back(std::move(cell));
      ++cell_index;
    }
  return report;
}

CoverageReport run_coverage(const CampaignSpec& campaign, const CoverageOptions& options) {
  const LoadedModel model = load_model(resolve(campaign, campaign.model), resolve(campaign, campaign.weights));
  const TestVector tv = load_test_vector(resolve(campaign, campaign.tv));
  return run_coverage(model.spec, model.params, tv, campaign, options);
}

std::string report_csv(const CoverageReport& r) {
  const auto& c = r.campaign;
  std::ostringstream out;
  out << "# model=" << c.model << " weights=" << c.weights << " tv=" << c.tv << "\n";
  out << "# M=" << c.instances << " base_seed=" << c.base_seed << " thresholds=";
  for (std::size_t k = 0; k < c.thresholds.size(); ++k) out << (k ? ";" : "") << num(c.thresholds[k]);
  out << "\n# baseline mu0=" << num(r.baseline.mu0) << " sigma0=" << num(r.baseline.sigma0)
      << " dkl0=" << num(r.baseline.dkl0) << "\n";
  out << "kind,severity,threshold,detected,M,coverage_percent\n";
  for (const auto& cell : r.cells)
    for (std::size_t k = 0; k < c.thresholds.size(); ++k)
      out << to_string(cell.kind) << "," << num(cell.severity) << "," << num(c.thresholds[k]) << ","
          << cell.detected[k] << "," << c.instances << ","
          << num(coverage_percent(cell.detected[k], c.instances)) << "\n";
  return out.str();
}

std::string report_json(const CoverageReport& r) {
  const auto& c = r.campaign;
  json j;
  j["campaign"] = {{"model", c.model},       {"weights", c.weights},
                   {"tv", c.tv},             {"M", c.instances},
                   {"base_seed", c.base_seed}, {"thresholds", c.thresholds}};
  j["baseline"] = {{"mu0", r.baseline.mu0}, {"sigma0", r.baseline.sigma0}, {"dkl0", r.baseline.dkl0}};
  j["cells"] = json::array();
  for (const auto& cell : r.cells) {
    json rows = json::array();
    for (std::size_t k = 0; k < c.thresholds.size(); ++k)
      rows.push_back({{"threshold", c.thresholds[k]},
                      {"detected", cell.detected[k]},
                      {"coverage_percent", coverage_percent(cell.detected[k], c.instances)}});
    j["cells"].push_back({{"kind", std::string(to_string(cell.kind))},
                          {"severity", cell.severity},
                          {"coverage", rows},
                          {"d_kl", cell.d_kl}});
  }
  return j.dump(2) + "\n";
}

SweepTable threshold_sweep(const CoverageReport& r) {
  SweepTable t;
  t.thresholds = r.campaign.thresholds;
  for (const auto& cell : r.cells) t.columns.push_back(column_name(cell));
  t.coverage.assign(t.thresholds.size(), std::vector<double>(r.cells.size(), 0.0));
  for (std::size_t col = 0; col < r.cells.size(); ++col)
    for (std::size_t k = 0; k < t.thresholds.size(); ++k) {
      t.coverage[k][col] = coverage_percent(r.cells[col].detected[k], r.campaign.instances);
      if (k > 0 && t.coverage[k][col] < t.coverage[k - 1][col]) t.monotone = false;
    }
  return t;
}

std::string SweepTable::to_text() const {
  std::ostringstream out;
  out << "threshold";
  for (const auto& c : columns) out << "\t" << c;
  out << "\n";
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    out << num(thresholds[k]);
    for (double v : coverage[k]) out << "\t" << num(v);
    out << "\n";
  }
  return out.str();
}

}  // namespace xbt
