#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "xbt/error.hpp"
#include "xbt/faultlab.hpp"
#include "xbt/gradcheck.hpp"
#include "xbt/harness.hpp"
#include "xbt/netgraph.hpp"
#include "xbt/oneshot.hpp"
#include "xbt/quantmap.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitFaulty = 1;
constexpr int kExitUsage = 2;
constexpr int kExitError = 3;

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

void write_new(const fs::path& path, const std::string& text, bool overwrite) {
  if (!overwrite && fs::exists(path))
    throw xbt::FormatError(path.string() + " already exists (use --overwrite)");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw xbt::FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw xbt::FormatError("write to " + path.string() + " failed");
}

struct GenArgs {
  std::string model, weights, out, loss = "moment", ground_truth = "standardized-self";
  std::string init = "gaussian", init_file;
  double alpha0 = 0.1;
  std::size_t iters = 300, decay_every = 100;
  std::uint64_t seed = 0;
  bool overwrite = false;
};

int run_gen(const GenArgs& a) {
  const auto m = xbt::load_model(a.model, a.weights);
  xbt::GenConfig cfg;
  cfg.loss = xbt::loss_kind_from_string(a.loss);
  cfg.ground_truth = xbt::ground_truth_mode_from_string(a.ground_truth);
  cfg.alpha0 = a.alpha0;
  cfg.iterations = a.iters;
  cfg.decay_every = a.decay_every;
  cfg.seed = a.seed;
  if (a.init == "file") {
    cfg.init = xbt::InitMode::file;
    cfg.init_file = a.init_file;
  } else if (a.init != "gaussian") {
    throw xbt::ValueError("--init must be gaussian or file");
  }
  const auto reference = xbt::quantized_reference(m.spec, m.params);
  const auto tv = xbt::generate_test_vector(m.spec, reference, cfg);
  xbt::save_test_vector(tv, a.out, a.overwrite);
  print({{"tv", a.out},
         {"payload", xbt::test_vector_payload_path(a.out).string()},
         {"mu0", tv.baseline.mu0},
         {"sigma0", tv.baseline.sigma0},
         {"dkl0", tv.baseline.dkl0},
         {"converged", tv.converged},
         {"final_loss", tv.loss_history.empty() ? 0.0 : tv.loss_history.back()}});
  return kExitOk;
}

struct CheckArgs {
  std::string model, weights, tv, fault, device_weights;
  double threshold = 1e-4;
  std::optional<std::uint64_t> seed;
};

int run_check(const CheckArgs& a) {
  const auto m = xbt::load_model(a.model, a.weights);
  const auto tv = xbt::load_test_vector(a.tv);
  xbt::ParameterStore under_test;
  std::string source;
  if (!a.device_weights.empty()) {
    under_test = xbt::load_model(a.model, a.device_weights).params;
    source = "device-weights";
  } else if (!a.fault.empty()) {
    auto fc = xbt::load_fault_config(a.fault);
    if (a.seed) fc.seed = *a.seed;
    under_test = xbt::realize_faulty_model(m.spec, m.params, fc);
    source = "simulated " + std::string(xbt::to_string(fc.kind));
  } else {
    under_test = xbt::quantized_reference(m.spec, m.params);
    source = "reference";
  }
  const auto r = xbt::detect(m.spec, under_test, tv, a.threshold);
  print({{"verdict", r.faulty ? "faulty" : "clean"},
         {"d_kl", r.d_kl},
         {"threshold", r.threshold},
         {"mean", r.stats.mean},
         {"stddev", r.stats.stddev},
         {"dkl0", tv.baseline.dkl0},
         {"model_under_test", source}});
  return r.faulty ? kExitFaulty : kExitOk;
}

struct InjectArgs {
  std::string model, weights, fault, out;
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
};

int run_inject(const InjectArgs& a) {
  const auto m = xbt::load_model(a.model, a.weights);
  auto fc = xbt::load_fault_config(a.fault);
  if (a.seed) fc.seed = *a.seed;
  const auto faulty = xbt::realize_faulty_model(m.spec, m.params, fc);
  xbt::save_weights(m.spec, faulty, a.out, a.overwrite);
  print({{"out", a.out},
         {"kind", std::string(xbt::to_string(fc.kind))},
         {"severity", fc.severity},
         {"seed", fc.seed}});
  return kExitOk;
}

struct CoverageArgs {
  std::string campaign, out;
  std::size_t threads = 1;
  bool overwrite = false;
};

int run_coverage_cmd(const CoverageArgs& a) {
  const auto campaign = xbt::load_campaign(a.campaign);
  const auto report = xbt::run_coverage(campaign, {.threads = a.threads});
  fs::path json_path = a.out;
  json_path.replace_extension(".json");
  if (json_path == fs::path(a.out)) json_path += ".json";
  write_new(a.out, xbt::report_csv(report), a.overwrite);
  write_new(json_path, xbt::report_json(report), a.overwrite);
  const auto sweep = xbt::threshold_sweep(report);
  std::cout << sweep.to_text();
  if (!sweep.monotone) std::cerr << "warning: coverage is not monotone in the threshold\n";
  return kExitOk;
}

struct MakeModelArgs {
  std::string arch = "mlp", out_spec, out_weights;
  std::size_t classes = 32, image_size = 16;
  std::uint64_t seed = 0;
  bool train = false, overwrite = false;
};

int run_make_model(const MakeModelArgs& a) {
  xbt::ToyModelOptions opt;
  opt.trained = a.train;
  opt.image_size = a.image_size;
  const auto m = xbt::make_toy_model(xbt::toy_arch_from_string(a.arch), a.classes, a.seed, opt);
  xbt::save_model(m.spec, m.params, a.out_spec, a.out_weights, a.overwrite);
  print({{"spec", a.out_spec},
         {"weights", a.out_weights},
         {"arch", a.arch},
         {"classes", a.classes},
         {"trained", a.train},
         {"train_accuracy", m.train_accuracy},
         {"epochs", m.epochs},
         {"warnings", {{"few_classes", m.few_classes_warning}, {"accuracy", m.accuracy_warning}}}});
  return kExitOk;
}

int run_gradcheck_cmd(std::size_t cases, std::uint64_t seed) {
  const auto s = xbt::run_gradcheck(cases, seed);
  print({{"cases", s.cases},
         {"passed", s.passed},
         {"worst_rel_error", s.worst_rel_error},
         {"tolerance", s.tolerance},
         {"all_kinds_covered", s.all_kinds_covered()},
         {"kind_counts", s.kind_counts}});
  return s.all_passed() && s.all_kinds_covered() ? kExitOk : kExitFaulty;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot crossbar fault testing: test-vector generation, detection and coverage"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a one-shot test vector");
  g->add_option("--model", gen.model, "Model manifest (JSON)")->required();
  g->add_option("--weights", gen.weights, "Weight blob")->required();
  g->add_option("--out", gen.out, "Output test-vector manifest (.json)")->required();
  g->add_option("--loss", gen.loss)->check(CLI::IsMember({"moment", "pointwise-kl", "mse"}));
  g->add_option("--ground-truth", gen.ground_truth)
      ->check(CLI::IsMember({"standardized-self", "gaussian-sample"}));
  g->add_option("--alpha0", gen.alpha0);
  g->add_option("--iters", gen.iters);
  g->add_option("--decay-every", gen.decay_every);
  g->add_option("--seed", gen.seed);
  g->add_option("--init", gen.init)->check(CLI::IsMember({"gaussian", "file"}));
  g->add_option("--init-file", gen.init_file, "PPM (P6) or raw float32 .bin");
  g->add_flag("--overwrite", gen.overwrite);

  CheckArgs check;
  auto* c = app.add_subcommand("check", "Apply a test vector to a model and report the verdict");
  c->add_option("--model", check.model)->required();
  c->add_option("--weights", check.weights, "Fault-free trained weights")->required();
  c->add_option("--tv", check.tv)->required();
  c->add_option("--threshold", check.threshold);
  auto* fault_opt =
      c->add_option("--fault", check.fault, "Simulate a faulty instance from this fault config");
  c->add_option("--seed", check.seed, "Overrides the fault config seed");
  c->add_option("--device-weights", check.device_weights, "Weights of the device under test, used as-is")
      ->excludes(fault_opt);

  InjectArgs inject;
  auto* i = app.add_subcommand("inject", "Write the weights of one simulated faulty instance");
  i->add_option("--model", inject.model)->required();
  i->add_option("--weights", inject.weights)->required();
  i->add_option("--fault", inject.fault)->required();
  i->add_option("--seed", inject.seed);
  i->add_option("--out", inject.out)->required();
  i->add_flag("--overwrite", inject.overwrite);

  CoverageArgs cov;
  auto* v = app.add_subcommand("coverage", "Run a Monte Carlo fault-coverage campaign");
  v->add_option("--campaign", cov.campaign)->required();
  v->add_option("--out", cov.out, "CSV report; a .json mirror is written next to it")->required();
  v->add_option("--threads", cov.threads)->check(CLI::PositiveNumber);
  v->add_flag("--overwrite", cov.overwrite);

  MakeModelArgs mk;
  auto* k = app.add_subcommand("make-model", "Build a desk-scale fixture model");
  k->add_option("--arch", mk.arch)->check(CLI::IsMember({"mlp", "cnn", "resnet-mini"}));
  k->add_option("--classes", mk.classes);
  k->add_option("--seed", mk.seed);
  k->add_option("--image-size", mk.image_size);
  k->add_flag("--train", mk.train);
  k->add_option("--out-spec", mk.out_spec)->required();
  k->add_option("--out-weights", mk.out_weights)->required();
  k->add_flag("--overwrite", mk.overwrite);

  std::size_t gc_cases = 100;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Check reverse-mode gradients against finite differences");
  gc->add_option("--cases", gc_cases);
  gc->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*c) return run_check(check);
    if (*i) return run_inject(inject);
    if (*v) return run_coverage_cmd(cov);
    if (*k) return run_make_model(mk);
    if (*gc) return run_gradcheck_cmd(gc_cases, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
