#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xbt/error.hpp"
#include "xbt/faultlab.hpp"
#include "xbt/gradcheck.hpp"
#include "xbt/harness.hpp"
#include "xbt/netgraph.hpp"
#include "xbt/oneshot.hpp"
#include "xbt/quantmap.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const xbt::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

xbt::Tensor from_numpy(const Array& a) {
  xbt::Shape shape(a.shape(), a.shape() + a.ndim());
  return xbt::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

struct Model {
  xbt::ModelSpec spec;
  xbt::ParameterStore params;
};

py::dict baseline_dict(const xbt::Baseline& b) {
  py::dict d;
  d["mu0"] = b.mu0;
  d["sigma0"] = b.sigma0;
  d["dkl0"] = b.dkl0;
  return d;
}

}  // namespace

PYBIND11_MODULE(_xbartest, m) {
  m.doc() = "One-shot test vectors and fault-coverage simulation for crossbar-mapped networks";

  // translators are tried newest first, so the base class goes in before its subclasses
  py::register_exception<xbt::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<xbt::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<xbt::FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<xbt::ValueError>(m, "InvalidValue", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_static(
          "load",
          [](const std::filesystem::path& spec, const std::filesystem::path& weights) {
            auto lm = xbt::load_model(spec, weights);
            return Model{std::move(lm.spec), std::move(lm.params)};
          },
          py::arg("spec"), py::arg("weights"))
      .def(
          "save",
          [](const Model& self, const std::filesystem::path& spec, const std::filesystem::path& weights,
             bool overwrite) { xbt::save_model(self.spec, self.params, spec, weights, overwrite); },
          py::arg("spec"), py::arg("weights"), py::arg("overwrite") = false)
      .def_property_readonly("input_shape", [](const Model& self) { return self.spec.input_shape; })
      .def_property_readonly("num_classes", [](const Model& self) { return self.spec.num_classes; })
      .def_property_readonly("layer_kinds",
                             [](const Model& self) {
                               std::vector<std::string> kinds;
                               for (const auto& l : self.spec.layers) kinds.emplace_back(xbt::to_string(l.kind));
                               return kinds;
                             })
      .def(
          "forward",
          [](const Model& self, const Array& x, bool logits) {
            return to_numpy(xbt::forward_network(self.spec, self.params, from_numpy(x),
                                                 {.with_tape = false, .stop_before_softmax = logits})
                                .output);
          },
          py::arg("x"), py::arg("logits") = true)
      .def("quantized",
           [](const Model& self) { return Model{self.spec, xbt::quantized_reference(self.spec, self.params)}; })
      .def(
          "inject",
          [](const Model& self, const std::string& kind, double severity, std::uint64_t seed) {
            const xbt::FaultConfig fc{xbt::fault_kind_from_string(kind), severity, seed};
            return Model{self.spec, xbt::realize_faulty_model(self.spec, self.params, fc)};
          },
          py::arg("kind"), py::arg("severity"), py::arg("seed") = 0);

  m.def(
      "make_toy_model",
      [](const std::string& arch, std::size_t classes, std::uint64_t seed, bool trained,
         std::size_t image_size) {
        xbt::ToyModelOptions opt;
        opt.trained = trained;
        opt.image_size = image_size;
        auto t = xbt::make_toy_model(xbt::toy_arch_from_string(arch), classes, seed, opt);
        return Model{std::move(t.spec), std::move(t.params)};
      },
      py::arg("arch"), py::arg("classes") = 32, py::arg("seed") = 0, py::arg("trained") = false,
      py::arg("image_size") = 16);

  py::class_<xbt::TestVector>(m, "TestVector")
      .def_property_readonly("input", [](const xbt::TestVector& tv) { return to_numpy(tv.input); })
      .def_property_readonly("baseline", [](const xbt::TestVector& tv) { return baseline_dict(tv.baseline); })
      .def_readonly("converged", &xbt::TestVector::converged)
      .def_readonly("provenance", &xbt::TestVector::provenance)
      .def_readonly("loss_history", &xbt::TestVector::loss_history)
      .def(
          "save",
          [](const xbt::TestVector& tv, const std::filesystem::path& path, bool overwrite) {
            xbt::save_test_vector(tv, path, overwrite);
          },
          py::arg("path"), py::arg("overwrite") = false)
      .def_static("load", [](const std::filesystem::path& path) { return xbt::load_test_vector(path); });

  m.def(
      "generate_test_vector",
      [](const Model& model, const std::string& loss, const std::string& ground_truth, double alpha0,
         std::size_t iterations, std::size_t decay_every, std::uint64_t seed) {
        xbt::GenConfig cfg;
        cfg.loss = xbt::loss_kind_from_string(loss);
        cfg.ground_truth = xbt::ground_truth_mode_from_string(ground_truth);
        cfg.alpha0 = alpha0;
        cfg.iterations = iterations;
        cfg.decay_every = decay_every;
        cfg.seed = seed;
        const auto reference = xbt::quantized_reference(model.spec, model.params);
        py::gil_scoped_release release;
        return xbt::generate_test_vector(model.spec, reference, cfg);
      },
      py::arg("model"), py::arg("loss") = "moment", py::arg("ground_truth") = "standardized-self",
      py::arg("alpha0") = 0.1, py::arg("iterations") = 300, py::arg("decay_every") = 100,
      py::arg("seed") = 0,
      "Generates a test vector against the model's quantized reference.");

  m.def(
      "detect",
      [](const Model& model_under_test, const xbt::TestVector& tv, double threshold) {
        const auto r = xbt::detect(model_under_test.spec, model_under_test.params, tv, threshold);
        py::dict d;
        d["verdict"] = r.faulty ? "faulty" : "clean";
        d["faulty"] = r.faulty;
        d["d_kl"] = r.d_kl;
        d["mean"] = r.stats.mean;
        d["stddev"] = r.stats.stddev;
        d["threshold"] = r.threshold;
        return d;
      },
      py::arg("model"), py::arg("tv"), py::arg("threshold") = 1e-4,
      "Pass a model's quantized() copy for the fault-free device.");

  m.def("kl_divergence", py::overload_cast<double, double>(&xbt::kl_divergence), py::arg("mean"),
        py::arg("stddev"));
  m.def("kl_general", &xbt::kl_general, py::arg("mean_hat"), py::arg("sd_hat"), py::arg("mean"),
        py::arg("sd"));
  m.def("output_stats", [](const Array& y) {
    const auto s = xbt::output_stats(from_numpy(y));
    return py::make_tuple(s.mean, s.stddev);
  });

  m.def("quantize_int8", [](const Array& w) {
    const auto q = xbt::quantize_int8(from_numpy(w));
    std::vector<int> levels(q.levels.begin(), q.levels.end());
    return py::make_tuple(levels, q.scale);
  });

  m.def(
      "run_coverage",
      [](const std::filesystem::path& campaign_path, std::size_t threads) {
        const auto campaign = xbt::load_campaign(campaign_path);
        xbt::CoverageReport report;
        {
          py::gil_scoped_release release;
          report = xbt::run_coverage(campaign, {.threads = threads});
        }
        return py::make_tuple(xbt::report_csv(report), xbt::report_json(report));
      },
      py::arg("campaign"), py::arg("threads") = 1, "Returns (csv, json) report texts.");

  m.def(
      "run_gradcheck",
      [](std::size_t cases, std::uint64_t seed) {
        const auto s = xbt::run_gradcheck(cases, seed);
        py::dict d;
        d["cases"] = s.cases;
        d["passed"] = s.passed;
        d["worst_rel_error"] = s.worst_rel_error;
        d["all_kinds_covered"] = s.all_kinds_covered();
        return d;
      },
      py::arg("cases") = 100, py::arg("seed") = 0);

  m.def("forward_pass_count", &xbt::forward_pass_count);
}
