#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gefl/checkpoint.hpp"
#include "gefl/config.hpp"
#include "gefl/errors.hpp"
#include "gefl/federation.hpp"
#include "gefl/metrics.hpp"
#include "gefl/runner.hpp"

namespace py = pybind11;
using namespace gefl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  const auto buf = a.request();
  if (buf.ndim != 2) throw ShapeError("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(buf.shape[0]), cols = static_cast<std::size_t>(buf.shape[1]);
  const auto* data = static_cast<const double*>(buf.ptr);
  return Tensor::matrix(rows, cols, std::vector<double>(data, data + rows * cols));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::tuple dataset_tuple(const LabeledDataset& ds) {
  py::array_t<int> labels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(ds.size())}, ds.labels.data());
  return py::make_tuple(to_array(ds.inputs), labels);
}

}  // namespace

PYBIND11_MODULE(_gefl, m) {
  m.doc() = "Core bindings of the GeFL simulator";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.attr("REPORT_SCHEMA_VERSION") = kReportSchemaVersion;
  m.attr("TRACE_HEADER") = kTraceHeader;

  m.def("normalize_config", [](const std::string& text) { return emit_config(parse_config(text)); },
        "Parse a config and emit it with every key spelled out.");

  m.def(
      "run_seed_json",
      [](const std::string& text, std::uint64_t seed) {
        const auto cfg = parse_config(text);
        py::gil_scoped_release release;
        return report_json(cfg, run_seed(cfg, seed)).dump();
      },
      py::arg("config"), py::arg("seed"), "Run one seed in memory; returns the report as JSON text.");

  m.def(
      "run_and_write",
      [](const std::string& text, std::uint64_t seed, const std::string& out_dir) {
        auto cfg = parse_config(text);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        py::gil_scoped_release release;
        return run_and_write(cfg, seed).artifacts;
      },
      py::arg("config"), py::arg("seed"), py::arg("out_dir") = "",
      "Run one seed and write its report, trace and checkpoints; returns artifact names.");

  m.def(
      "report_json", [](const std::string& dir) { return report_directory(dir).dump(); }, py::arg("dir"),
      "Summarize report_seed*.json files in dir; returns the summary as JSON text.");

  m.def(
      "make_blobs",
      [](std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread, std::uint64_t seed) {
        return dataset_tuple(make_blobs(classes, dim, n_per_class, spread, seed));
      },
      py::arg("classes"), py::arg("dim"), py::arg("n_per_class"), py::arg("spread"), py::arg("seed"));

  m.def(
      "make_glyphs",
      [](std::size_t classes, std::size_t side, std::size_t n_per_class, double noise, int shift_max,
         std::uint64_t seed) { return dataset_tuple(make_glyphs(classes, side, n_per_class, noise, shift_max, seed)); },
      py::arg("classes"), py::arg("side"), py::arg("n_per_class"), py::arg("noise"), py::arg("shift_max"),
      py::arg("seed"));

  m.def(
      "aggregate",
      [](const std::vector<std::vector<double>>& sets) { return aggregate(sets); }, py::arg("param_sets"),
      "Coordinate-wise mean of equally long parameter vectors.");

  m.def(
      "mnd_ratio",
      [](const Array& probes, const Array& synthetic, const Array& validation) {
        const auto r = mnd_ratio(to_tensor(probes), to_tensor(synthetic), to_tensor(validation));
        py::dict out;
        out["mean_ratio"] = r.mean_ratio;
        out["ratios"] = r.ratios;
        out["duplicate_hits"] = r.duplicate_hits;
        return out;
      },
      py::arg("probes"), py::arg("synthetic"), py::arg("validation"));

  m.def(
      "invert_feature",
      [](const std::string& fe_checkpoint, const std::vector<double>& feature, std::size_t steps, double lr,
         double tv_weight) {
        const Network fe = load_network_file(fe_checkpoint);
        const auto r = invert_feature(fe, feature, {steps, lr, tv_weight});
        return py::make_tuple(to_array(r.x), r.residual);
      },
      py::arg("fe_checkpoint"), py::arg("feature"), py::arg("steps") = 500, py::arg("lr") = 0.05,
      py::arg("tv_weight") = 1e-3, "Reconstruct an input from a feature; returns (x, residual).");

  m.def(
      "sample",
      [](const std::string& gen_checkpoint, const std::vector<int>& labels, double w, std::uint64_t seed) {
        const auto gen = load_gen_file(gen_checkpoint);
        Rng rng(seed);
        return to_array(gen_sample(gen, labels, {w}, rng));
      },
      py::arg("gen_checkpoint"), py::arg("labels"), py::arg("w") = 0.0, py::arg("seed") = 0,
      "Draw samples from a saved generative model.");
}
