// Python module strokenet._core: numpy in, numpy out, configs as dicts of strings.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "strokenet/checkpoint.hpp"
#include "strokenet/errors.hpp"
#include "strokenet/experiment.hpp"
#include "strokenet/layers.hpp"
#include "strokenet/metrics.hpp"
#include "strokenet/synthetic.hpp"
#include "strokenet/training.hpp"

namespace py = pybind11;
using namespace strokenet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["experiment"] = to_string(r.experiment);
  d["n_samples"] = r.n_samples;
  d["accuracy"] = r.accuracy;
  d["f1"] = r.f1 ? py::cast(*r.f1) : py::none();
  d["auc"] = r.auc ? py::cast(*r.auc) : py::none();
  d["one_nearest_accuracy"] = r.one_nearest ? py::cast(*r.one_nearest) : py::none();
  d["confusion_matrix"] = r.confusion;
  d["positive_class"] = r.positive_class;
  py::dict ctx;
  for (const auto& [k, v] : r.context) ctx[py::str(k)] = v;
  d["context"] = ctx;
  return d;
}

py::dict params_dict(const ModelParams& p) {
  py::dict d;
  for (const auto& e : p) d[py::str(e.name)] = to_array(e.value);
  return d;
}

RunConfig run_config(const KeyValues& kv) {
  RunConfig rc;
  rc.apply_key_values(kv);
  return rc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "3D CT + clinical metadata outcome prediction (C++ core)";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CorruptFileError>(m, "CorruptFileError", PyExc_OSError);
  py::register_exception<CheckpointMismatchError>(m, "CheckpointMismatchError", PyExc_ValueError);

  m.def("dichotomize", &dichotomize, py::arg("mrs"));
  m.def("accuracy", [](std::vector<int> p, std::vector<int> t) { return accuracy(p, t); });
  m.def("f1_score", [](std::vector<int> p, std::vector<int> t) { return f1_score(p, t); });
  m.def("auc", [](std::vector<double> s, std::vector<int> t) { return auc(s, t); },
        py::arg("good_scores"), py::arg("truth"));
  m.def("one_nearest_accuracy",
        [](std::vector<int> p, std::vector<int> t) { return one_nearest_accuracy(p, t); });

  m.def("softmax", [](const Array& x) { return to_array(softmax(to_tensor(x))); });
  m.def("conv3d",
        [](const Array& x, const Array& w, const Array& b, std::array<std::size_t, 3> stride,
           std::array<std::size_t, 3> padding) {
          return to_array(conv3d(to_tensor(x), to_tensor(w), to_tensor(b), ConvSpec{stride, padding}));
        },
        py::arg("x"), py::arg("weight"), py::arg("bias"), py::arg("stride") = std::array<std::size_t, 3>{1, 1, 1},
        py::arg("padding") = std::array<std::size_t, 3>{1, 1, 1});
  m.def("focal_loss",
        [](const Array& probs, std::vector<int> labels, std::vector<double> alpha, double gamma) {
          FocalLossResult r = focal_loss(to_tensor(probs), labels, alpha, gamma);
          return py::make_tuple(r.loss, to_array(r.grad_logits), r.floor_events);
        },
        py::arg("probs"), py::arg("labels"), py::arg("alpha"), py::arg("gamma") = 2.0);

  m.def("generate_synthetic_cohort",
        [](const std::filesystem::path& out, std::size_t n, std::uint64_t seed, const KeyValues& overrides) {
          SyntheticSpec spec;
          KeyValues kv;
          for (const auto& [k, v] : overrides) kv[k.rfind("synth.", 0) == 0 ? k : "synth." + k] = v;
          const auto used = spec.apply_key_values(kv);
          if (used.size() != kv.size()) throw ConfigError("unknown synthetic spec key");
          SyntheticCohort c = generate_synthetic_cohort(n, spec, seed);
          write_cohort(c, out);
          return c.manifest.records.size();
        },
        py::arg("out_dir"), py::arg("n") = 500, py::arg("seed") = 1, py::arg("spec") = KeyValues{});

  m.def("default_run_config", [] {
    RunConfig rc;
    return rc.to_key_values();
  });
  m.def("run_experiment",
        [](const KeyValues& config) {
          ExperimentResult r;
          {
            py::gil_scoped_release release;
            r = run_experiment(run_config(config));
          }
          py::dict d = report_dict(r.report);
          d["parameter_count"] = r.parameter_count;
          py::list history;
          for (const auto& h : r.training.history) history.append(py::make_tuple(h.epoch, h.train_loss, h.val_loss, h.lr));
          d["history"] = history;
          return d;
        },
        py::arg("config"));

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    return py::make_tuple(params_dict(ck.params), ck.config.to_key_values(), ck.extra);
  });
  m.def("parameter_count", [](const KeyValues& model_config) {
    ModelConfig c;
    c.apply_key_values(model_config);
    c.validate();
    Rng rng(0);
    return build_model(c, rng).scalar_count();
  });
  m.def("predict_checkpoint",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& cohort, bool include_train) {
          Checkpoint ck = load_checkpoint(checkpoint);
          RunConfig rc;
          rc.model = ck.config;
          rc.apply_key_values(ck.extra);
          CohortPredictions p = predict_cohort(ck.params, rc, open_cohort(cohort), include_train);
          return py::make_tuple(p.ids, to_array(p.probs), p.labels);
        },
        py::arg("checkpoint"), py::arg("cohort"), py::arg("include_train") = false);
}
