#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "advdet/attacks.hpp"
#include "advdet/detection.hpp"
#include "advdet/error.hpp"
#include "advdet/pipeline.hpp"
#include "advdet/report.hpp"
#include "advdet/serialize.hpp"

namespace py = pybind11;
using namespace advdet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<int> to_labels(const Labels& a) { return {a.data(), a.data() + a.size()}; }

template <class T>
py::array_t<T> to_array(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::tuple to_py(const LabeledDataset& d) {
  return py::make_tuple(to_array(d.images), to_array(d.labels));
}

LabeledDataset to_dataset(const Array& images, const Labels& labels, std::size_t classes) {
  if (images.ndim() < 2 || images.shape(0) != labels.size())
    throw ShapeError("images must be (N, ...) with one label per image");
  LabeledDataset d;
  d.images = to_tensor(images);
  d.labels = to_labels(labels);
  d.class_count = classes;
  d.validate(false);
  return d;
}

nlohmann::json to_nl(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

TrainedModel load_frozen(const std::filesystem::path& p) { return load_model(p); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adversarial example generation and detection";

  static py::exception<Error> base(m, "AdvdetError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("git_describe", &git_describe);
  m.def("attack_families", [] {
    std::vector<std::string> names;
    for (auto f : {AttackFamily::kFast, AttackFamily::kIterativeLinf, AttackFamily::kIterativeL2,
                   AttackFamily::kDeepFoolL2, AttackFamily::kDeepFoolLinf, AttackFamily::kDynamic})
      names.emplace_back(attack_family_name(f));
    return names;
  });

  m.def(
      "synth_blobs",
      [](std::size_t classes, std::size_t per_class, std::vector<std::size_t> dims,
         double separation, double noise, double variation, std::size_t modes, std::uint64_t seed,
         std::uint64_t prototype_seed) {
        SynthOptions o;
        o.classes = classes;
        o.per_class = per_class;
        o.dims = std::move(dims);
        o.separation = separation;
        o.noise = noise;
        o.variation = variation;
        o.modes = modes;
        o.seed = seed;
        o.prototype_seed = prototype_seed;
        return to_py(synth_blobs(o));
      },
      py::arg("classes") = 10, py::arg("per_class") = 100,
      py::arg("dims") = std::vector<std::size_t>{1, 16, 16}, py::arg("separation") = 20.0,
      py::arg("noise") = 10.0, py::arg("variation") = 0.0, py::arg("modes") = 1,
      py::arg("seed") = 0, py::arg("prototype_seed") = 0,
      "Synthetic class-cluster images as (images, labels).");
  m.def(
      "load_idx",
      [](const std::filesystem::path& images, std::optional<std::filesystem::path> labels) {
        return to_py(labels ? load_idx(images, *labels) : load_idx(images));
      },
      py::arg("images"), py::arg("labels") = py::none());
  m.def("load_cifar", [](const std::filesystem::path& p) { return to_py(load_cifar_binary(p)); });

  m.def(
      "desk_classifier_spec",
      [](std::vector<std::size_t> input_shape, std::size_t classes, std::size_t base_channels,
         bool batch_norm) {
        return to_py(to_json(desk_classifier_spec(input_shape, classes, base_channels, batch_norm)));
      },
      py::arg("input_shape"), py::arg("classes"), py::arg("base_channels") = 16,
      py::arg("batch_norm") = false);

  py::class_<TrainedModel>(m, "Model")
      .def_static("load", &load_frozen)
      .def("save", [](const TrainedModel& self, const std::filesystem::path& p) { save_model(self, p); })
      .def_readwrite("frozen", &TrainedModel::frozen)
      .def_property_readonly("spec", [](const TrainedModel& self) { return to_py(to_json(self.spec)); })
      .def_property_readonly("parameter_count",
                             [](const TrainedModel& self) { return self.params.trainable_count(); })
      .def("predict", [](const TrainedModel& self, const Array& x) {
        return to_array(predict_raw(self, to_tensor(x)));
      }, "Raw network output for a batch.")
      .def("predict_labels", [](const TrainedModel& self, const Array& x) {
        return predict_labels(self, to_tensor(x));
      })
      .def("features", [](const TrainedModel& self, const Array& x, int ad_index) {
        return to_array(features_at_batch(self, to_tensor(x), ad_index));
      }, py::arg("images"), py::arg("ad_index"))
      .def("__eq__", [](const TrainedModel& a, const TrainedModel& b) { return a == b; });

  m.def(
      "build_classifier",
      [](std::vector<std::size_t> input_shape, std::size_t classes, std::size_t base_channels,
         bool batch_norm, std::uint64_t seed) {
        return build_classifier(desk_classifier_spec(input_shape, classes, base_channels, batch_norm),
                                seed);
      },
      py::arg("input_shape"), py::arg("classes"), py::arg("base_channels") = 16,
      py::arg("batch_norm") = false, py::arg("seed") = 0);
  m.def(
      "train_classifier",
      [](const TrainedModel& model, const Array& images, const Labels& labels,
         const Array& val_images, const Labels& val_labels, py::object optimizer) {
        const std::size_t classes = model.output_size();
        OptimizerConfig opt = OptimizerConfig::classifier_defaults();
        if (!optimizer.is_none()) opt = optimizer_config_from_json(to_nl(optimizer), opt);
        TrainResult r;
        {
          const auto train = to_dataset(images, labels, classes);
          const auto val = to_dataset(val_images, val_labels, classes);
          py::gil_scoped_release release;
          r = train_supervised(model, train, val, opt);
        }
        r.model.frozen = true;
        py::list history;
        for (const auto& h : r.history)
          history.append(py::dict(py::arg("epoch") = h.epoch, py::arg("train_loss") = h.train_loss,
                                  py::arg("val_accuracy") = h.val_accuracy));
        return py::make_tuple(r.model, history);
      },
      py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("val_images"),
      py::arg("val_labels"), py::arg("optimizer") = py::none(),
      "Trains and freezes a classifier; returns (model, history).");

  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init([](const std::string& family, double epsilon) {
             return AttackConfig::defaults(attack_family_from_name(family), epsilon);
           }),
           py::arg("family"), py::arg("epsilon") = 1.0)
      .def_property_readonly("family",
                             [](const AttackConfig& c) { return attack_family_name(c.family); })
      .def_readwrite("epsilon", &AttackConfig::epsilon)
      .def_readwrite("alpha", &AttackConfig::alpha)
      .def_readwrite("max_iter", &AttackConfig::max_iter)
      .def_readwrite("sigma", &AttackConfig::sigma)
      .def_readwrite("overshoot", &AttackConfig::overshoot)
      .def("id", &AttackConfig::id)
      .def("to_dict", [](const AttackConfig& c) { return to_py(to_json(c)); })
      .def("__repr__", [](const AttackConfig& c) { return "AttackConfig(" + c.id() + ")"; });

  py::class_<DetectorBundle>(m, "DetectorBundle")
      .def_static("load", [](const std::filesystem::path& p) { return load_bundle(p); })
      .def("save", [](const DetectorBundle& self, const std::filesystem::path& p) { save_bundle(self, p); })
      .def_readonly("ad_index", &DetectorBundle::ad_index)
      .def_readonly("classifier", &DetectorBundle::classifier)
      .def_property_readonly("mode", [](const DetectorBundle& b) { return training_mode_name(b.mode); });

  m.def("detect", [](const DetectorBundle& b, const Array& x) {
    return to_array(detect_batch(b, to_tensor(x)));
  }, "p_adv for every input of a batch.");

  m.def(
      "attack",
      [](const TrainedModel& model, const Array& images, const Labels& labels,
         const AttackConfig& cfg, const DetectorBundle* bundle) {
        std::vector<AdversarialExample> out;
        {
          const auto x = to_tensor(images);
          const auto y = to_labels(labels);
          std::optional<DetectorRef> ref;
          if (bundle) ref = bundle->ref();
          py::gil_scoped_release release;
          out = attack_batch(model, x, y, cfg, ref ? &*ref : nullptr);
        }
        std::vector<Tensor> perturbed;
        std::vector<int> before, after;
        std::vector<double> linf, l2;
        std::vector<std::string> status;
        for (const auto& e : out) {
          perturbed.push_back(e.perturbed);
          before.push_back(e.pred_before);
          after.push_back(e.pred_after);
          linf.push_back(e.linf);
          l2.push_back(e.l2);
          status.emplace_back(attack_status_name(e.status));
        }
        py::dict d;
        d["perturbed"] = to_array(make_dataset(perturbed, std::vector<int>(out.size()), 1).images);
        d["pred_before"] = to_array(before);
        d["pred_after"] = to_array(after);
        d["linf"] = to_array(linf);
        d["l2"] = to_array(l2);
        d["status"] = status;
        return d;
      },
      py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("config"),
      py::arg("bundle") = nullptr);

  m.def("project_l2_ball", [](const Array& p, const Array& c, double eps) {
    return to_array(project_l2_ball(to_tensor(p), to_tensor(c), eps));
  });
  m.def(
      "clip_linf",
      [](const Array& p, const Array& c, double eps, double lo, double hi) {
        return to_array(clip_linf(to_tensor(p), to_tensor(c), eps, lo, hi));
      },
      py::arg("p"), py::arg("center"), py::arg("epsilon"), py::arg("lo") = kPixelMin,
      py::arg("hi") = kPixelMax);

  m.def("command_names", &command_names);
  m.def(
      "run_command",
      [](const std::string& command, py::object config, const std::filesystem::path& out,
         bool dynamic, const std::string& transfer, const std::string& split) {
        const RunConfig cfg = config.is_none() ? RunConfig{} : run_config_from_json(to_nl(config));
        CommandOptions o{dynamic, transfer, split};
        nlohmann::json manifest;
        {
          py::gil_scoped_release release;
          manifest = run_command(command, cfg, out, o);
        }
        return to_py(manifest);
      },
      py::arg("command"), py::arg("config") = py::none(), py::arg("out") = "out",
      py::arg("dynamic") = false, py::arg("transfer") = "both", py::arg("split") = "test",
      "Runs a pipeline command and returns its manifest.");
  m.def("rerun_manifest", [](py::object manifest, const std::filesystem::path& out) {
    const auto j = to_nl(manifest);
    nlohmann::json result;
    {
      py::gil_scoped_release release;
      result = rerun_manifest(j, out);
    }
    return to_py(result);
  });
}
