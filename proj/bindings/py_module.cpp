// Python bindings for the core operations: feature extraction, metrics,
// label transforms, models, saliency and the gradient-check harness.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "wsed/audio.hpp"
#include "wsed/dataset.hpp"
#include "wsed/gradcheck.hpp"
#include "wsed/metrics.hpp"
#include "wsed/model.hpp"
#include "wsed/trainer.hpp"

namespace py = pybind11;
using namespace wsed;

namespace {

Tensor tensor_from_2d(const py::array_t<double, py::array::c_style |
                                                    py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  Tensor t({static_cast<size_t>(a.shape(0)), static_cast<size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

py::array_t<double> array_from_values(const std::vector<double>& v,
                                      std::vector<py::ssize_t> shape) {
  py::array_t<double> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

ActivityGrid grid_from_array(
    const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d activity grid");
  ActivityGrid g = make_activity_grid(static_cast<size_t>(a.shape(0)),
                                      static_cast<size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + g.active.size(), g.active.begin());
  return g;
}

EventList events_from_list(
    const std::vector<std::tuple<size_t, double, double>>& events) {
  EventList out;
  for (const auto& [c, on, off] : events) out.push_back({c, on, off});
  return out;
}

// Owns a model plus the config block it was loaded/saved with.
struct PyModel {
  std::shared_ptr<SedModel> model;
  std::map<std::string, std::string> config;

  py::tuple forward(const py::array_t<double, py::array::c_style |
                                                  py::array::forcecast>& feats) {
    Tensor f = tensor_from_2d(feats);
    Tensor x = f.reshaped({1, f.dim(0), f.dim(1)});
    ModelOutput out = model->forward(x, RunMode::kInfer);
    py::array_t<double> strong = array_from_values(
        {out.strong.data(), out.strong.data() + out.strong.size()},
        {static_cast<py::ssize_t>(f.dim(0)),
         static_cast<py::ssize_t>(model->num_classes())});
    if (!out.has_weak) return py::make_tuple(strong, py::none());
    py::array_t<double> weak = array_from_values(
        {out.weak.data(), out.weak.data() + out.weak.size()},
        {static_cast<py::ssize_t>(model->num_classes())});
    return py::make_tuple(strong, weak);
  }

  py::array_t<double> saliency_map(
      const py::array_t<double, py::array::c_style | py::array::forcecast>&
          feats,
      size_t class_index, const std::string& head) {
    SaliencyHead h;
    if (head == "strong") h = SaliencyHead::kStrong;
    else if (head == "weak") h = SaliencyHead::kWeak;
    else throw UsageError("head must be 'strong' or 'weak'");
    Tensor f = tensor_from_2d(feats);
    return array_from_tensor(saliency(*model, f, class_index, h));
  }

  void save(const std::string& path,
            const std::map<std::string, std::string>& extra) {
    save_checkpoint(path, *model, extra);
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "weakly-supervised sound event detection core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError",
                                       PyExc_ArithmeticError);

  py::class_<FeatureConfig>(m, "FeatureConfig")
      .def(py::init<>())
      .def_readwrite("window_ms", &FeatureConfig::window_ms)
      .def_readwrite("overlap_fraction", &FeatureConfig::overlap_fraction)
      .def_readwrite("num_mel_bands", &FeatureConfig::num_mel_bands)
      .def_readwrite("fmin_hz", &FeatureConfig::fmin_hz)
      .def_readwrite("fmax_hz", &FeatureConfig::fmax_hz)
      .def_readwrite("fft_size", &FeatureConfig::fft_size)
      .def_readwrite("log_floor", &FeatureConfig::log_floor);

  m.def("hamming_window", [](size_t n) {
    return array_from_values(hamming_window(n),
                             {static_cast<py::ssize_t>(n)});
  });

  m.def(
      "extract_mbe",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             samples,
         uint32_t sample_rate, const FeatureConfig& cfg) {
        if (samples.ndim() != 1) throw ShapeError("samples must be 1-d");
        AudioClip clip;
        clip.sample_rate = sample_rate;
        clip.samples.assign(samples.data(), samples.data() + samples.size());
        FeatureMatrix fm = extract_mbe(clip, cfg);
        return py::make_tuple(
            array_from_values(fm.values,
                              {static_cast<py::ssize_t>(fm.frames),
                               static_cast<py::ssize_t>(fm.bands)}),
            fm.frame_hop_s);
      },
      py::arg("samples"), py::arg("sample_rate"),
      py::arg("config") = FeatureConfig());

  m.def("mel_filterbank", [](const FeatureConfig& cfg, uint32_t sample_rate) {
    const auto fb = mel_filterbank(cfg, sample_rate);
    std::vector<double> flat;
    for (const auto& row : fb) flat.insert(flat.end(), row.begin(), row.end());
    return array_from_values(flat,
                             {static_cast<py::ssize_t>(fb.size()),
                              static_cast<py::ssize_t>(fb[0].size())});
  });

  // metrics
  m.def("f_from_pr", &f_from_pr, py::arg("precision"), py::arg("recall"));
  m.def("training_metric", &training_metric, py::arg("weak_f_percent"),
        py::arg("strong_er"));
  m.def("weak_prf", [](const std::vector<std::set<size_t>>& predicted,
                       const std::vector<std::set<size_t>>& reference) {
    const PrfResult r = weak_prf(predicted, reference);
    return py::make_tuple(r.precision, r.recall, r.f_score);
  });
  m.def("segment_f",
        [](const py::array_t<uint8_t, py::array::c_style |
                                          py::array::forcecast>& ref,
           const py::array_t<uint8_t, py::array::c_style |
                                          py::array::forcecast>& pred) {
          return segment_f(grid_from_array(ref), grid_from_array(pred));
        });
  m.def("segment_er",
        [](const py::array_t<uint8_t, py::array::c_style |
                                          py::array::forcecast>& ref,
           const py::array_t<uint8_t, py::array::c_style |
                                          py::array::forcecast>& pred) {
          return segment_er(grid_from_array(ref), grid_from_array(pred));
        });
  m.def(
      "segment_activity",
      [](const std::vector<std::tuple<size_t, double, double>>& events,
         size_t num_classes, double segment_s, double duration_s) {
        const ActivityGrid g = segment_activity(events_from_list(events),
                                                num_classes, segment_s,
                                                duration_s);
        py::array_t<uint8_t> out({static_cast<py::ssize_t>(g.segments),
                                  static_cast<py::ssize_t>(g.classes)});
        std::copy(g.active.begin(), g.active.end(), out.mutable_data());
        return out;
      },
      py::arg("events"), py::arg("num_classes"), py::arg("segment_s") = 1.0,
      py::arg("duration_s") = 10.0);

  // label transforms
  m.def(
      "replicate_weak_to_strong",
      [](const std::vector<uint8_t>& weak, size_t frames) {
        return array_from_tensor(replicate_weak_to_strong(weak, frames));
      },
      py::arg("weak"), py::arg("frames"));
  m.def(
      "weak_from_strong",
      [](const py::array_t<double, py::array::c_style |
                                       py::array::forcecast>& strong,
         double threshold) {
        return weak_from_strong(tensor_from_2d(strong), threshold);
      },
      py::arg("strong"), py::arg("threshold") = 0.5);

  // models
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("defaults", &ModelConfig::defaults, py::arg("num_classes"),
                  py::arg("input_bands") = 40)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("input_bands", &ModelConfig::input_bands)
      .def_readwrite("conv_filters", &ModelConfig::conv_filters)
      .def_readwrite("conv_pools", &ModelConfig::conv_pools)
      .def_readwrite("gru_units", &ModelConfig::gru_units)
      .def_readwrite("strong_dense", &ModelConfig::strong_dense)
      .def_readwrite("weak_dense", &ModelConfig::weak_dense)
      .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
      .def_readwrite("seed", &ModelConfig::seed);

  py::class_<PyModel>(m, "Model")
      .def_property_readonly(
          "num_classes",
          [](const PyModel& s) { return s.model->num_classes(); })
      .def_property_readonly(
          "input_bands",
          [](const PyModel& s) { return s.model->input_bands(); })
      .def_property_readonly(
          "type", [](const PyModel& s) { return s.model->type(); })
      .def_property_readonly("config",
                             [](const PyModel& s) { return s.config; })
      .def("count_parameters",
           [](const PyModel& s) { return s.model->count_parameters(); })
      .def("forward", &PyModel::forward, py::arg("features"))
      .def("saliency", &PyModel::saliency_map, py::arg("features"),
           py::arg("class_index"), py::arg("head") = "strong")
      .def("save", &PyModel::save, py::arg("path"),
           py::arg("extra") = std::map<std::string, std::string>());

  m.def("crnn_model", [](const ModelConfig& cfg) {
    PyModel s;
    s.model = std::make_shared<CrnnModel>(cfg);
    s.config = s.model->config_map();
    return s;
  });
  m.def(
      "baseline_model",
      [](size_t num_classes, size_t input_bands, size_t context_frames,
         double dropout_rate, uint64_t seed) {
        PyModel s;
        s.model = std::make_shared<BaselineMlp>(num_classes, input_bands,
                                                context_frames, dropout_rate,
                                                seed);
        s.config = s.model->config_map();
        return s;
      },
      py::arg("num_classes"), py::arg("input_bands") = 40,
      py::arg("context_frames") = 5, py::arg("dropout_rate") = 0.2,
      py::arg("seed") = 1);
  m.def("load_checkpoint", [](const std::string& path) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    PyModel s;
    s.model = std::move(ckpt.model);
    s.config = std::move(ckpt.config);
    return s;
  });

  // verification harness
  m.def(
      "run_grad_checks",
      [](uint64_t seed, int rounds) {
        std::vector<std::pair<std::string, double>> out;
        for (const GradCheckReport& r : run_all_grad_checks(seed, rounds))
          out.emplace_back(r.op, r.max_err);
        return out;
      },
      py::arg("seed") = 1, py::arg("rounds") = 3);
}
