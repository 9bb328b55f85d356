// Python bindings over the fetcore library. Arrays cross as float64 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fet/analysis.hpp"
#include "fet/attention.hpp"
#include "fet/checks.hpp"
#include "fet/synth.hpp"
#include "fet/training.hpp"
#include "fet/wavelet.hpp"

namespace py = pybind11;
using namespace fet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(s), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  Array out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

// The library works on H x W x C; plain H x W arrays get a unit channel axis.
Tensor with_channel(Tensor t) {
  if (t.rank() == 2) t.shape.push_back(1);
  return t;
}

Array drop_channel(Tensor t, bool drop) {
  if (drop) t.shape.pop_back();
  return to_array(t);
}

py::dict subbands(const wavelet::SubbandTensors& s, bool drop) {
  py::dict d;
  d["ll"] = drop_channel(s.ll, drop);
  d["lh"] = drop_channel(s.lh, drop);
  d["hl"] = drop_channel(s.hl, drop);
  d["hh"] = drop_channel(s.hh, drop);
  return d;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
nlohmann::json py_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

model::LabelMap label_map(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw DimensionError("label map must be 2-D");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          std::vector<int>(a.data(), a.data() + a.size())};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Frequency-enhanced transformer segmentation toolkit";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<training::DivergedError>(m, "DivergedError", PyExc_RuntimeError);
  // DimensionError and ConfigError derive from std::invalid_argument -> ValueError

  m.def(
      "dwt2", [](const Array& x) { return subbands(wavelet::dwt2(with_channel(to_tensor(x))), x.ndim() == 2); },
      py::arg("x"),
        "One-level orthonormal Haar transform of an H x W [x C] array (even H, W).");
  m.def(
      "idwt2",
      [](const Array& ll, const Array& lh, const Array& hl, const Array& hh) {
        wavelet::SubbandTensors s{with_channel(to_tensor(ll)), with_channel(to_tensor(lh)),
                                  with_channel(to_tensor(hl)), with_channel(to_tensor(hh)), {}};
        Shape src = s.ll.shape;
        if (src.size() == 3) {
          src[0] *= 2;
          src[1] *= 2;
        }
        s.source_shape = src;
        return drop_channel(wavelet::idwt2(s), ll.ndim() == 2);
      },
      py::arg("ll"), py::arg("lh"), py::arg("hl"), py::arg("hh"));

  m.def(
      "efficient_attention",
      [](const Array& q, const Array& k, const Array& v) {
        Tape t;
        return to_array(attention::efficient_attention(t.constant(to_tensor(q)), t.constant(to_tensor(k)),
                                                       t.constant(to_tensor(v)))
                            .value());
      },
      py::arg("q"), py::arg("k"), py::arg("v"));
  m.def(
      "standard_mhsa",
      [](const Array& x, const Array& wq, const Array& wk, const Array& wv, const Array& wo, std::size_t heads) {
        attention::AttentionParams p{to_tensor(wq), to_tensor(wk), to_tensor(wv), to_tensor(wo), heads};
        Tape t;
        return to_array(attention::standard_mhsa(t.constant(to_tensor(x)), p).value());
      },
      py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("wo"), py::arg("heads") = 1);

  m.def("power_spectrum", [](const Array& x) { return to_array(analysis::power_spectrum(to_tensor(x))); });
  m.def(
      "hf_energy_ratio", [](const Array& x, double cutoff) { return analysis::hf_energy_ratio(to_tensor(x), cutoff); },
      py::arg("feature"), py::arg("cutoff_frac") = 0.5);

  m.def("read_ften", [](const std::filesystem::path& p) { return to_array(read_ften(p)); });
  m.def(
      "write_ften",
      [](const std::filesystem::path& p, const Array& a, bool f32) {
        write_ften(p, to_tensor(a), f32 ? FtenDtype::f32 : FtenDtype::f64);
      },
      py::arg("path"), py::arg("array"), py::arg("f32") = false);

  m.def(
      "make_sample",
      [](std::size_t k, std::size_t size, std::size_t classes, std::uint64_t seed) {
        const auto s = synth::make_sample({.n = k + 1, .size = size, .classes = classes, .seed = seed}, k);
        py::array_t<int> labels({size, size});
        std::copy(s.labels.begin(), s.labels.end(), labels.mutable_data());
        return py::make_tuple(to_array(s.image), labels);
      },
      py::arg("k"), py::arg("size") = 64, py::arg("classes") = 4, py::arg("seed") = 0);
  m.def(
      "gen_synth",
      [](const std::filesystem::path& dir, std::size_t n, std::size_t size, std::size_t classes, std::uint64_t seed) {
        synth::write_dataset(dir, {.n = n, .size = size, .classes = classes, .seed = seed});
      },
      py::arg("dir"), py::arg("n") = 200, py::arg("size") = 64, py::arg("classes") = 4, py::arg("seed") = 0);

  m.def(
      "dsc", [](const py::array_t<int>& pred, const py::array_t<int>& target, int c) {
        return model::metric_dsc(label_map(pred), label_map(target), c);
      });
  m.def("hausdorff", [](const py::array_t<int>& pred, const py::array_t<int>& target, int c) {
    return model::metric_hausdorff(model::Mask::of_class(label_map(pred), c),
                                   model::Mask::of_class(label_map(target), c));
  });

  m.def(
      "op_gradchecks",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : checks::op_suite(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.result.max_rel_error;
          d["tol"] = r.tol;
          d["checked"] = r.result.checked;
          d["pass"] = r.pass();
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0);

  py::class_<model::SegmentationModel>(m, "SegmentationModel")
      .def(py::init([](const py::object& cfg, std::uint64_t seed) {
             nlohmann::json j = cfg.is_none() ? model::to_json(model::ModelConfig{}) : py_to_json(cfg);
             auto merged = model::to_json(model::ModelConfig{});
             merged.update(j);
             return model::SegmentationModel(model::model_config_from_json(merged), seed);
           }),
           py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_property_readonly("config",
                             [](const model::SegmentationModel& s) { return json_to_py(model::to_json(s.config())); })
      .def("parameter_count", &model::SegmentationModel::parameter_count)
      .def("forward", [](model::SegmentationModel& s, const Array& image) {
        Tape t;
        return to_array(s.forward(t.constant(to_tensor(image))).value());
      });

  m.def(
      "train",
      [](const py::object& cfg, const std::filesystem::path& data, std::optional<std::filesystem::path> out) {
        auto tc = training::train_config_from_json(cfg.is_none() ? nlohmann::json::object() : py_to_json(cfg));
        const auto ds = synth::read_dataset(data);
        training::TrainResult r;
        {
          py::gil_scoped_release release;
          r = training::train(tc, ds, out);
        }
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& h : r.history) hist.push_back(training::to_json(h));
        return json_to_py({{"history", hist}, {"final_val", training::to_json(r.final_val)}});
      },
      py::arg("config") = py::none(), py::arg("data"), py::arg("out") = py::none(),
      "Train on a dataset directory; config is the JSON training config as a dict.");
}
