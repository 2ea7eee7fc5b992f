// Python bindings for the core kernels, model, and checkpoint I/O.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmtl/data.hpp"
#include "mmtl/kernels.hpp"
#include "mmtl/model.hpp"
#include "mmtl/train.hpp"

namespace py = pybind11;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

namespace {

mmtl::Tensor to_tensor(const FloatArray& a) {
  std::vector<int> shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<int>(a.shape(d)));
  mmtl::Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

py::array from_tensor(const mmtl::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

nlohmann::json config_json_from(const py::object& obj) {
  std::string text;
  if (py::isinstance<py::str>(obj))
    text = obj.cast<std::string>();
  else
    text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

// Parameter set plus config, the unit the CLI trains and evaluates.
class Model {
 public:
  Model(const py::object& config, int seed) {
    config_ = mmtl::ModelConfig::from_json(config_json_from(config));
    config_.validate();
    params_ = mmtl::build_model(config_, seed);
  }

  Model(mmtl::ModelConfig cfg, mmtl::ModelParams params)
      : config_(std::move(cfg)), params_(std::move(params)) {}

  py::dict predict(const FloatArray& window) {
    std::mt19937 rng(0);
    const mmtl::Prediction p =
        mmtl::predict(to_tensor(window), params_, config_, mmtl::Mode::eval, rng);
    py::dict out;
    out["activity_probs"] = from_tensor(p.activity_probs);
    out["resistance"] = p.has_resistance ? p.resistance_clamped() : -1.0f;
    out["has_resistance"] = p.has_resistance;
    return out;
  }

  py::array extract_features(const FloatArray& window) {
    return from_tensor(
        mmtl::extract_features(to_tensor(window), params_, config_, mmtl::Mode::eval));
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < params_.size(); ++i) names.push_back(params_.name(i));
    return names;
  }

  py::array get_param(const std::string& name) const { return from_tensor(params_.at(name)); }

  void set_param(const std::string& name, const FloatArray& value) {
    mmtl::Tensor t = to_tensor(value);
    mmtl::Tensor& dst = params_.at(name);
    if (t.shape != dst.shape) throw py::value_error("set_param: shape mismatch for " + name);
    dst = std::move(t);
  }

  std::size_t param_count() const { return params_.element_count(); }

  py::dict flops() const {
    const mmtl::FlopsReport r = mmtl::flops_estimate(config_);
    py::dict out;
    out["mul_adds"] = r.mul_adds;
    out["param_count"] = r.param_count;
    return out;
  }

  std::string config_json() const { return config_.to_json().dump(); }

  void save(const std::string& path) const {
    mmtl::Checkpoint ck;
    ck.config = config_;
    ck.params = params_;
    ck.opt = mmtl::init_optimizer(params_);
    mmtl::save_checkpoint(path, ck);
  }

  static Model load(const std::string& path) {
    mmtl::Checkpoint ck = mmtl::load_checkpoint(path);
    return Model(std::move(ck.config), std::move(ck.params));
  }

 private:
  mmtl::ModelConfig config_;
  mmtl::ModelParams params_;
};

py::tuple synthetic_dataset(int num_windows, int seed) {
  const mmtl::Dataset ds = mmtl::make_synthetic_dataset(num_windows, seed);
  const int N = static_cast<int>(ds.windows.size());
  const int C = N ? ds.windows[0].window.extent(0) : 0;
  const int T = N ? ds.windows[0].window.extent(1) : 0;
  py::array_t<float> windows({N, C, T});
  py::array_t<int> labels(N);
  py::array_t<float> resistance(N);
  float* w = windows.mutable_data();
  for (int i = 0; i < N; ++i) {
    const mmtl::LabeledWindow& lw = ds.windows[static_cast<std::size_t>(i)];
    std::copy(lw.window.data.begin(), lw.window.data.end(),
              w + static_cast<std::size_t>(i) * C * T);
    labels.mutable_data()[i] = lw.activity;
    resistance.mutable_data()[i] = lw.resistance;
  }
  return py::make_tuple(windows, labels, resistance);
}

}  // namespace

PYBIND11_MODULE(pymmtl, m) {
  m.doc() = "1D conv multi-task activity and resistance model";

  m.def(
      "depthwise_conv1d",
      [](const FloatArray& x, const FloatArray& kernels, int stride, int padding) {
        return from_tensor(mmtl::conv1d_depthwise(to_tensor(x), to_tensor(kernels), stride,
                                                  padding));
      },
      py::arg("x"), py::arg("kernels"), py::arg("stride") = 1, py::arg("padding") = 0,
      "Per-channel convolution; x is [C,T], kernels is [C,K].");

  m.def(
      "pointwise_conv1d",
      [](const FloatArray& x, const FloatArray& weights) {
        return from_tensor(mmtl::conv1d_pointwise(to_tensor(x), to_tensor(weights)));
      },
      py::arg("x"), py::arg("weights"), "1x1 cross-channel mix; x is [C_in,T], weights [C_out,C_in].");

  m.def(
      "standard_conv1d",
      [](const FloatArray& x, const FloatArray& weights, int stride, int padding) {
        return from_tensor(mmtl::conv1d_standard(to_tensor(x), to_tensor(weights), stride,
                                                 padding));
      },
      py::arg("x"), py::arg("weights"), py::arg("stride") = 1, py::arg("padding") = 0);

  m.def(
      "activation",
      [](const FloatArray& x, const std::string& kind) {
        return from_tensor(mmtl::activation(to_tensor(x), mmtl::activation_from_string(kind)));
      },
      py::arg("x"), py::arg("kind"), "kind: identity | relu | sigmoid | swish");

  m.def(
      "softmax", [](const FloatArray& logits) { return from_tensor(mmtl::softmax(to_tensor(logits))); },
      py::arg("logits"));

  m.def(
      "global_avg_pool",
      [](const FloatArray& x) { return from_tensor(mmtl::global_avg_pool(to_tensor(x))); },
      py::arg("x"));

  m.def(
      "se_gate",
      [](const FloatArray& x, const FloatArray& w_sq, const FloatArray& b_sq,
         const FloatArray& w_ex, const FloatArray& b_ex) {
        return from_tensor(mmtl::se_block(to_tensor(x), to_tensor(w_sq), to_tensor(b_sq),
                                          to_tensor(w_ex), to_tensor(b_ex)));
      },
      py::arg("x"), py::arg("w_sq"), py::arg("b_sq"), py::arg("w_ex"), py::arg("b_ex"),
      "Squeeze-and-excitation channel rescaling of x [C,T].");

  m.def("synthetic_dataset", &synthetic_dataset, py::arg("num_windows"), py::arg("seed") = 0,
        "Returns (windows [N,C,T], labels [N], resistance [N]).");

  m.def("resistance_scheme", [] { return std::string(mmtl::kResistanceSchemeId); });

  py::class_<Model>(m, "Model")
      .def(py::init<const py::object&, int>(), py::arg("config"), py::arg("seed") = 0,
           "config: dict or JSON string of model fields")
      .def("predict", &Model::predict, py::arg("window"))
      .def("extract_features", &Model::extract_features, py::arg("window"))
      .def("param_names", &Model::param_names)
      .def("get_param", &Model::get_param, py::arg("name"))
      .def("set_param", &Model::set_param, py::arg("name"), py::arg("value"))
      .def("param_count", &Model::param_count)
      .def("flops", &Model::flops)
      .def("config_json", &Model::config_json)
      .def("save", &Model::save, py::arg("path"))
      .def_static("load", &Model::load, py::arg("path"));

  py::register_exception<mmtl::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<mmtl::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<mmtl::DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<mmtl::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
}
