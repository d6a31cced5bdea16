#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bclab/analysis.hpp"
#include "bclab/cli.hpp"
#include "bclab/loss.hpp"
#include "bclab/manifest.hpp"
#include "bclab/mixing.hpp"

namespace py = pybind11;
using namespace bclab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor64 to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor64(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor64& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array mix(const Array& x1, const Array& x2, double r, const std::string& method, double g1_db,
          double g2_db) {
  const auto a = to_tensor(x1), b = to_tensor(x2);
  switch (parse_mix_method(method)) {
    case MixMethod::simple: return to_array(mix_simple(a, b, r));
    case MixMethod::zero_mean: return to_array(mix_zero_mean(a, b, r));
    case MixMethod::variance_preserving: return to_array(mix_variance_preserving(a, b, r));
    case MixMethod::bc_plus: return to_array(mix_bc_plus(a, b, r).image);
    case MixMethod::sound_db: return to_array(mix_sound_db(a, b, r, g1_db, g2_db));
  }
  throw std::invalid_argument("unknown mixing method");
}

FeatureMatrix features(const Array& rows, const std::vector<std::uint32_t>& labels) {
  if (rows.ndim() != 2) throw std::invalid_argument("features must be a 2-d array");
  if (static_cast<std::size_t>(rows.shape(0)) != labels.size())
    throw std::invalid_argument("one label per feature row is required");
  FeatureMatrix f;
  f.rows = to_tensor(rows);
  f.labels = labels;
  return f;
}

}  // namespace

PYBIND11_MODULE(_bclab, m) {
  m.doc() = "Between-class learning kernels";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ManifestError>(m, "ManifestError", PyExc_ValueError);

  m.def("mix", &mix, py::arg("x1"), py::arg("x2"), py::arg("r"), py::arg("method") = "simple",
        py::arg("g1_db") = 0.0, py::arg("g2_db") = 0.0,
        "Mix two images with ratio r using the named method.");
  m.def("mix_labels",
        [](const Array& t1, const Array& t2, double r) {
          const auto a = to_vector(t1), b = to_vector(t2);
          return mix_labels(a, b, r);
        },
        py::arg("t1"), py::arg("t2"), py::arg("r"));
  m.def("bc_plus_coefficient", &bc_plus_coefficient, py::arg("r"), py::arg("sigma1"), py::arg("sigma2"));
  m.def("sound_db_coefficient", &sound_db_coefficient, py::arg("r"), py::arg("g1_db"), py::arg("g2_db"));

  m.def("softmax", [](const Array& z) {
    const auto v = to_vector(z);
    return softmax<double>(v);
  });
  m.def("kl_ratio_loss",
        [](const Array& label, const Array& logits) {
          const auto t = to_vector(label), z = to_vector(logits);
          const auto r = kl_ratio_loss<double>(t, z);
          return py::make_tuple(r.loss, r.grad);
        },
        py::arg("label"), py::arg("logits"), "Returns (loss, gradient with respect to logits).");
  m.def("single_label_target", &single_label_target, py::arg("c1"), py::arg("c2"), py::arg("r"));

  m.def("fisher_criterion",
        [](const Array& rows, const std::vector<std::uint32_t>& labels, std::uint32_t c1, std::uint32_t c2) {
          const auto r = fisher_criterion(features(rows, labels), c1, c2);
          return py::dict(py::arg("value") = r.value, py::arg("lambda") = r.lambda,
                          py::arg("singular") = r.singular);
        },
        py::arg("features"), py::arg("labels"), py::arg("c1"), py::arg("c2"));
  m.def("mean_fisher",
        [](const Array& rows, const std::vector<std::uint32_t>& labels) {
          return mean_fisher(features(rows, labels)).value;
        },
        py::arg("features"), py::arg("labels"));
  m.def("pca_project",
        [](const Array& rows, std::size_t dims) {
          const auto p = pca_project(features(rows, std::vector<std::uint32_t>(rows.shape(0), 0)), dims);
          return py::make_tuple(to_array(p.coords), p.model.eigenvalues);
        },
        py::arg("features"), py::arg("dims"), "Returns (coordinates, eigenvalues).");

  m.def("normalize_manifest",
        [](const std::string& text) {
          const auto manifest = manifest_from_json(nlohmann::json::parse(text));
          manifest.validate();
          return to_json(manifest).dump();
        },
        py::arg("json_text"), "Fill defaults, validate, and return canonical manifest JSON.");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run the command-line tool in-process; returns (exit code, stdout, stderr).");
}
