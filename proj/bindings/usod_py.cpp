#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include "usod/core_types.hpp"
#include "usod/losses.hpp"
#include "usod/metrics.hpp"
#include "usod/pipeline.hpp"
#include "usod/refiner.hpp"
#include "usod/unss.hpp"

namespace py = pybind11;

namespace {

usod::Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<int64_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
  std::vector<double> values(arr.data(), arr.data() + arr.size());
  return usod::Tensor(std::move(shape), std::move(values));
}

py::array_t<double> to_array(const usod::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

// Lifts HxW -> 1x1xHxW and CxHxW -> 1xCxHxW so batch APIs accept single planes.
usod::Tensor lift4(const usod::Tensor& t) {
  if (t.ndim() == 2) return t.reshaped({1, 1, t.dim(0), t.dim(1)});
  if (t.ndim() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  return t;
}

}  // namespace

PYBIND11_MODULE(_usod, m) {
  m.doc() = "Unsupervised salient object detection core operations";
  using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

  m.def(
      "binarize_certain",
      [](const Arr& label, double theta_f, double theta_g) {
        usod::SaliencyLabel sl{lift4(to_tensor(label)), usod::LabelKind::location};
        usod::Tensor mask = usod::binarize_certain(sl, theta_f, theta_g).data;
        return to_array(mask.reshaped(to_tensor(label).shape()));
      },
      py::arg("label"), py::arg("theta_f") = 0.6, py::arg("theta_g") = 0.1,
      "Ternary certainty map: 1 foreground, 0 background, -1 ignore");

  m.def(
      "component_areas",
      [](const Arr& binary) {
        usod::ComponentSet cs = usod::connected_components(to_tensor(binary));
        std::vector<int64_t> areas;
        for (const auto& c : cs) areas.push_back(c.area);
        return areas;
      },
      py::arg("binary"), "Areas of 8-connected components, largest first");

  m.def(
      "unss",
      [](const Arr& label, double theta_r, double theta_f, bool literal) {
        usod::Tensor t = to_tensor(label);
        usod::Tensor out = usod::unss_batch(lift4(t), usod::UnssParams{theta_r, theta_f, literal});
        return to_array(out.reshaped(t.shape()));
      },
      py::arg("label"), py::arg("theta_r") = 2.5, py::arg("theta_f") = 0.6,
      py::arg("literal") = false, "Non-salient suppression by pairwise area ratio");

  m.def(
      "refine",
      [](const Arr& label, const Arr& image, double gamma1, double gamma2, double gamma3,
         int iterations, double theta_f, bool half_resolution) {
        usod::RefinerParams params;
        params.gamma1 = gamma1;
        params.gamma2 = gamma2;
        params.gamma3 = gamma3;
        params.iterations = iterations;
        params.theta_f = theta_f;
        params.half_resolution = half_resolution;
        usod::Tensor t = to_tensor(label);
        usod::Tensor out = usod::refine(lift4(t), lift4(to_tensor(image)), params);
        return to_array(out.reshaped(t.shape()));
      },
      py::arg("label"), py::arg("image"), py::arg("gamma1") = 0.4, py::arg("gamma2") = 0.4,
      py::arg("gamma3") = 0.01, py::arg("iterations") = 10, py::arg("theta_f") = 0.6,
      py::arg("half_resolution") = false, "Pixel-adaptive label refinement");

  m.def(
      "f_beta",
      [](const Arr& pred, const Arr& gt, double beta2) {
        return usod::f_beta(to_tensor(pred), to_tensor(gt), beta2);
      },
      py::arg("pred"), py::arg("gt"), py::arg("beta2") = 0.3);
  m.def(
      "mae", [](const Arr& pred, const Arr& gt) { return usod::mae(to_tensor(pred), to_tensor(gt)); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "e_measure",
      [](const Arr& pred, const Arr& gt) { return usod::e_measure(to_tensor(pred), to_tensor(gt)); },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "partial_bce",
      [](const Arr& pred, const Arr& mask, double epsilon) {
        usod::ad::NoGradGuard ng;
        usod::ad::Var p(lift4(to_tensor(pred)));
        usod::CertaintyMask cm{lift4(to_tensor(mask))};
        return usod::partial_bce(p, cm, epsilon).scalar();
      },
      py::arg("pred"), py::arg("mask"), py::arg("epsilon") = 1e-7,
      "Cross-entropy over certain pixels only (value)");

  m.def(
      "iou_loss",
      [](const Arr& pred, const Arr& target) {
        usod::ad::NoGradGuard ng;
        usod::ad::Var p(lift4(to_tensor(pred)));
        return usod::iou_loss(p, lift4(to_tensor(target))).scalar();
      },
      py::arg("pred"), py::arg("target"), "Soft IOU loss (value)");

  m.def(
      "lsc_loss",
      [](const Arr& pred, const Arr& image, int kernel, double sigma_color, double sigma_space) {
        usod::ad::NoGradGuard ng;
        usod::LscParams params;
        params.kernel = kernel;
        params.sigma_color = sigma_color;
        params.sigma_space = sigma_space;
        usod::ad::Var p(lift4(to_tensor(pred)));
        return usod::lsc_loss(p, lift4(to_tensor(image)), params).scalar();
      },
      py::arg("pred"), py::arg("image"), py::arg("kernel") = 5, py::arg("sigma_color") = 0.1,
      py::arg("sigma_space") = 3.0, "Local saliency-coherence loss (value)");

  m.def("generate_synthetic_dataset", &usod::generate_synthetic_dataset, py::arg("dir"),
        py::arg("count"), py::arg("size"), py::arg("seed"),
        "Write a synthetic dataset with gt/ masks");

  m.def(
      "train",
      [](const std::string& config_path) {
        return usod::train(usod::TrainConfig::from_config(usod::Config::parse_file(config_path)));
      },
      py::arg("config_path"), "Run the training loop; returns the final checkpoint path");

  m.def(
      "evaluate",
      [](const std::string& pred_dir, const std::string& gt_dir) {
        usod::EvalReport report = usod::evaluate_dataset(pred_dir, gt_dir);
        py::list rows;
        for (const auto& r : report.rows) {
          py::dict d;
          d["dataset"] = r.dataset;
          d["image_count"] = r.image_count;
          d["f_beta"] = r.f_beta;
          d["e_measure"] = r.e_measure;
          d["mae"] = r.mae;
          rows.append(d);
        }
        return rows;
      },
      py::arg("pred_dir"), py::arg("gt_dir"), "Score prediction PNGs against ground-truth masks");
}
