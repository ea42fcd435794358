#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <optional>
#include <string>

#include "json.hpp"
#include "splinegauss/errors.hpp"
#include "splinegauss/harness.hpp"
#include "splinegauss/io.hpp"
#include "splinegauss/losses.hpp"
#include "splinegauss/metrics.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/spline_basis.hpp"
#include "splinegauss/trainer.hpp"

namespace py = pybind11;
using namespace splinegauss;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

/// (H, W) for one channel, (H, W, C) otherwise.
py::array_t<double> to_numpy(const Image& img) {
  std::vector<py::ssize_t> shape{img.height, img.width};
  if (img.channels != 1) shape.push_back(img.channels);
  py::array_t<double> out(shape);
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image from_numpy(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("expected an (H, W) or (H, W, C) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), c);
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

// Python dicts cross the boundary as JSON text so both sides share one schema.
json to_json(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

TrainConfig config_from(const py::object& obj) {
  return obj.is_none() ? TrainConfig{} : train_config_from_json(to_json(obj));
}

SyntheticSceneSpec spec_from(const py::object& spec) {
  if (py::isinstance<py::str>(spec)) {
    const auto name = spec.cast<std::string>();
    if (name == "desk") return SyntheticSceneSpec::desk_default();
    if (name == "desk_static") return SyntheticSceneSpec::desk_static();
    throw FormatError("unknown preset " + name);
  }
  return spec_from_json(to_json(spec));
}

py::dict outputs_dict(const RenderOutputs& o) {
  py::dict d;
  d["color"] = to_numpy(o.color);
  d["obj_mask"] = to_numpy(o.obj_mask);
  d["inv_depth"] = to_numpy(o.inv_depth);
  d["transmittance"] = to_numpy(o.transmittance);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dynamic Gaussian splatting with spline motion curves";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidOrderError>(m, "InvalidOrderError", base.ptr());
  py::register_exception<InvalidCurveError>(m, "InvalidCurveError", base.ptr());
  py::register_exception<AmbiguousLogError>(m, "AmbiguousLogError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def(
      "basis_matrix",
      [](int k) {
        const BasisMatrix& b = basis_matrix(k);
        py::array_t<double> out({k, k});
        std::copy(b.values.begin(), b.values.end(), out.mutable_data());
        return out;
      },
      py::arg("order"), "Uniform B-spline segment matrix M_k as a k x k array.");

  m.def(
      "eval_curve",
      [](const Array& controls, int order, double t_min, double t_max, const Array& times) {
        if (controls.ndim() != 2 || controls.shape(1) != 3) throw ShapeError("controls must be (n, 3)");
        std::vector<Eigen::Vector3d> cps(controls.shape(0));
        for (size_t i = 0; i < cps.size(); ++i)
          cps[i] = Eigen::Vector3d(controls.at(i, 0), controls.at(i, 1), controls.at(i, 2));
        const BSplineCurve curve(KnotLayout(order, static_cast<int>(cps.size()), t_min, t_max), cps);
        py::array_t<double> out({static_cast<py::ssize_t>(times.size()), py::ssize_t{3}});
        auto w = out.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < times.size(); ++i) {
          const Eigen::Vector3d p = eval_curve(curve, times.data()[i]);
          for (int c = 0; c < 3; ++c) w(i, c) = p[c];
        }
        return out;
      },
      py::arg("controls"), py::arg("order"), py::arg("t_min") = 0.0, py::arg("t_max") = 1.0, py::arg("times"),
      "Evaluates a uniform B-spline curve at each time.");

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(from_numpy(a), from_numpy(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(from_numpy(a), from_numpy(b)); });

  py::class_<Scene>(m, "Scene")
      .def_property_readonly("size", [](const Scene& s) { return s.gaussians.size(); })
      .def_property_readonly("object_count", &Scene::object_count)
      .def_property_readonly("background_count", &Scene::background_count)
      .def_readonly("sh_degree", &Scene::sh_degree)
      .def("normalize_time", &Scene::normalize_time, py::arg("seconds"))
      .def("save", [](const Scene& s, const std::string& path) { save_checkpoint(s, path); }, py::arg("path"))
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("means", [](const Scene& s) {
        py::array_t<double> out({static_cast<py::ssize_t>(s.gaussians.size()), py::ssize_t{3}});
        auto w = out.mutable_unchecked<2>();
        for (size_t i = 0; i < s.gaussians.size(); ++i)
          for (int c = 0; c < 3; ++c) w(i, c) = s.gaussians[i].mu[c];
        return out;
      })
      .def("__len__", [](const Scene& s) { return s.gaussians.size(); });

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &load_dataset, py::arg("path"))
      .def("save", [](const Dataset& d, const std::string& path) { save_dataset(d, path); }, py::arg("path"))
      .def_property_readonly("frame_count", [](const Dataset& d) { return d.frames.size(); })
      .def_property_readonly("point_count", [](const Dataset& d) { return d.points.size(); })
      .def("train_indices", &Dataset::train_indices)
      .def("test_indices", &Dataset::test_indices)
      .def("image", [](const Dataset& d, int f) { return to_numpy(d.frames.at(f).color); }, py::arg("frame"))
      .def("camera", [](const Dataset& d, int f) { return from_json(camera_to_json(d.frames.at(f).camera)); },
           py::arg("frame"));

  m.def(
      "synthesize",
      [](const py::object& spec, std::uint64_t seed) {
        SyntheticResult r = synthesize(spec_from(spec), seed);
        return py::make_tuple(std::move(r.dataset), std::move(r.truth));
      },
      py::arg("spec") = "desk", py::arg("seed") = 0,
      "Returns (dataset, hidden scene) for a preset name or a spec dict.");

  m.def("default_spec", [](const std::string& name) { return from_json(spec_to_json(spec_from(py::str(name)))); },
        py::arg("preset") = "desk");
  m.def("default_config", [] { return from_json(train_config_to_json(TrainConfig{})); });

  m.def(
      "init_scene",
      [](const Dataset& d, const py::object& config) { return init_scene(d, config_from(config).init); },
      py::arg("dataset"), py::arg("config") = py::none(), "Seeds a scene from LiDAR points and object masks.");

  m.def(
      "fit",
      [](Scene& scene, const Dataset& data, const py::object& config) {
        const TrainConfig c = config_from(config);
        FitReport r;
        {
          py::gil_scoped_release release;
          r = fit(scene, data, c);
        }
        py::dict out;
        py::list snaps;
        for (const auto& s : r.snapshots) snaps.append(py::make_tuple(s.iteration, s.test_psnr, s.test_ssim));
        py::list totals;
        for (const auto& it : r.iterations) totals.append(it.loss.total);
        out["snapshots"] = snaps;
        out["loss"] = totals;
        out["events"] = r.events;
        out["final_gaussians"] = r.final_gaussians;
        out["final_objects"] = r.final_objects;
        return out;
      },
      py::arg("scene"), py::arg("dataset"), py::arg("config") = py::none(),
      "Optimizes the scene in place and returns a summary dict.");

  m.def(
      "render",
      [](const Scene& scene, const py::object& camera, std::optional<double> t) {
        const Camera cam = camera_from_json(to_json(camera));
        const double time = t ? *t : scene.normalize_time(cam.timestamp);
        RenderOutputs o;
        {
          py::gil_scoped_release release;
          o = render(scene, cam, time);
        }
        return outputs_dict(o);
      },
      py::arg("scene"), py::arg("camera"), py::arg("t") = py::none(),
      "Renders color, object mask, inverse depth and transmittance.");

  m.def(
      "evaluate",
      [](const Scene& scene, const Dataset& data, std::optional<std::vector<int>> frames) {
        const std::vector<int> f = frames ? *frames : data.test_indices();
        const EvalResult r = evaluate(scene, data, f);
        py::dict out;
        out["psnr"] = r.psnr;
        out["ssim"] = r.ssim;
        out["frame_psnr"] = r.frame_psnr;
        out["frame_ssim"] = r.frame_ssim;
        return out;
      },
      py::arg("scene"), py::arg("dataset"), py::arg("frames") = py::none());

  m.def("grad_check_components", &grad_check_components);
  m.def(
      "grad_check",
      [](const std::string& name, std::uint64_t seed) {
        const GradCheckReport r = grad_check(name, seed);
        py::dict out;
        out["tolerance"] = r.tolerance;
        out["max_rel_error"] = r.max_rel_error;
        out["checked"] = r.checked;
        out["passed"] = r.passed();
        return out;
      },
      py::arg("component"), py::arg("seed") = 0);
}
