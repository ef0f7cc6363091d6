#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "manipflow/actor.hpp"
#include "manipflow/contact.hpp"
#include "manipflow/io.hpp"
#include "manipflow/object.hpp"
#include "manipflow/pipeline.hpp"
#include "manipflow/registration.hpp"
#include "manipflow/synth.hpp"
#include "manipflow/tracker.hpp"

namespace py = pybind11;
using namespace manipflow;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("expected an (N, 3) array");
  std::vector<Vec3> out(a.shape(0));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = Vec3(r(i, 0), r(i, 1), r(i, 2));
  return out;
}

Array to_array(const std::vector<Vec3>& points) {
  Array a({static_cast<py::ssize_t>(points.size()), py::ssize_t{3}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < points.size(); ++i)
    for (int c = 0; c < 3; ++c) w(i, c) = points[i][c];
  return a;
}

Array matrix_to_array(const Mat3& m) {
  Array a({py::ssize_t{3}, py::ssize_t{3}});
  auto w = a.mutable_unchecked<2>();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) w(i, j) = m(i, j);
  return a;
}

Array trajectories_to_array(const TrajectorySet& traj) {
  Array a({static_cast<py::ssize_t>(traj.num_frames()), static_cast<py::ssize_t>(traj.num_points()), py::ssize_t{3}});
  auto w = a.mutable_unchecked<3>();
  for (std::size_t t = 0; t < traj.num_frames(); ++t)
    for (std::size_t i = 0; i < traj.num_points(); ++i)
      for (int c = 0; c < 3; ++c) w(t, i, c) = traj.states[t].positions[i][c];
  return a;
}

TrajectorySet array_to_trajectories(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("expected a (T, N, 3) array");
  auto r = a.unchecked<3>();
  TrajectorySet out;
  out.states.resize(a.shape(0));
  for (py::ssize_t t = 0; t < a.shape(0); ++t)
    for (py::ssize_t i = 0; i < a.shape(1); ++i) out.states[t].positions.emplace_back(r(t, i, 0), r(t, i, 1), r(t, i, 2));
  return out;
}

LabeledTrajectorySet labeled(const Array& traj, const std::vector<bool>& actor) {
  LabeledTrajectorySet out;
  out.trajectories = array_to_trajectories(traj);
  for (bool a : actor) out.labels.push_back(a ? Label::Actor : Label::Background);
  return out;
}

std::vector<bool> actor_mask(const std::vector<Label>& labels) {
  std::vector<bool> out;
  for (Label l : labels) out.push_back(l == Label::Actor);
  return out;
}

py::dict pose_dict(const RigidPose& p) {
  py::dict d;
  d["rotation"] = matrix_to_array(p.rotation);
  d["translation"] = to_array({p.translation})[py::int_(0)];
  return d;
}

py::dict event_dict(const ContactEvent& e) {
  py::dict d;
  d["start"] = e.start_frame;
  d["end"] = e.end_frame;
  d["actor_points"] = e.actor_points;
  d["background_points"] = e.background_points;
  d["centroids"] = to_array(e.centroids);
  return d;
}

ContactEvent event_from_dict(const py::dict& d) {
  ContactEvent e;
  e.start_frame = d["start"].cast<int>();
  e.end_frame = d["end"].cast<int>();
  if (d.contains("actor_points")) e.actor_points = d["actor_points"].cast<std::vector<Index>>();
  if (d.contains("background_points")) e.background_points = d["background_points"].cast<std::vector<Index>>();
  if (d.contains("centroids")) e.centroids = to_points(d["centroids"].cast<Array>());
  return e;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dense scene tracking and manipulated-object extraction";
  m.attr("__version__") = kVersion;

  // owned by the module for the lifetime of the interpreter
  static py::handle error_type = PyErr_NewException("manipflow.ManipflowError", PyExc_RuntimeError, nullptr);
  m.add_object("ManipflowError", error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(std::string(to_string(e.kind())) + ": " + e.what());
      exc.attr("kind") = to_string(e.kind());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<PointCloud>(m, "PointCloud")
      .def(py::init<>())
      .def(py::init([](const Array& positions, std::optional<Array> normals, std::optional<Array> colors) {
             PointCloud c;
             c.positions = to_points(positions);
             if (normals) c.normals = to_points(*normals);
             if (colors) c.colors = to_points(*colors);
             c.validate();
             return c;
           }),
           py::arg("positions"), py::arg("normals") = py::none(), py::arg("colors") = py::none())
      .def_property(
          "positions", [](const PointCloud& c) { return to_array(c.positions); },
          [](PointCloud& c, const Array& a) { c.positions = to_points(a); })
      .def_property(
          "normals", [](const PointCloud& c) { return to_array(c.normals); },
          [](PointCloud& c, const Array& a) { c.normals = to_points(a); })
      .def_property(
          "colors", [](const PointCloud& c) { return to_array(c.colors); },
          [](PointCloud& c, const Array& a) { c.colors = to_points(a); })
      .def("__len__", &PointCloud::size)
      .def("validate", &PointCloud::validate);

  m.def("read_ply", &io::read_ply, py::arg("path"));
  m.def("write_ply", [](const std::filesystem::path& p, const PointCloud& c, bool binary) {
          io::write_ply(p, c, binary ? io::PlyFormat::BinaryLittleEndian : io::PlyFormat::Ascii);
        },
        py::arg("path"), py::arg("cloud"), py::arg("binary") = true);
  m.def(
      "estimate_normals",
      [](const PointCloud& c, int k, std::optional<Array> viewpoint) {
        const Vec3 v = viewpoint ? to_points(viewpoint->reshape({1, 3}))[0] : Vec3::Zero();
        auto est = estimate_normals(c, k, v);
        return py::make_tuple(est.cloud, est.valid);
      },
      py::arg("cloud"), py::arg("k") = 10, py::arg("viewpoint") = py::none());
  m.def("voxel_downsample", &voxel_downsample, py::arg("cloud"), py::arg("leaf"));

  py::class_<RegistrationParams>(m, "RegistrationParams")
      .def(py::init<>())
      .def_readwrite("w_point", &RegistrationParams::w_point)
      .def_readwrite("w_stiff", &RegistrationParams::w_stiff)
      .def_readwrite("delta", &RegistrationParams::delta)
      .def_readwrite("sigma_reg", &RegistrationParams::sigma_reg)
      .def_readwrite("max_dist", &RegistrationParams::max_dist)
      .def_readwrite("max_normal_angle", &RegistrationParams::max_normal_angle)
      .def_readwrite("max_color_diff", &RegistrationParams::max_color_diff)
      .def_readwrite("icp_iters", &RegistrationParams::icp_iters)
      .def_readwrite("gn_iters", &RegistrationParams::gn_iters)
      .def_readwrite("cg_iters", &RegistrationParams::cg_iters)
      .def_readwrite("cg_tol", &RegistrationParams::cg_tol)
      .def_readwrite("graph_k", &RegistrationParams::graph_k)
      .def_readwrite("convergence_tol", &RegistrationParams::convergence_tol)
      .def("validate", &RegistrationParams::validate);

  m.def(
      "register_nonrigid",
      [](const PointCloud& model, const PointCloud& target, const RegistrationParams& params) {
        const auto warp = register_nonrigid(model, target, WarpField(model.size()), params);
        py::array_t<double> out({static_cast<py::ssize_t>(warp.size()), py::ssize_t{6}});
        auto w = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < warp.size(); ++i)
          for (int k = 0; k < 6; ++k) w(i, k) = warp.transforms[i][k];
        return py::make_tuple(out, apply_warp(model, warp));
      },
      py::arg("model"), py::arg("target"), py::arg("params") = RegistrationParams{},
      "Returns the (N, 6) warp [alpha beta gamma tx ty tz] and the warped model.");

  m.def(
      "track_sequence",
      [](const std::vector<PointCloud>& frames, const RegistrationParams& params) {
        return trajectories_to_array(track_sequence(frames, params));
      },
      py::arg("frames"), py::arg("params") = RegistrationParams{}, "Tracks frame 0 through the frames; (T, N, 3).");

  m.def(
      "segment_actor",
      [](const PointCloud& model, double radius, const std::string& select, std::optional<Array> seed) {
        std::vector<Label> labels;
        if (select == "largest") {
          labels = segment_by_component(model, radius, selectors::largest());
        } else {
          if (!seed) throw config_error("segment_actor: '" + select + "' needs a seed point");
          const Vec3 s = to_points(seed->reshape({1, 3}))[0];
          if (select == "closest-to") labels = segment_by_component(model, radius, selectors::closest_to(s));
          else if (select == "seed") labels = segment_by_seed(model, nearest_point(model, s), radius);
          else throw config_error("segment_actor: select must be largest, closest-to or seed");
        }
        return actor_mask(labels);
      },
      py::arg("model"), py::arg("radius") = 0.05, py::arg("select") = "largest", py::arg("seed") = py::none(),
      "Boolean actor mask over the model points.");

  m.def(
      "detect_contacts",
      [](const Array& traj, const std::vector<bool>& actor, double contact_dist, int min_duration) {
        py::list out;
        for (const auto& e : detect_contacts(labeled(traj, actor), contact_dist, min_duration)) out.append(event_dict(e));
        return out;
      },
      py::arg("trajectories"), py::arg("actor"), py::arg("contact_dist") = 0.02, py::arg("min_duration") = 3);

  py::class_<ObjectParams>(m, "ObjectParams")
      .def(py::init<>())
      .def_readwrite("attention_radius", &ObjectParams::attention_radius)
      .def_readwrite("sigma", &ObjectParams::sigma)
      .def_readwrite("ransac_iters", &ObjectParams::ransac_iters)
      .def_readwrite("inlier_dist", &ObjectParams::inlier_dist)
      .def_readwrite("seed", &ObjectParams::seed)
      .def_readwrite("kmeans_restarts", &ObjectParams::kmeans_restarts)
      .def_readwrite("max_candidates", &ObjectParams::max_candidates)
      .def("validate", &ObjectParams::validate);

  m.def(
      "segment_object",
      [](const Array& traj, const std::vector<bool>& actor, const py::dict& event, const ObjectParams& params) {
        const auto r = segment_object(labeled(traj, actor), event_from_dict(event), params);
        py::dict d;
        d["segment"] = r.segment;
        d["initial_cluster"] = r.initial_cluster;
        d["candidates"] = r.candidates;
        py::list poses;
        for (const auto& fp : r.poses) {
          auto p = pose_dict(fp.pose);
          p["frame"] = fp.frame;
          poses.append(p);
        }
        d["poses"] = poses;
        d["inlier_sets"] = r.inlier_sets;
        return d;
      },
      py::arg("trajectories"), py::arg("actor"), py::arg("event"), py::arg("params") = ObjectParams{});

  m.def(
      "umeyama_rigid_fit",
      [](const Array& src, const Array& dst) { return pose_dict(umeyama_rigid_fit(to_points(src), to_points(dst))); },
      py::arg("src"), py::arg("dst"));
  m.def(
      "ransac_rigid",
      [](const Array& src, const Array& dst, double inlier_dist, int iters, std::uint64_t seed) {
        const auto r = ransac_rigid(to_points(src), to_points(dst), inlier_dist, iters, seed);
        auto d = pose_dict(r.pose);
        d["inliers"] = r.inliers;
        return d;
      },
      py::arg("src"), py::arg("dst"), py::arg("inlier_dist") = 0.01, py::arg("iters") = 500, py::arg("seed") = 42);

  m.def(
      "generate_scenario",
      [](const std::string& scenario_json) {
        const auto out = synth::generate(synth::make_scenario(synth::scenario_from_json(scenario_json)));
        return py::make_tuple(out.frames, synth::truth_to_json(out.truth));
      },
      py::arg("scenario_json"), "Frames and the ground truth JSON of a canned scenario.");
  m.def(
      "write_synthetic_dataset",
      [](const std::string& scenario_json, const std::filesystem::path& dir) {
        write_synthetic_dataset(synth::scenario_from_json(scenario_json), dir);
      },
      py::arg("scenario_json"), py::arg("dir"));

  m.def("default_config", []() { return config_to_json(PipelineConfig{}); });
  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& config_json) {
        run_stage(stage_from_name(stage), config_from_json(config_json));
      },
      py::arg("stage"), py::arg("config_json"));
  m.def(
      "run_pipeline", [](const std::string& config_json) { run_pipeline(config_from_json(config_json)); },
      py::arg("config_json"));
  m.def(
      "score_run",
      [](const std::filesystem::path& run_dir, const std::filesystem::path& truth_json) {
        const auto truth = synth::truth_from_json(io::read_text(truth_json));
        return synth::metrics_to_json(synth::score(load_run(run_dir), truth));
      },
      py::arg("run_dir"), py::arg("truth_json"), "Metrics JSON of a run against synthetic ground truth.");
}
