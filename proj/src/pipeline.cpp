#include "manipflow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include <Eigen/Core>

#include "json.hpp"

#include "manipflow/actor.hpp"
#include "manipflow/io.hpp"
#include "manipflow/tracker.hpp"

namespace fs = std::filesystem;

namespace manipflow {

namespace {

using Json = nlohmann::json;

// Reads members of one config section, rejecting anything it was not asked about.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw config_error("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw config_error("config: " + where(key) + " has the wrong type");
    }
  }

  void get_vec3(const char* key, std::optional<Vec3>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 3) throw config_error("config: " + where(key) + " must be [x, y, z]");
    try {
      out = Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
    } catch (const Json::exception&) {
      throw config_error("config: " + where(key) + " must hold numbers");
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw config_error("config: unknown key '" + where(k) + "'");
  }

 private:
  std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

const char* format_name(InputFormat f) {
  switch (f) {
    case InputFormat::Ply: return "ply";
    case InputFormat::Rgbd: return "rgbd";
    default: return "auto";
  }
}

InputFormat format_from_name(const std::string& s) {
  if (s == "auto") return InputFormat::Auto;
  if (s == "ply") return InputFormat::Ply;
  if (s == "rgbd") return InputFormat::Rgbd;
  throw config_error("config: input_format must be auto, ply or rgbd");
}

Json config_json(const PipelineConfig& c) {
  const auto& r = c.registration;
  const auto& o = c.objects;
  Json actor = {{"radius", c.actor.radius}, {"select", c.actor.select}};
  actor["seed"] = c.actor.seed ? Json{c.actor.seed->x(), c.actor.seed->y(), c.actor.seed->z()} : Json(nullptr);
  return {
      {"input", c.input.string()},
      {"input_format", format_name(c.input_format)},
      {"output", c.output.string()},
      {"preprocess", {{"depth_scale", c.depth_scale}, {"max_depth", c.max_depth}, {"normal_k", c.normal_k}, {"voxel_leaf", c.voxel_leaf}}},
      {"registration",
       {{"w_point", r.w_point}, {"w_stiff", r.w_stiff}, {"delta", r.delta}, {"sigma_reg", r.sigma_reg},
        {"max_dist", r.max_dist}, {"max_normal_angle_deg", r.max_normal_angle * 180.0 / std::numbers::pi},
        {"max_color_diff", r.max_color_diff}, {"icp_iters", r.icp_iters}, {"gn_iters", r.gn_iters},
        {"cg_iters", r.cg_iters}, {"cg_tol", r.cg_tol}, {"graph_k", r.graph_k}, {"convergence_tol", r.convergence_tol}}},
      {"actor", actor},
      {"contacts", {{"contact_dist", c.contacts.contact_dist}, {"min_duration", c.contacts.min_duration}}},
      {"objects",
       {{"attention_radius", o.attention_radius}, {"sigma", o.sigma}, {"ransac_iters", o.ransac_iters},
        {"inlier_dist", o.inlier_dist}, {"seed", o.seed}, {"kmeans_restarts", o.kmeans_restarts},
        {"max_candidates", o.max_candidates}}},
  };
}

std::vector<fs::path> sorted_matches(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && entry.path().extension() == ext) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

PointCloud with_normals(PointCloud cloud, int k) {
  if (cloud.has_normals() || cloud.size() < static_cast<std::size_t>(k)) return cloud;
  return estimate_normals(cloud, k, Vec3::Zero()).cloud;
}

void require(const fs::path& path, Stage stage) {
  if (!fs::exists(path))
    throw PipelineError(stage, ErrorKind::Dependency,
                        std::string(stage_name(stage)) + ": missing upstream artifact " + path.string());
}

// The manifest accumulates one entry per stage; reruns overwrite their entry.
void update_manifest(const PipelineConfig& config, Stage stage, double seconds, const Json& details) {
  const fs::path path = config.output / artifacts::kManifest;
  Json m = Json::object();
  if (fs::exists(path)) {
    try {
      m = Json::parse(io::read_text(path));
    } catch (const Json::exception&) {
      m = Json::object();
    }
  }
  m["tool"] = "manipflow";
  m["version"] = kVersion;
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["config"] = config_json(config);
  m["seeds"] = {{"objects", config.objects.seed}};
  Json entry = details;
  entry["seconds"] = seconds;
  m["stages"][stage_name(stage)] = entry;
  io::write_text(path, m.dump(2) + "\n");
}

LabeledTrajectorySet read_trajectories(const PipelineConfig& config, Stage stage) {
  const fs::path path = config.output / artifacts::kTrajectories;
  require(path, stage);
  return trajectories_from_csv(io::read_text(path));
}

void remove_object_artifacts(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  std::vector<fs::path> stale;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().filename().string().rfind("object_", 0) == 0) stale.push_back(entry.path());
  for (const auto& p : stale) fs::remove(p);
}

PointCloud overlay(const PointCloud& state, const std::vector<Index>& segment) {
  PointCloud out;
  out.positions = state.positions;
  out.colors.assign(state.size(), Vec3(0.6, 0.6, 0.6));
  for (Index i : segment) out.colors[i] = Vec3(0.9, 0.1, 0.1);
  return out;
}

void stage_track(const PipelineConfig& config, const Logger& log) {
  const auto frames = load_frames(config);
  PointCloud model = frames.front();
  if (config.voxel_leaf > 0) model = voxel_downsample(model, config.voxel_leaf);
  model = with_normals(std::move(model), config.normal_k);
  if (log)
    log("track: " + std::to_string(frames.size()) + " frames, model of " + std::to_string(model.size()) + " points");
  const auto traj = track_sequence(model, frames, config.registration,
                                   [&](std::size_t t, const RegistrationReport& rep) {
                                     if (log)
                                       log("track: frame " + std::to_string(t) + " (" +
                                           std::to_string(rep.outer_iterations) + " icp iterations, " +
                                           std::to_string(rep.last_correspondences) + " matches)");
                                   });
  fs::create_directories(config.output);
  io::write_ply(config.output / artifacts::kModel, model);
  const std::vector<Label> unlabeled(model.size(), Label::Background);
  io::write_text(config.output / artifacts::kTrajectories, trajectories_to_csv(traj, unlabeled));
}

void stage_actor(const PipelineConfig& config, const Logger& log) {
  auto traj = read_trajectories(config, Stage::SegmentActor);
  const PointCloud& model = traj.trajectories.states.front();
  const auto& a = config.actor;
  std::vector<Label> labels;
  if (a.select == "largest") {
    labels = segment_by_component(model, a.radius, selectors::largest());
  } else if (a.select == "closest-to") {
    labels = segment_by_component(model, a.radius, selectors::closest_to(*a.seed));
  } else {
    labels = segment_by_seed(model, nearest_point(model, *a.seed), a.radius);
  }
  if (log && actor_is_fragile(model, labels, a.radius))
    log("segment-actor: warning, the actor splits apart at half the radius; labels depend on the radius");
  traj.labels = labels;
  io::write_text(config.output / artifacts::kLabels, labels_to_json(labels));
  io::write_text(config.output / artifacts::kTrajectories, trajectories_to_csv(traj.trajectories, labels));
}

LabeledTrajectorySet labeled_trajectories(const PipelineConfig& config, Stage stage) {
  auto traj = read_trajectories(config, stage);
  const fs::path labels = config.output / artifacts::kLabels;
  require(labels, stage);
  traj.labels = labels_from_json(io::read_text(labels), traj.trajectories.num_points());
  return traj;
}

void stage_contacts(const PipelineConfig& config, const Logger& log) {
  const auto traj = labeled_trajectories(config, Stage::Contacts);
  const auto events = detect_contacts(traj, config.contacts);
  if (log) log("contacts: " + std::to_string(events.size()) + " event(s)");
  io::write_text(config.output / artifacts::kContacts, contacts_to_json(events));
}

void stage_objects(const PipelineConfig& config, const Logger& log) {
  const auto traj = labeled_trajectories(config, Stage::SegmentObjects);
  const fs::path contacts = config.output / artifacts::kContacts;
  require(contacts, Stage::SegmentObjects);
  const auto events = contacts_from_json(io::read_text(contacts));
  remove_object_artifacts(config.output);
  for (std::size_t k = 0; k < events.size(); ++k) {
    ObjectResult result;
    try {
      result = segment_object(traj, events[k], config.objects);
    } catch (const Error& e) {
      throw PipelineError(Stage::SegmentObjects, e.kind(),
                          "segment-objects: event " + std::to_string(k) + " (frames " +
                              std::to_string(events[k].start_frame) + "-" + std::to_string(events[k].end_frame) +
                              "): " + e.what());
    }
    if (log)
      log("segment-objects: event " + std::to_string(k) + ", " + std::to_string(result.segment.size()) + " points");
    io::write_text(config.output / artifacts::object_json(k), object_to_json(result));
    const auto& states = traj.trajectories.states;
    for (int t = events[k].start_frame; t <= events[k].end_frame; ++t) {
      char name[64];
      std::snprintf(name, sizeof name, "object_%zu_frame_%04d.ply", k, t);
      io::write_ply(config.output / name, overlay(states[t], result.segment));
    }
  }
}

}  // namespace

std::string artifacts::object_json(std::size_t k) { return "object_" + std::to_string(k) + ".json"; }

void PipelineConfig::validate() const {
  if (!(depth_scale > 0)) throw config_error("config: preprocess.depth_scale must be > 0");
  if (!(max_depth >= 0)) throw config_error("config: preprocess.max_depth must be >= 0");
  if (normal_k < 3) throw config_error("config: preprocess.normal_k must be >= 3");
  if (!(voxel_leaf >= 0)) throw config_error("config: preprocess.voxel_leaf must be >= 0");
  registration.validate();
  if (!(actor.radius > 0)) throw config_error("config: actor.radius must be > 0");
  if (actor.select != "largest" && actor.select != "closest-to" && actor.select != "seed")
    throw config_error("config: actor.select must be largest, closest-to or seed");
  if (actor.select != "largest" && !actor.seed)
    throw config_error("config: actor.select '" + actor.select + "' needs actor.seed");
  contacts.validate();
  objects.validate();
  if (output.empty()) throw config_error("config: output must be set");
}

PipelineConfig config_from_json(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  if (root.is_object() && root.contains("config") && root.contains("stages")) root = root["config"];

  PipelineConfig c;
  Section top(root, "");
  std::string input, output = c.output.string(), format = "auto";
  top.get("input", input);
  top.get("output", output);
  top.get("input_format", format);
  c.input = input;
  c.output = output;
  c.input_format = format_from_name(format);

  Section pre = top.sub("preprocess");
  pre.get("depth_scale", c.depth_scale);
  pre.get("max_depth", c.max_depth);
  pre.get("normal_k", c.normal_k);
  pre.get("voxel_leaf", c.voxel_leaf);
  pre.finish();

  auto& r = c.registration;
  double angle_deg = r.max_normal_angle * 180.0 / std::numbers::pi;
  Section reg = top.sub("registration");
  reg.get("w_point", r.w_point);
  reg.get("w_stiff", r.w_stiff);
  reg.get("delta", r.delta);
  reg.get("sigma_reg", r.sigma_reg);
  reg.get("max_dist", r.max_dist);
  reg.get("max_normal_angle_deg", angle_deg);
  reg.get("max_color_diff", r.max_color_diff);
  reg.get("icp_iters", r.icp_iters);
  reg.get("gn_iters", r.gn_iters);
  reg.get("cg_iters", r.cg_iters);
  reg.get("cg_tol", r.cg_tol);
  reg.get("graph_k", r.graph_k);
  reg.get("convergence_tol", r.convergence_tol);
  reg.finish();
  r.max_normal_angle = angle_deg * std::numbers::pi / 180.0;

  Section act = top.sub("actor");
  act.get("radius", c.actor.radius);
  act.get("select", c.actor.select);
  act.get_vec3("seed", c.actor.seed);
  act.finish();

  Section con = top.sub("contacts");
  con.get("contact_dist", c.contacts.contact_dist);
  con.get("min_duration", c.contacts.min_duration);
  con.finish();

  auto& o = c.objects;
  Section obj = top.sub("objects");
  obj.get("attention_radius", o.attention_radius);
  obj.get("sigma", o.sigma);
  obj.get("ransac_iters", o.ransac_iters);
  obj.get("inlier_dist", o.inlier_dist);
  obj.get("seed", o.seed);
  obj.get("kmeans_restarts", o.kmeans_restarts);
  obj.get("max_candidates", o.max_candidates);
  obj.finish();

  top.finish();
  c.validate();
  return c;
}

std::string config_to_json(const PipelineConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string apply_overrides(const std::string& config_json_text, const std::vector<std::string>& assignments) {
  Json root;
  try {
    root = Json::parse(config_json_text);
  } catch (const Json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  if (root.contains("config") && root.contains("stages")) root = root["config"];
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw config_error("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq), value = a.substr(eq + 1);
    Json* node = &root;
    std::size_t pos = 0;
    while (true) {
      const auto dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      if (dot == std::string::npos) {
        Json parsed;
        try {
          parsed = Json::parse(value);
        } catch (const Json::exception&) {
          parsed = value;  // bare strings need no quotes
        }
        (*node)[part] = parsed;
        break;
      }
      node = &(*node)[part];
      pos = dot + 1;
    }
  }
  return root.dump(2);
}

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Track: return "track";
    case Stage::SegmentActor: return "segment-actor";
    case Stage::Contacts: return "contacts";
    case Stage::SegmentObjects: return "segment-objects";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : {Stage::Track, Stage::SegmentActor, Stage::Contacts, Stage::SegmentObjects})
    if (name == stage_name(s)) return s;
  throw config_error("unknown stage '" + name + "'");
}

int exit_code(const PipelineError& error) {
  switch (error.kind()) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Input: return 3;
    case ErrorKind::Dependency: return 4;
    default: return 10 + static_cast<int>(error.stage());
  }
}

std::vector<PointCloud> load_frames(const PipelineConfig& config) {
  const fs::path& dir = config.input;
  if (dir.empty() || !fs::is_directory(dir)) throw input_error("input directory not found: " + dir.string());

  InputFormat format = config.input_format;
  const auto plys = sorted_matches(dir, "", ".ply");
  const auto depths = sorted_matches(dir, "depth_", ".png");
  if (format == InputFormat::Auto) format = !plys.empty() ? InputFormat::Ply : InputFormat::Rgbd;

  std::vector<PointCloud> frames;
  if (format == InputFormat::Ply) {
    for (const auto& p : plys) frames.push_back(with_normals(io::read_ply(p), config.normal_k));
  } else if (!depths.empty()) {
    const auto intrinsics = io::read_intrinsics_json(dir / "intrinsics.json");
    for (const auto& d : depths) {
      const std::string suffix = d.filename().string().substr(6);  // after "depth_"
      const fs::path color = dir / ("color_" + suffix);
      if (!fs::exists(color)) throw input_error("missing color image for " + d.string());
      const auto frame = io::read_rgbd_frame(d, color, intrinsics, config.depth_scale);
      frames.push_back(with_normals(back_project(frame, config.max_depth), config.normal_k));
    }
  }
  if (frames.empty()) throw input_error("no frames found in " + dir.string());
  if (frames.size() < 2) throw input_error("need at least 2 frames, found 1 in " + dir.string());
  for (std::size_t t = 0; t < frames.size(); ++t)
    if (frames[t].empty()) throw input_error("frame " + std::to_string(t) + " has no points");
  return frames;
}

void run_stage(Stage stage, const PipelineConfig& config, const Logger& log) {
  try {
    config.validate();
  } catch (const Error& e) {
    throw PipelineError(stage, e.kind(), e.what());
  }
  const auto t0 = std::chrono::steady_clock::now();
  try {
    switch (stage) {
      case Stage::Track: stage_track(config, log); break;
      case Stage::SegmentActor: stage_actor(config, log); break;
      case Stage::Contacts: stage_contacts(config, log); break;
      case Stage::SegmentObjects: stage_objects(config, log); break;
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const TrackingError& e) {
    throw PipelineError(stage, e.kind(), std::string(stage_name(stage)) + ": frame " + std::to_string(e.frame()) +
                                             ": " + e.what());
  } catch (const Error& e) {
    throw PipelineError(stage, e.kind(), std::string(stage_name(stage)) + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw PipelineError(stage, ErrorKind::Input, std::string(stage_name(stage)) + ": " + e.what());
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  update_manifest(config, stage, seconds, Json::object());
}

void run_pipeline(const PipelineConfig& config, const Logger& log) {
  for (Stage s : {Stage::Track, Stage::SegmentActor, Stage::Contacts, Stage::SegmentObjects}) run_stage(s, config, log);
}

synth::RunOutputs load_run(const fs::path& run_dir) {
  synth::RunOutputs out;
  for (const char* name : {artifacts::kTrajectories, artifacts::kLabels, artifacts::kContacts})
    if (!fs::exists(run_dir / name)) throw Error(ErrorKind::Dependency, "missing run artifact " + (run_dir / name).string());
  out.trajectories = trajectories_from_csv(io::read_text(run_dir / artifacts::kTrajectories));
  out.trajectories.labels =
      labels_from_json(io::read_text(run_dir / artifacts::kLabels), out.trajectories.trajectories.num_points());
  out.contacts = contacts_from_json(io::read_text(run_dir / artifacts::kContacts));
  for (std::size_t k = 0; k < out.contacts.size(); ++k) {
    const fs::path p = run_dir / artifacts::object_json(k);
    if (!fs::exists(p)) break;
    out.objects.push_back(object_from_json(io::read_text(p)));
  }
  return out;
}

void write_synthetic_dataset(const synth::ScenarioConfig& scenario, const fs::path& dir) {
  const auto data = synth::generate(synth::make_scenario(scenario));
  const fs::path frames = fs::absolute(dir) / "frames";
  fs::create_directories(frames);
  for (const auto& entry : fs::directory_iterator(frames))
    if (entry.path().extension() == ".ply") fs::remove(entry.path());
  for (std::size_t t = 0; t < data.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.ply", t);
    io::write_ply(frames / name, data.frames[t]);
  }
  io::write_text(dir / "truth.json", synth::truth_to_json(data.truth));
  io::write_text(dir / "scenario.json", synth::scenario_to_json(scenario));

  PipelineConfig config;
  config.input = frames;
  config.input_format = InputFormat::Ply;
  config.output = fs::absolute(dir) / "run";
  config.contacts.contact_dist = scenario.contact_dist;
  if (data.truth.scene.actor_body >= 0) {
    config.actor.select = "closest-to";
    config.actor.seed = data.truth.actor_seed;
  }
  io::write_text(dir / "config.json", config_to_json(config));
}

}  // namespace manipflow
