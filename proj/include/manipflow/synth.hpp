#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "manipflow/contact.hpp"
#include "manipflow/object.hpp"
#include "manipflow/tracker.hpp"

namespace manipflow::synth {

/// Rigid body with points given at frame 0 (world coordinates). poses[t] maps
/// frame-0 coordinates to frame t, so poses[0] is the identity.
struct Body {
  std::string name;
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<Vec3> colors;
  std::vector<RigidPose> poses;
};

struct Hinge {
  Vec3 axis;   // unit direction
  Vec3 point;  // a point on the axis
};

struct SyntheticScene {
  std::string name;
  std::vector<Body> bodies;
  int actor_body = -1;
  int object_body = -1;
  FrameWindow scripted_contact{0, 0};  // proximity window of the scripted poses
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  double contact_dist = 0.02;
  std::optional<Hinge> hinge;

  std::size_t num_frames() const { return bodies.empty() ? 0 : bodies.front().poses.size(); }
  void validate() const;
};

struct GroundTruth {
  SyntheticScene scene;                 // bodies with exact poses
  std::vector<int> point_body;          // body index of every frame point (same order each frame)
  std::optional<FrameWindow> contact;   // frames whose noise-free actor/background distance <= contact_dist
  Vec3 actor_seed = Vec3::Zero();       // centroid of the actor at frame 0
};

struct SyntheticOutput {
  std::vector<PointCloud> frames;
  GroundTruth truth;
};

/// Frame t = union of bodies under poses[t] plus isotropic Gaussian noise.
SyntheticOutput generate(const SyntheticScene& scene);

/// Parameters of the canned scenarios.
struct ScenarioConfig {
  std::string scenario = "drawer";  // pitcher | drawer | door | static | two_box
  int num_frames = 24;
  double noise_sigma = 0.002;
  std::uint64_t seed = 7;
  double spacing = 0.014;           // surface sampling step (meters)
  double contact_dist = 0.02;
};

SyntheticScene make_scenario(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioConfig& config);

std::string truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const std::string& text);

/// Everything score() needs from a pipeline run.
struct RunOutputs {
  LabeledTrajectorySet trajectories;
  std::vector<ContactEvent> contacts;
  std::vector<ObjectResult> objects;  // objects[k] belongs to contacts[k]
};

struct Metrics {
  double contact_iou = 0;
  double segment_iou = 0;
  int matched_event = -1;
  std::vector<double> rotation_error_deg;     // per window frame
  std::vector<double> translation_error_m;
  double max_rotation_error_deg = 0;
  double max_translation_error_m = 0;
  double trajectory_rmse = 0;
  std::optional<double> axis_error_deg;       // hinge scenes only
  double label_accuracy = 0;
};

/// Ground-truth body of every model point (nearest noise-free frame-0 point).
std::vector<int> model_point_bodies(const GroundTruth& truth, const PointCloud& model);

Metrics score(const RunOutputs& result, const GroundTruth& truth);

/// Outputs a perfect pipeline would produce for the noise-free scene.
RunOutputs truth_as_outputs(const GroundTruth& truth);

std::string metrics_to_json(const Metrics& m);

double interval_iou(FrameWindow a, FrameWindow b);
double set_iou(const std::vector<Index>& a, const std::vector<Index>& b);
/// Unit rotation axis of R (undefined for the identity; returns +z then).
Vec3 rotation_axis(const Mat3& r);

}  // namespace manipflow::synth
