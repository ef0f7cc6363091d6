#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "manipflow/synth.hpp"
#include "manipflow/tracker.hpp"

using namespace manipflow;
using namespace testing;

namespace {

synth::Body make_body(const std::string& name, const PointCloud& c, std::vector<RigidPose> poses) {
  synth::Body b;
  b.name = name;
  b.points = c.positions;
  b.normals = c.normals;
  b.colors.assign(c.size(), Vec3(0.5, 0.5, 0.5));
  b.poses = std::move(poses);
  return b;
}

/// A drawer box sliding `travel` along -z in front of a static back wall.
synth::SyntheticOutput sliding_drawer(int frames, double travel) {
  synth::SyntheticScene scene;
  scene.name = "slide";
  PointCloud wall = box_surface(Vec3(0, 0, 1.5), Vec3(0.4, 0.3, 0.02), 0.02);
  PointCloud drawer = box_surface(Vec3(0, 0, 1.2), Vec3(0.15, 0.06, 0.1), 0.012);
  std::vector<RigidPose> still(frames), slide(frames);
  for (int t = 0; t < frames; ++t) slide[t].translation = Vec3(0, 0, -travel * t / (frames - 1));
  scene.bodies = {make_body("wall", wall, still), make_body("drawer", drawer, slide)};
  scene.object_body = 1;
  return synth::generate(scene);
}

std::vector<Index> body_points(const synth::GroundTruth& truth, int body) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < truth.point_body.size(); ++i)
    if (truth.point_body[i] == body) out.push_back(static_cast<Index>(i));
  return out;
}

}  // namespace

TEST_CASE("static scene stays still") {
  PointCloud box = box_surface(Vec3(0, 0, 1), Vec3(0.1, 0.1, 0.1), 0.02);
  std::vector<PointCloud> frames(5, box);
  auto traj = track_sequence(frames, RegistrationParams{});
  REQUIRE(traj.num_frames() == 5);
  double worst = 0;
  for (std::size_t t = 0; t < traj.num_frames(); ++t)
    for (std::size_t i = 0; i < box.size(); ++i)
      worst = std::max(worst, (traj.position(t, i) - box.positions[i]).norm());
  CHECK(worst < 1e-3);
}

TEST_CASE("two frames give two states, and states[0] is frame 0") {
  PointCloud box = box_surface(Vec3(0, 0, 1), Vec3(0.1, 0.05, 0.1), 0.02);
  auto moved = transformed(box, Mat3::Identity(), Vec3(0.01, 0, 0));
  auto traj = track_sequence({box, moved}, RegistrationParams{});
  CHECK(traj.num_frames() == 2);
  CHECK(traj.states[0].positions == box.positions);
}

TEST_CASE("drawer slide of 0.2 m over 10 frames") {
  auto data = sliding_drawer(10, 0.2);
  auto traj = track_sequence(data.frames, RegistrationParams{});
  REQUIRE(traj.num_frames() == 10);
  for (const auto& s : traj.states) CHECK(s.size() == data.frames[0].size());

  auto drawer = body_points(data.truth, 1);
  double mean_travel = 0;
  for (Index i : drawer) mean_travel += (traj.position(9, i) - traj.position(0, i)).norm();
  mean_travel /= static_cast<double>(drawer.size());
  CHECK(std::abs(mean_travel - 0.2) <= 0.01);

  auto wall = body_points(data.truth, 0);
  double wall_drift = 0;
  for (Index i : wall) wall_drift = std::max(wall_drift, (traj.position(9, i) - traj.position(0, i)).norm());
  CHECK(wall_drift < 0.01);
}

TEST_CASE("tracking is deterministic") {
  auto data = sliding_drawer(4, 0.05);
  RegistrationParams p;
  p.icp_iters = 4;
  auto a = track_sequence(data.frames, p);
  auto b = track_sequence(data.frames, p);
  for (std::size_t t = 0; t < a.num_frames(); ++t) CHECK(a.states[t].positions == b.states[t].positions);
}

TEST_CASE("tracking errors") {
  PointCloud box = box_surface(Vec3(0, 0, 1), Vec3(0.1, 0.1, 0.1), 0.02);
  CHECK_THROWS_AS(track_sequence({box}, RegistrationParams{}), Error);
  CHECK_THROWS_AS(track_sequence({}, RegistrationParams{}), Error);

  auto far = transformed(box, Mat3::Identity(), Vec3(3, 0, 0));
  try {
    track_sequence({box, box, far}, RegistrationParams{});
    FAIL("expected a tracking error");
  } catch (const TrackingError& e) {
    CHECK(e.frame() == 2);
    CHECK(e.kind() == ErrorKind::NoOverlap);
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("trajectory CSV round trip") {
  auto data = sliding_drawer(3, 0.03);
  TrajectorySet traj;
  traj.states = data.frames;
  std::vector<Label> labels(traj.num_points(), Label::Background);
  labels[3] = labels[10] = Label::Actor;
  const std::string csv = trajectories_to_csv(traj, labels);
  CHECK(csv.rfind("frame,point_id,x,y,z,label\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(1 + 3 * traj.num_points()));
  auto back = trajectories_from_csv(csv);
  CHECK(back.labels == labels);
  for (std::size_t t = 0; t < 3; ++t) CHECK(back.trajectories.states[t].positions == traj.states[t].positions);
  CHECK(trajectories_to_csv(back.trajectories, back.labels) == csv);

  CHECK_THROWS_AS(trajectories_from_csv("a,b\n1,2\n"), Error);
  CHECK_THROWS_AS(trajectories_to_csv(traj, std::vector<Label>(2)), Error);
}
