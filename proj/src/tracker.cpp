#include "manipflow/tracker.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace manipflow {

void TrajectorySet::validate() const {
  for (const auto& s : states) {
    if (s.size() != num_points()) throw input_error("trajectories: point count changes across frames");
    s.validate();
  }
}

std::vector<Index> LabeledTrajectorySet::indices_with(Label label) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(static_cast<Index>(i));
  return out;
}

void LabeledTrajectorySet::validate() const {
  trajectories.validate();
  if (labels.size() != trajectories.num_points())
    throw input_error("labels: count differs from trajectory point count");
}

TrajectorySet track_sequence(const std::vector<PointCloud>& frames, const RegistrationParams& params,
                             const TrackProgress& progress) {
  if (frames.empty()) throw input_error("track: no frames");
  return track_sequence(frames.front(), frames, params, progress);
}

TrajectorySet track_sequence(const PointCloud& model, const std::vector<PointCloud>& frames,
                             const RegistrationParams& params, const TrackProgress& progress) {
  if (frames.size() < 2) throw input_error("track: need at least 2 frames");
  if (model.empty()) throw input_error("track: frame 0 is empty");
  params.validate();
  if (model.size() < static_cast<std::size_t>(params.graph_k) + 1)
    throw input_error("track: model needs at least graph_k + 1 points");

  // graph topology and weights stay those of the initial model
  const NeighborhoodGraph graph = build_regularization_graph(model, params.graph_k, params.sigma_reg);

  TrajectorySet traj;
  traj.states.reserve(frames.size());
  traj.states.push_back(model);
  WarpField warm(model.size());
  for (std::size_t t = 1; t < frames.size(); ++t) {
    if (frames[t].empty())
      throw TrackingError(ErrorKind::Input, t, "track: frame " + std::to_string(t) + " is empty");
    RegistrationReport report;
    try {
      warm = register_nonrigid(traj.states.back(), frames[t], graph, warm, params, &report);
    } catch (const Error& e) {
      throw TrackingError(e.kind(), t, "track: frame " + std::to_string(t) + ": " + e.what());
    }
    traj.states.push_back(apply_warp(traj.states.back(), warm));
    if (progress) progress(t, report);
  }
  return traj;
}

std::string trajectories_to_csv(const TrajectorySet& traj, const std::vector<Label>& labels) {
  if (!labels.empty() && labels.size() != traj.num_points())
    throw input_error("trajectories csv: label count differs from point count");
  std::string out = "frame,point_id,x,y,z,label\n";
  out.reserve(out.size() + traj.num_frames() * traj.num_points() * 64);
  char buf[160];
  for (std::size_t t = 0; t < traj.num_frames(); ++t)
    for (std::size_t i = 0; i < traj.num_points(); ++i) {
      const Vec3& p = traj.states[t].positions[i];
      const int label = labels.empty() ? 0 : static_cast<int>(labels[i]);
      const int n = std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%d\n", t, i, p.x(),
                                  p.y(), p.z(), label);
      out.append(buf, static_cast<std::size_t>(n));
    }
  return out;
}

LabeledTrajectorySet trajectories_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame,point_id,x,y,z,label", 0) != 0)
    throw input_error("trajectories csv: bad header");
  LabeledTrajectorySet out;
  auto& states = out.trajectories.states;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::size_t frame = 0, point = 0;
    int label = 0;
    double x = 0, y = 0, z = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%d", &frame, &point, &x, &y, &z, &label) != 6)
      throw input_error("trajectories csv: malformed row " + std::to_string(row));
    if (frame == states.size()) states.emplace_back();
    if (frame + 1 != states.size() || point != states.back().size())
      throw input_error("trajectories csv: rows out of order at line " + std::to_string(row));
    states.back().positions.emplace_back(x, y, z);
    if (frame == 0) out.labels.push_back(label ? Label::Actor : Label::Background);
  }
  out.validate();
  return out;
}

}  // namespace manipflow
