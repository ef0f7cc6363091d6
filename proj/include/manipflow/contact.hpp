#pragma once

#include <string>
#include <vector>

#include "manipflow/tracker.hpp"

namespace manipflow {

struct ContactEvent {
  int start_frame = 0;
  int end_frame = 0;                   // inclusive
  std::vector<Index> actor_points;     // within contact_dist at start_frame
  std::vector<Index> background_points;
  std::vector<Vec3> centroids;         // mean of background_points, one per frame in [start, end]

  int duration() const noexcept { return end_frame - start_frame + 1; }
};

struct ContactParams {
  double contact_dist = 0.02;  // meters
  int min_duration = 3;        // frames

  void validate() const;
};

/// Minimum actor/background distance at one frame (exact, kd-tree over the smaller side).
double min_cluster_distance(const LabeledTrajectorySet& traj, std::size_t frame);

/// Maximal runs of frames with actor/background distance <= contact_dist and
/// length >= min_duration. Simultaneous contacts whose background points are
/// not connected at 2 * contact_dist are reported as separate events.
std::vector<ContactEvent> detect_contacts(const LabeledTrajectorySet& traj, double contact_dist,
                                          int min_duration);
inline std::vector<ContactEvent> detect_contacts(const LabeledTrajectorySet& traj,
                                                 const ContactParams& params) {
  return detect_contacts(traj, params.contact_dist, params.min_duration);
}

std::string contacts_to_json(const std::vector<ContactEvent>& events);
std::vector<ContactEvent> contacts_from_json(const std::string& text);

}  // namespace manipflow
