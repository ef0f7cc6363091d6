#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "manipflow/error.hpp"
#include "manipflow/registration.hpp"

namespace manipflow {

enum class Label : std::uint8_t { Background = 0, Actor = 1 };

/// Model snapshots over time; states[t].positions[i] is model point i at frame t.
struct TrajectorySet {
  std::vector<PointCloud> states;

  std::size_t num_frames() const noexcept { return states.size(); }
  std::size_t num_points() const noexcept { return states.empty() ? 0 : states.front().size(); }
  const Vec3& position(std::size_t frame, Index point) const { return states[frame].positions[point]; }
  void validate() const;
};

struct LabeledTrajectorySet {
  TrajectorySet trajectories;
  std::vector<Label> labels;

  std::vector<Index> indices_with(Label label) const;
  void validate() const;
};

/// Registration failure while tracking; carries the frame that failed.
class TrackingError : public Error {
 public:
  TrackingError(ErrorKind kind, std::size_t frame, const std::string& what)
      : Error(kind, what), frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

using TrackProgress = std::function<void(std::size_t frame, const RegistrationReport&)>;

/// Warps frames[0] through the sequence, chaining previous state -> next frame
/// and warm-starting each registration with the previous warp.
TrajectorySet track_sequence(const std::vector<PointCloud>& frames, const RegistrationParams& params,
                             const TrackProgress& progress = {});

/// Same, with an explicit model standing in for frames[0] (e.g. a downsampled copy).
TrajectorySet track_sequence(const PointCloud& model, const std::vector<PointCloud>& frames,
                             const RegistrationParams& params, const TrackProgress& progress = {});

/// CSV with header frame,point_id,x,y,z,label; one row per (frame, point).
/// Coordinates use 17 significant digits so reloading is exact.
std::string trajectories_to_csv(const TrajectorySet& traj, const std::vector<Label>& labels);
LabeledTrajectorySet trajectories_from_csv(const std::string& text);

}  // namespace manipflow
