#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "manipflow/contact.hpp"
#include "manipflow/error.hpp"
#include "manipflow/tracker.hpp"

namespace manipflow {

struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  RigidPose operator*(const RigidPose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  RigidPose inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
  static RigidPose identity() { return {}; }
};

/// Geodesic rotation distance in radians.
double rotation_angle(const Mat3& a, const Mat3& b);

struct FrameWindow {
  int first = 0;
  int last = 0;  // inclusive
};

/// s_ij = exp(-(d_max - d_min)^2 / (2 sigma^2)), extrema of |p_i(t) - p_j(t)|
/// over the window.
struct TrajectorySimilarity {
  Eigen::MatrixXd matrix;
  double sigma = 0;
};

TrajectorySimilarity trajectory_similarity(const TrajectorySet& traj, std::span<const Index> candidates,
                                           FrameWindow window, double sigma);

struct Bipartition {
  std::vector<Index> first;   // positions into the similarity matrix
  std::vector<Index> second;
};

/// Two-way spectral clustering on the random-walk Laplacian I - D^-1 S:
/// rows of the two lowest generalized eigenvectors go through seeded k-means
/// (k = 2, `restarts` restarts, lowest inertia wins). Rows with a similarity
/// sum below 1e-12 are split off as the second side without clustering.
Bipartition spectral_cluster_2(const TrajectorySimilarity& similarity, std::uint64_t seed,
                               int restarts = 10);

/// Lloyd's k-means with k-means++ seeding. Returns one label per row.
std::vector<int> kmeans(const Eigen::MatrixXd& rows, int k, std::uint64_t seed, int restarts,
                        int max_iters = 100);

/// Mean path length (sum of per-frame step lengths) over the window.
double mean_path_length(const TrajectorySet& traj, std::span<const Index> points, FrameWindow window);

/// The cluster with the larger mean path length; exact ties go to the cluster
/// holding the point nearest to `contact_centroid` at window.first.
std::vector<Index> pick_moving_cluster(const TrajectorySet& traj, const std::vector<Index>& a,
                                       const std::vector<Index>& b, FrameWindow window,
                                       const Vec3& contact_centroid);

/// Least-squares rigid transform dst ~ R src + t (no scaling) with the
/// reflection correction. Throws ErrorKind::Degenerate on < 3 points or
/// collinear source points.
RigidPose umeyama_rigid_fit(std::span<const Vec3> src, std::span<const Vec3> dst);

struct RansacResult {
  RigidPose pose;
  std::vector<Index> inliers;  // ascending
};

/// Hypothesize from 3-point samples, keep the largest consensus, refit on its
/// inliers. Throws ErrorKind::NoConsensus if no sample reaches 3 inliers.
RansacResult ransac_rigid(std::span<const Vec3> src, std::span<const Vec3> dst, double inlier_dist,
                          int iters, std::uint64_t seed);

struct ObjectParams {
  double attention_radius = 0.25;
  double sigma = 0.01;
  int ransac_iters = 500;
  double inlier_dist = 0.01;
  std::uint64_t seed = 42;
  int kmeans_restarts = 10;
  /// Cap on clustered candidates (0 = none); extra candidates are dropped by a seeded shuffle.
  std::size_t max_candidates = 2500;

  void validate() const;
};

struct FramePose {
  int frame = 0;
  RigidPose pose;
};

struct ObjectResult {
  std::vector<Index> segment;          // model point indices, ascending
  std::vector<Index> initial_cluster;  // M^0
  std::vector<Index> candidates;
  std::vector<FramePose> poses;        // refit on the segment, one per window frame
  std::vector<FramePose> ransac_poses; // RANSAC estimates from the initial cluster
  std::vector<std::vector<Index>> inlier_sets;  // I^t per window frame
};

/// Thrown when the per-frame inlier sets have an empty intersection.
class ObjectLostError : public Error {
 public:
  ObjectLostError(const std::string& what, std::vector<std::size_t> counts)
      : Error(ErrorKind::ObjectLost, what), inlier_counts_(std::move(counts)) {}
  const std::vector<std::size_t>& inlier_counts() const noexcept { return inlier_counts_; }

 private:
  std::vector<std::size_t> inlier_counts_;
};

ObjectResult segment_object(const LabeledTrajectorySet& traj, const ContactEvent& event,
                            const ObjectParams& params);

std::string object_to_json(const ObjectResult& result);
ObjectResult object_from_json(const std::string& text);

}  // namespace manipflow
