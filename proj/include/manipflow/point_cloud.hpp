#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace manipflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index = std::int64_t;

/// Colored, optionally oriented point set. Normals and colors are either empty
/// or sized like positions.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  std::vector<Vec3> colors;  // RGB in [0,1]

  std::size_t size() const noexcept { return positions.size(); }
  bool empty() const noexcept { return positions.empty(); }
  bool has_normals() const noexcept { return !normals.empty(); }
  bool has_colors() const noexcept { return !colors.empty(); }

  /// Throws input error when attribute lengths disagree or a normal is not unit length.
  void validate() const;

  PointCloud subset(const std::vector<Index>& indices) const;
};

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
};

struct RGBDFrame {
  std::vector<double> depth;     // meters, row-major, 0 = invalid
  std::vector<Vec3> color;       // row-major, RGB in [0,1]
  CameraIntrinsics intrinsics;
};

/// Pixels with depth > 0 (and <= max_depth when max_depth > 0) become points
/// carrying their pixel color.
PointCloud back_project(const RGBDFrame& frame, double max_depth = 0.0);

/// Pixel coordinates and depth of a camera-frame point.
Eigen::Vector3d project(const CameraIntrinsics& intrinsics, const Vec3& point);

struct NormalEstimate {
  PointCloud cloud;
  std::vector<bool> valid;  // false where the neighborhood covariance has rank < 2
};

/// k-NN PCA normals oriented toward `viewpoint`. Points with a degenerate
/// neighborhood get the unit direction toward the viewpoint and valid[i] = false.
NormalEstimate estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint);

/// Averages positions/normals/colors per occupied voxel. Output order follows
/// the first point that landed in each voxel, so it is deterministic.
PointCloud voxel_downsample(const PointCloud& cloud, double leaf);

}  // namespace manipflow
