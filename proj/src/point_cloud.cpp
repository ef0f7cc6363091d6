#include "manipflow/point_cloud.hpp"

#include <cmath>
#include <map>
#include <tuple>

#include <Eigen/Eigenvalues>

#include "manipflow/error.hpp"
#include "manipflow/kdtree.hpp"

namespace manipflow {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Input: return "input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Dependency: return "dependency";
    case ErrorKind::NoOverlap: return "no-overlap";
    case ErrorKind::Ambiguity: return "ambiguity";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::NoConsensus: return "no-consensus";
    case ErrorKind::ObjectLost: return "object-lost";
  }
  return "unknown";
}

void PointCloud::validate() const {
  if (has_normals() && normals.size() != positions.size())
    throw input_error("point cloud: normals/positions length mismatch");
  if (has_colors() && colors.size() != positions.size())
    throw input_error("point cloud: colors/positions length mismatch");
  for (const auto& n : normals)
    if (std::abs(n.norm() - 1.0) > 1e-6) throw input_error("point cloud: non-unit normal");
}

PointCloud PointCloud::subset(const std::vector<Index>& indices) const {
  PointCloud out;
  out.positions.reserve(indices.size());
  for (Index i : indices) out.positions.push_back(positions.at(i));
  if (has_normals())
    for (Index i : indices) out.normals.push_back(normals.at(i));
  if (has_colors())
    for (Index i : indices) out.colors.push_back(colors.at(i));
  return out;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw input_error("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw input_error("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw input_error("intrinsics: principal point outside the image");
}

PointCloud back_project(const RGBDFrame& frame, double max_depth) {
  const auto& k = frame.intrinsics;
  k.validate();
  const std::size_t pixels = static_cast<std::size_t>(k.width) * static_cast<std::size_t>(k.height);
  if (frame.depth.size() != pixels)
    throw input_error("back_project: depth size does not match intrinsics");
  const bool colored = !frame.color.empty();
  if (colored && frame.color.size() != pixels)
    throw input_error("back_project: color size does not match intrinsics");

  PointCloud cloud;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * k.width + u;
      const double z = frame.depth[idx];
      if (!(z > 0) || (max_depth > 0 && z > max_depth)) continue;
      cloud.positions.emplace_back((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
      if (colored) cloud.colors.push_back(frame.color[idx]);
    }
  }
  return cloud;
}

Eigen::Vector3d project(const CameraIntrinsics& k, const Vec3& p) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.z()};
}

NormalEstimate estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint) {
  if (k < 3) throw input_error("estimate_normals: k must be >= 3");
  if (cloud.size() < static_cast<std::size_t>(k))
    throw input_error("estimate_normals: cloud has fewer than k points");

  NormalEstimate out{cloud, std::vector<bool>(cloud.size(), true)};
  out.cloud.normals.assign(cloud.size(), Vec3::UnitZ());
  const KdTree tree(cloud.positions);

#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(cloud.size()); ++i) {
    const auto nbrs = tree.knn(cloud.positions[i], k);
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += cloud.positions[nb.index];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = cloud.positions[nb.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const auto& ev = eig.eigenvalues();  // ascending
    Vec3 to_view = viewpoint - cloud.positions[i];
    if (to_view.norm() > 0) to_view.normalize();
    else to_view = Vec3::UnitZ();
    // rank < 2: the two largest eigenvalues do not both stand out
    if (ev[2] <= 0 || ev[1] <= 1e-12 * ev[2]) {
      out.valid[i] = false;
      out.cloud.normals[i] = to_view;
      continue;
    }
    Vec3 n = eig.eigenvectors().col(0).normalized();
    if (n.dot(to_view) < 0) n = -n;
    out.cloud.normals[i] = n;
  }
  return out;
}

PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
  if (!(leaf > 0)) return cloud;
  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  std::map<Key, std::size_t> slot;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    const Key key{static_cast<std::int64_t>(std::floor(p.x() / leaf)),
                  static_cast<std::int64_t>(std::floor(p.y() / leaf)),
                  static_cast<std::int64_t>(std::floor(p.z() / leaf))};
    auto [it, inserted] = slot.emplace(key, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
  }
  PointCloud out;
  for (const auto& group : members) {
    Vec3 p = Vec3::Zero(), n = Vec3::Zero(), c = Vec3::Zero();
    for (std::size_t i : group) {
      p += cloud.positions[i];
      if (cloud.has_normals()) n += cloud.normals[i];
      if (cloud.has_colors()) c += cloud.colors[i];
    }
    const double m = static_cast<double>(group.size());
    out.positions.push_back(p / m);
    if (cloud.has_normals()) {
      // opposing normals can cancel; fall back to the first member's normal
      out.normals.push_back(n.norm() > 1e-9 ? Vec3(n.normalized()) : cloud.normals[group.front()]);
    }
    if (cloud.has_colors()) out.colors.push_back(c / m);
  }
  return out;
}

}  // namespace manipflow
