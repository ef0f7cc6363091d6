#pragma once

#include <span>
#include <utility>
#include <vector>

#include "manipflow/point_cloud.hpp"

namespace manipflow {

struct Neighbor {
  Index index;
  double distance;
};

/// Exact 3D kd-tree with median splits. Immutable after construction; all
/// queries are const and thread-safe. The tree copies the points it indexes.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points, int leaf_size = 8);

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }

  /// Up to k nearest points, ascending by distance; ties broken by index.
  std::vector<Neighbor> knn(const Vec3& query, int k) const;
  Neighbor nearest(const Vec3& query) const;
  /// All points with distance <= radius, ascending by distance.
  std::vector<Neighbor> radius(const Vec3& query, double radius) const;

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // range into order_ for leaves
  };

  int build(int begin, int end, int depth);
  void knn_recurse(int node, const Vec3& q, std::size_t k, std::vector<std::pair<double, Index>>& heap) const;
  void radius_recurse(int node, const Vec3& q, double r2, std::vector<std::pair<double, Index>>& out) const;

  std::vector<Vec3> points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
  int leaf_size_ = 8;
};

/// Convenience wrapper: exact k-NN over a cloud. Throws input error on empty cloud.
std::vector<Neighbor> knn_search(const PointCloud& cloud, const Vec3& query, int k);

}  // namespace manipflow
