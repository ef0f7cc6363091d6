#include "manipflow/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "manipflow/error.hpp"

namespace manipflow {

namespace {

// (squared distance, index) ordering used both for the max-heap and the final sort
bool closer(const std::pair<double, Index>& a, const std::pair<double, Index>& b) {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points, int leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max(1, leaf_size)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), Index{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, static_cast<int>(points_.size()), 0);
  }
}

int KdTree::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= leaf_size_) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  // split on the axis of largest extent
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Index a, Index b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::knn_recurse(int node_id, const Vec3& q, std::size_t k,
                         std::vector<std::pair<double, Index>>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const Index idx = order_[i];
      const std::pair<double, Index> cand{(points_[idx] - q).squaredNorm(), idx};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff < 0 ? node.left : node.right;
  const int far = diff < 0 ? node.right : node.left;
  knn_recurse(near, q, k, heap);
  // points equal to the split value can sit on either side, so use <=
  if (heap.size() < k || diff * diff <= heap.front().first) knn_recurse(far, q, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, int k) const {
  std::vector<Neighbor> out;
  if (points_.empty() || k <= 0) return out;
  std::vector<std::pair<double, Index>> heap;
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), points_.size());
  heap.reserve(kk + 1);
  knn_recurse(0, query, kk, heap);
  std::sort(heap.begin(), heap.end(), closer);
  out.reserve(heap.size());
  for (const auto& [d2, idx] : heap) out.push_back({idx, std::sqrt(d2)});
  return out;
}

Neighbor KdTree::nearest(const Vec3& query) const {
  const auto nn = knn(query, 1);
  if (nn.empty()) throw input_error("kd-tree: nearest query on empty tree");
  return nn.front();
}

void KdTree::radius_recurse(int node_id, const Vec3& q, double r2,
                            std::vector<std::pair<double, Index>>& out) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const Index idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 <= r2) out.emplace_back(d2, idx);
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff < 0 ? node.left : node.right;
  const int far = diff < 0 ? node.right : node.left;
  radius_recurse(near, q, r2, out);
  if (diff * diff <= r2) radius_recurse(far, q, r2, out);
}

std::vector<Neighbor> KdTree::radius(const Vec3& query, double r) const {
  std::vector<std::pair<double, Index>> hits;
  if (!points_.empty() && r >= 0) radius_recurse(0, query, r * r, hits);
  std::sort(hits.begin(), hits.end(), closer);
  std::vector<Neighbor> out;
  out.reserve(hits.size());
  for (const auto& [d2, idx] : hits) out.push_back({idx, std::sqrt(d2)});
  return out;
}

std::vector<Neighbor> knn_search(const PointCloud& cloud, const Vec3& query, int k) {
  if (cloud.empty()) throw input_error("knn_search: empty cloud");
  if (k < 1) throw input_error("knn_search: k must be >= 1");
  return KdTree(cloud.positions).knn(query, k);
}

}  // namespace manipflow
