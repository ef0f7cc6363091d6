#include "manipflow/graph.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "manipflow/error.hpp"
#include "manipflow/kdtree.hpp"

namespace manipflow {

std::size_t NeighborhoodGraph::num_directed_edges() const {
  std::size_t n = 0;
  for (const auto& a : adjacency) n += a.size();
  return n;
}

bool NeighborhoodGraph::is_symmetric() const {
  std::set<std::pair<Index, Index>> edges;
  for (std::size_t i = 0; i < adjacency.size(); ++i)
    for (Index j : adjacency[i]) {
      if (j == static_cast<Index>(i)) return false;
      edges.emplace(static_cast<Index>(i), j);
    }
  for (const auto& [i, j] : edges)
    if (!edges.count({j, i})) return false;
  return true;
}

NeighborhoodGraph build_proximity_graph(const PointCloud& cloud, double radius) {
  if (!(radius > 0)) throw input_error("proximity graph: radius must be positive");
  NeighborhoodGraph g;
  g.adjacency.resize(cloud.size());
  g.edge_weights.resize(cloud.size());
  if (cloud.empty()) return g;
  const KdTree tree(cloud.positions);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(cloud.size()); ++i) {
    for (const auto& nb : tree.radius(cloud.positions[i], radius)) {
      if (nb.index == i || !(nb.distance > 0)) continue;
      g.adjacency[i].push_back(nb.index);
      g.edge_weights[i].push_back(nb.distance);
    }
  }
  return g;
}

NeighborhoodGraph build_knn_graph(const PointCloud& cloud, int k) {
  const std::size_t n = cloud.size();
  std::vector<std::set<Index>> nbrs(n);
  if (n > 1 && k > 0) {
    const KdTree tree(cloud.positions);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& nb : tree.knn(cloud.positions[i], k + 1)) {
        if (nb.index == static_cast<Index>(i)) continue;
        nbrs[i].insert(nb.index);
        nbrs[nb.index].insert(static_cast<Index>(i));
      }
    }
  }
  NeighborhoodGraph g;
  g.adjacency.resize(n);
  g.edge_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (Index j : nbrs[i]) {
      g.adjacency[i].push_back(j);
      g.edge_weights[i].push_back((cloud.positions[i] - cloud.positions[j]).norm());
    }
  }
  return g;
}

std::vector<std::vector<Index>> connected_components(const NeighborhoodGraph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<Index> label(n, -1);
  std::vector<std::vector<Index>> comps;
  std::vector<Index> stack;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (label[seed] >= 0) continue;
    const Index id = static_cast<Index>(comps.size());
    comps.emplace_back();
    stack.assign(1, static_cast<Index>(seed));
    label[seed] = id;
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      comps.back().push_back(v);
      for (Index w : graph.adjacency[v]) {
        if (label[w] < 0) {
          label[w] = id;
          stack.push_back(w);
        }
      }
    }
    std::sort(comps.back().begin(), comps.back().end());
  }
  return comps;
}

}  // namespace manipflow
