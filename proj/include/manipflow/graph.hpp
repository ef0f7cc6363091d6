#pragma once

#include <vector>

#include "manipflow/point_cloud.hpp"

namespace manipflow {

/// Symmetric weighted graph without self loops. edge_weights[i][k] belongs to
/// the edge (i, adjacency[i][k]).
struct NeighborhoodGraph {
  std::vector<std::vector<Index>> adjacency;
  std::vector<std::vector<double>> edge_weights;

  std::size_t num_nodes() const noexcept { return adjacency.size(); }
  std::size_t num_directed_edges() const;
  bool is_symmetric() const;
};

/// Edge (i, j) iff 0 < |x_i - x_j| <= radius; weights are the distances.
NeighborhoodGraph build_proximity_graph(const PointCloud& cloud, double radius);

/// k-NN graph symmetrized by union; weights are the distances.
NeighborhoodGraph build_knn_graph(const PointCloud& cloud, int k);

/// Maximal connected node sets, each sorted ascending; the list is ordered by
/// smallest member.
std::vector<std::vector<Index>> connected_components(const NeighborhoodGraph& graph);

}  // namespace manipflow
