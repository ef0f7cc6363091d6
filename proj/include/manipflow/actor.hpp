#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "manipflow/graph.hpp"
#include "manipflow/tracker.hpp"

namespace manipflow {

struct ComponentSummary {
  std::size_t component = 0;  // position in the connected_components list
  std::size_t size = 0;
  Vec3 centroid = Vec3::Zero();
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
};

/// Picks actor component(s) from the summaries; must return exactly one.
using ComponentSelector = std::function<std::vector<std::size_t>(std::span<const ComponentSummary>)>;

namespace selectors {
ComponentSelector largest();
ComponentSelector closest_to(const Vec3& point);
/// Components whose size lies in [min_size, max_size].
ComponentSelector size_range(std::size_t min_size, std::size_t max_size);
/// Components satisfying an arbitrary predicate.
ComponentSelector matching(std::function<bool(const ComponentSummary&)> predicate);
}  // namespace selectors

std::vector<ComponentSummary> summarize_components(const PointCloud& model,
                                                   const std::vector<std::vector<Index>>& components);

/// Marks the single selected proximity-graph component as actor. Throws
/// ErrorKind::Ambiguity listing the candidates when zero or several match.
std::vector<Label> segment_by_component(const PointCloud& model, double radius,
                                        const ComponentSelector& selector);

/// Region growing from seed_index with hops <= radius.
std::vector<Label> segment_by_seed(const PointCloud& model, Index seed_index, double radius);

/// Index of the model point closest to p.
Index nearest_point(const PointCloud& model, const Vec3& p);

/// True when the actor points fall apart into several components at radius / 2,
/// i.e. the labeling depends heavily on the chosen radius.
bool actor_is_fragile(const PointCloud& model, const std::vector<Label>& labels, double radius);

std::string labels_to_json(const std::vector<Label>& labels);
/// Needs the point count because the JSON only lists actor indices.
std::vector<Label> labels_from_json(const std::string& text, std::size_t num_points);

}  // namespace manipflow
