#include "manipflow/actor.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "manipflow/kdtree.hpp"

namespace manipflow {

namespace selectors {

ComponentSelector largest() {
  return [](std::span<const ComponentSummary> comps) {
    std::vector<std::size_t> out;
    std::size_t best = 0;
    for (const auto& c : comps) best = std::max(best, c.size);
    for (const auto& c : comps)
      if (c.size == best) out.push_back(c.component);
    return out;
  };
}

ComponentSelector closest_to(const Vec3& point) {
  return [point](std::span<const ComponentSummary> comps) {
    std::vector<std::size_t> out;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : comps) best = std::min(best, (c.centroid - point).norm());
    for (const auto& c : comps)
      if ((c.centroid - point).norm() == best) out.push_back(c.component);
    return out;
  };
}

ComponentSelector size_range(std::size_t min_size, std::size_t max_size) {
  return matching([=](const ComponentSummary& c) { return c.size >= min_size && c.size <= max_size; });
}

ComponentSelector matching(std::function<bool(const ComponentSummary&)> predicate) {
  return [predicate = std::move(predicate)](std::span<const ComponentSummary> comps) {
    std::vector<std::size_t> out;
    for (const auto& c : comps)
      if (predicate(c)) out.push_back(c.component);
    return out;
  };
}

}  // namespace selectors

std::vector<ComponentSummary> summarize_components(const PointCloud& model,
                                                   const std::vector<std::vector<Index>>& components) {
  std::vector<ComponentSummary> out;
  out.reserve(components.size());
  for (std::size_t k = 0; k < components.size(); ++k) {
    ComponentSummary s;
    s.component = k;
    s.size = components[k].size();
    s.bbox_min = Vec3::Constant(std::numeric_limits<double>::infinity());
    s.bbox_max = -s.bbox_min;
    for (Index i : components[k]) {
      const Vec3& p = model.positions[i];
      s.centroid += p;
      s.bbox_min = s.bbox_min.cwiseMin(p);
      s.bbox_max = s.bbox_max.cwiseMax(p);
    }
    if (s.size) s.centroid /= static_cast<double>(s.size);
    out.push_back(s);
  }
  return out;
}

std::vector<Label> segment_by_component(const PointCloud& model, double radius,
                                        const ComponentSelector& selector) {
  if (model.empty()) throw input_error("segment_by_component: empty model");
  const auto comps = connected_components(build_proximity_graph(model, radius));
  const auto summaries = summarize_components(model, comps);
  const auto chosen = selector(summaries);
  if (chosen.size() != 1) {
    std::ostringstream msg;
    msg << "actor selection matched " << chosen.size() << " of " << comps.size()
        << " components; candidates:";
    // list the matches, or every component when nothing matched
    for (const auto& s : summaries) {
      if (!chosen.empty() && std::find(chosen.begin(), chosen.end(), s.component) == chosen.end())
        continue;
      msg << " [#" << s.component << " size=" << s.size << " centroid=(" << s.centroid.x() << ","
          << s.centroid.y() << "," << s.centroid.z() << ")]";
    }
    throw Error(ErrorKind::Ambiguity, msg.str());
  }
  std::vector<Label> labels(model.size(), Label::Background);
  for (Index i : comps.at(chosen.front())) labels[i] = Label::Actor;
  return labels;
}

std::vector<Label> segment_by_seed(const PointCloud& model, Index seed_index, double radius) {
  if (seed_index < 0 || static_cast<std::size_t>(seed_index) >= model.size())
    throw input_error("segment_by_seed: seed index out of range");
  if (!(radius > 0)) throw input_error("segment_by_seed: radius must be positive");
  const KdTree tree(model.positions);
  std::vector<Label> labels(model.size(), Label::Background);
  std::vector<Index> frontier{seed_index};
  labels[seed_index] = Label::Actor;
  while (!frontier.empty()) {
    const Index v = frontier.back();
    frontier.pop_back();
    for (const auto& nb : tree.radius(model.positions[v], radius)) {
      if (labels[nb.index] == Label::Actor) continue;
      labels[nb.index] = Label::Actor;
      frontier.push_back(nb.index);
    }
  }
  return labels;
}

Index nearest_point(const PointCloud& model, const Vec3& p) {
  return knn_search(model, p, 1).front().index;
}

bool actor_is_fragile(const PointCloud& model, const std::vector<Label>& labels, double radius) {
  std::vector<Index> actor;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == Label::Actor) actor.push_back(static_cast<Index>(i));
  if (actor.size() < 2) return false;
  const auto comps = connected_components(build_proximity_graph(model.subset(actor), radius / 2));
  return comps.size() > 1;
}

std::string labels_to_json(const std::vector<Label>& labels) {
  nlohmann::json j;
  auto& idx = j["actor_indices"] = nlohmann::json::array();
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == Label::Actor) idx.push_back(i);
  j["num_points"] = labels.size();
  return j.dump() + "\n";
}

std::vector<Label> labels_from_json(const std::string& text, std::size_t num_points) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("num_points") && j["num_points"].get<std::size_t>() != num_points)
      throw input_error("labels json: point count differs from trajectories");
    std::vector<Label> labels(num_points, Label::Background);
    for (const auto& v : j.at("actor_indices")) {
      const auto i = v.get<std::size_t>();
      if (i >= num_points) throw input_error("labels json: actor index out of range");
      labels[i] = Label::Actor;
    }
    return labels;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("labels json: ") + e.what());
  }
}

}  // namespace manipflow
