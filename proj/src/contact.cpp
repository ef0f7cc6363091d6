#include "manipflow/contact.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "json.hpp"

#include "manipflow/graph.hpp"
#include "manipflow/kdtree.hpp"

namespace manipflow {

void ContactParams::validate() const {
  if (!(contact_dist > 0)) throw config_error("contact: contact_dist must be > 0");
  if (min_duration < 1) throw config_error("contact: min_duration must be >= 1");
}

namespace {

struct Site {
  std::vector<Index> actor;       // sorted
  std::vector<Index> background;  // sorted
};

struct FrameContacts {
  double min_distance = std::numeric_limits<double>::infinity();
  std::vector<Site> sites;
};

std::vector<Vec3> gather(const PointCloud& state, const std::vector<Index>& idx) {
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(state.positions[i]);
  return out;
}

FrameContacts frame_contacts(const PointCloud& state, const std::vector<Index>& actor,
                             const std::vector<Index>& background, double contact_dist) {
  const bool actor_small = actor.size() <= background.size();
  const auto& small = actor_small ? actor : background;
  const auto& large = actor_small ? background : actor;
  const KdTree tree(gather(state, small));

  FrameContacts out;
  std::set<Index> act, bg;
  for (Index i : large) {
    const Vec3& p = state.positions[i];
    out.min_distance = std::min(out.min_distance, tree.nearest(p).distance);
    for (const auto& nb : tree.radius(p, contact_dist)) {
      const Index j = small[nb.index];
      (actor_small ? act : bg).insert(j);
      (actor_small ? bg : act).insert(i);
    }
  }
  if (bg.empty()) return out;

  // split participating background points into spatially separate sites
  const std::vector<Index> bg_list(bg.begin(), bg.end());
  const PointCloud bg_cloud{gather(state, bg_list), {}, {}};
  const auto comps = connected_components(build_proximity_graph(bg_cloud, 2 * contact_dist));
  const std::vector<Index> act_list(act.begin(), act.end());
  const KdTree act_tree(gather(state, act_list));
  for (const auto& comp : comps) {
    Site site;
    std::set<Index> site_actor;
    for (Index k : comp) {
      const Index b = bg_list[k];
      site.background.push_back(b);
      for (const auto& nb : act_tree.radius(state.positions[b], contact_dist))
        site_actor.insert(act_list[nb.index]);
    }
    std::sort(site.background.begin(), site.background.end());
    site.actor.assign(site_actor.begin(), site_actor.end());
    out.sites.push_back(std::move(site));
  }
  return out;
}

bool sites_touch(const PointCloud& state, const std::vector<Index>& a, const std::vector<Index>& b,
                 double radius) {
  const KdTree tree(gather(state, a));
  for (Index i : b)
    if (tree.nearest(state.positions[i]).distance <= radius) return true;
  return false;
}

struct Run {
  int start = 0;
  int last = 0;
  Site first_site;
  std::vector<Index> last_background;
};

}  // namespace

double min_cluster_distance(const LabeledTrajectorySet& traj, std::size_t frame) {
  const auto actor = traj.indices_with(Label::Actor);
  const auto background = traj.indices_with(Label::Background);
  if (actor.empty() || background.empty()) throw input_error("contacts: need both actor and background points");
  const bool actor_small = actor.size() <= background.size();
  const auto& small = actor_small ? actor : background;
  const auto& large = actor_small ? background : actor;
  const PointCloud& state = traj.trajectories.states.at(frame);
  const KdTree tree(gather(state, small));
  double best = std::numeric_limits<double>::infinity();
  for (Index i : large) best = std::min(best, tree.nearest(state.positions[i]).distance);
  return best;
}

std::vector<ContactEvent> detect_contacts(const LabeledTrajectorySet& traj, double contact_dist,
                                          int min_duration) {
  traj.validate();
  if (!(contact_dist > 0)) throw input_error("contacts: contact_dist must be > 0");
  if (min_duration < 1) throw input_error("contacts: min_duration must be >= 1");
  const auto actor = traj.indices_with(Label::Actor);
  const auto background = traj.indices_with(Label::Background);
  if (actor.empty() || background.empty())
    throw input_error("contacts: labeling must contain both actor and background points");

  const auto& states = traj.trajectories.states;
  const auto frames = static_cast<std::int64_t>(states.size());
  std::vector<FrameContacts> per_frame(states.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t t = 0; t < frames; ++t)
    per_frame[t] = frame_contacts(states[t], actor, background, contact_dist);

  std::vector<Run> finished, active;
  for (int t = 0; t < static_cast<int>(frames); ++t) {
    std::vector<Run> next;
    std::vector<bool> claimed(active.size(), false);
    for (auto& site : per_frame[t].sites) {
      int joined = -1;
      for (std::size_t r = 0; r < active.size(); ++r) {
        if (claimed[r]) continue;
        if (sites_touch(states[t], active[r].last_background, site.background, 2 * contact_dist)) {
          joined = static_cast<int>(r);
          break;
        }
      }
      if (joined >= 0) {
        claimed[joined] = true;
        Run run = active[joined];
        run.last = t;
        run.last_background = site.background;
        next.push_back(std::move(run));
      } else {
        next.push_back(Run{t, t, site, site.background});
      }
    }
    for (std::size_t r = 0; r < active.size(); ++r)
      if (!claimed[r]) finished.push_back(std::move(active[r]));
    active = std::move(next);
  }
  for (auto& r : active) finished.push_back(std::move(r));

  std::vector<ContactEvent> events;
  for (const auto& run : finished) {
    if (run.last - run.start + 1 < min_duration) continue;
    ContactEvent e;
    e.start_frame = run.start;
    e.end_frame = run.last;
    e.actor_points = run.first_site.actor;
    e.background_points = run.first_site.background;
    for (int t = run.start; t <= run.last; ++t) {
      Vec3 c = Vec3::Zero();
      for (Index i : e.background_points) c += states[t].positions[i];
      e.centroids.push_back(c / static_cast<double>(e.background_points.size()));
    }
    events.push_back(std::move(e));
  }
  std::stable_sort(events.begin(), events.end(), [](const ContactEvent& a, const ContactEvent& b) {
    return a.start_frame < b.start_frame;
  });
  return events;
}

std::string contacts_to_json(const std::vector<ContactEvent>& events) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : events) {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& p : e.centroids) c.push_back({p.x(), p.y(), p.z()});
    arr.push_back({{"start", e.start_frame},
                   {"end", e.end_frame},
                   {"actor_points", e.actor_points},
                   {"background_points", e.background_points},
                   {"centroids", c}});
  }
  return arr.dump() + "\n";
}

std::vector<ContactEvent> contacts_from_json(const std::string& text) {
  try {
    std::vector<ContactEvent> events;
    for (const auto& j : nlohmann::json::parse(text)) {
      ContactEvent e;
      e.start_frame = j.at("start").get<int>();
      e.end_frame = j.at("end").get<int>();
      e.actor_points = j.at("actor_points").get<std::vector<Index>>();
      e.background_points = j.at("background_points").get<std::vector<Index>>();
      for (const auto& c : j.at("centroids")) e.centroids.emplace_back(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
      if (e.end_frame < e.start_frame || static_cast<int>(e.centroids.size()) != e.duration())
        throw input_error("contacts json: inconsistent event");
      events.push_back(std::move(e));
    }
    return events;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("contacts json: ") + e.what());
  }
}

}  // namespace manipflow
