#include "manipflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Geometry>

#include "json.hpp"

#include "manipflow/kdtree.hpp"

namespace manipflow::synth {

namespace {

using Json = nlohmann::json;
constexpr double kDeg = std::numbers::pi / 180.0;

struct Surface {
  std::vector<Vec3> points, normals;
};

// Grid over origin + a u + b v, a, b in [0, 1], with `normal` on every sample.
void sample_rect(Surface& s, const Vec3& origin, const Vec3& u, const Vec3& v, double spacing,
                 const Vec3& normal, const std::function<bool(const Vec3&)>& skip = {}) {
  const int nu = std::max(1, static_cast<int>(std::round(u.norm() / spacing)));
  const int nv = std::max(1, static_cast<int>(std::round(v.norm() / spacing)));
  for (int a = 0; a <= nu; ++a)
    for (int b = 0; b <= nv; ++b) {
      const Vec3 p = origin + u * (double(a) / nu) + v * (double(b) / nv);
      if (skip && skip(p)) continue;
      s.points.push_back(p);
      s.normals.push_back(normal);
    }
}

enum Face : unsigned { kNegX = 1, kPosX = 2, kNegY = 4, kPosY = 8, kNegZ = 16, kPosZ = 32, kAll = 63 };

void sample_box(Surface& s, const Vec3& c, const Vec3& h, double spacing, unsigned faces) {
  const Vec3 ex(2 * h.x(), 0, 0), ey(0, 2 * h.y(), 0), ez(0, 0, 2 * h.z());
  const Vec3 lo = c - h;
  // edges are shared between faces; inset the second face of each pair by one step
  // is unnecessary because duplicates only add weight, but skip exact repeats anyway
  std::set<std::tuple<long, long, long>> seen;
  Surface tmp;
  if (faces & kNegX) sample_rect(tmp, lo, ey, ez, spacing, -Vec3::UnitX());
  if (faces & kPosX) sample_rect(tmp, lo + ex, ey, ez, spacing, Vec3::UnitX());
  if (faces & kNegY) sample_rect(tmp, lo, ex, ez, spacing, -Vec3::UnitY());
  if (faces & kPosY) sample_rect(tmp, lo + ey, ex, ez, spacing, Vec3::UnitY());
  if (faces & kNegZ) sample_rect(tmp, lo, ex, ey, spacing, -Vec3::UnitZ());
  if (faces & kPosZ) sample_rect(tmp, lo + ez, ex, ey, spacing, Vec3::UnitZ());
  for (std::size_t i = 0; i < tmp.points.size(); ++i) {
    const Vec3& p = tmp.points[i];
    const auto key = std::make_tuple(std::lround(p.x() * 1e6), std::lround(p.y() * 1e6), std::lround(p.z() * 1e6));
    if (!seen.insert(key).second) continue;
    s.points.push_back(p);
    s.normals.push_back(tmp.normals[i]);
  }
}

void sample_sphere(Surface& s, const Vec3& c, double r, double spacing) {
  const int n = std::max(12, static_cast<int>(std::round(4 * std::numbers::pi * r * r / (spacing * spacing))));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double rad = std::sqrt(1.0 - y * y);
    const double th = golden * i;
    const Vec3 d(std::cos(th) * rad, y, std::sin(th) * rad);
    s.points.push_back(c + r * d);
    s.normals.push_back(d);
  }
}

Body make_body(std::string name, const Surface& s, const Vec3& color, int frames) {
  Body b;
  b.name = std::move(name);
  b.points = s.points;
  b.normals = s.normals;
  b.colors.assign(s.points.size(), color);
  b.poses.assign(frames, RigidPose::identity());
  return b;
}

void append(Body& b, const Surface& s, const Vec3& color) {
  b.points.insert(b.points.end(), s.points.begin(), s.points.end());
  b.normals.insert(b.normals.end(), s.normals.begin(), s.normals.end());
  b.colors.insert(b.colors.end(), s.points.size(), color);
}

RigidPose translation(const Vec3& t) { return {Mat3::Identity(), t}; }

RigidPose rotation_about(const Vec3& axis, double angle, const Vec3& point) {
  const Mat3 r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  return {r, point - r * point};
}

const Vec3 kActorColor(0.85, 0.65, 0.55);
const Vec3 kHandleColor(0.15, 0.15, 0.15);

// Shared timeline: approach until contact_start, object moves for `move`
// frames, one hold frame, then the actor retreats along its approach direction.
struct Timeline {
  int contact_start, move, contact_end;

  static Timeline for_frames(int n) {
    Timeline t;
    t.contact_start = std::max(2, static_cast<int>(std::lround(0.25 * n)));
    t.move = std::max(3, static_cast<int>(std::lround(0.4 * n)));
    t.contact_end = t.contact_start + t.move + 1;
    if (t.contact_end + 2 >= n) throw config_error("scenario: too few frames for the scripted interaction");
    return t;
  }
  // smoothstep easing: hands speed up and slow down instead of jumping to full speed
  static double ease(double s) {
    s = std::clamp(s, 0.0, 1.0);
    return s * s * (3.0 - 2.0 * s);
  }
  double linear(int frame) const { return std::clamp(double(frame - contact_start) / move, 0.0, 1.0); }
  double progress(int frame) const { return ease(linear(frame)); }
};

void script_actor(Body& actor, const Body& object, const Timeline& tl, const Vec3& approach) {
  const int n = static_cast<int>(actor.poses.size());
  // actor points are built at their contact placement; shift to the start
  std::vector<RigidPose> at_contact(n);
  for (int t = 0; t < n; ++t) {
    if (t <= tl.contact_start) {
      at_contact[t] = translation(approach * (1.0 - Timeline::ease(double(t) / tl.contact_start)));
    } else if (t <= tl.contact_end) {
      at_contact[t] = object.poses[t] * object.poses[tl.contact_start].inverse();
    } else {
      at_contact[t] = translation(approach * Timeline::ease(double(t - tl.contact_end) / tl.contact_start)) *
                      at_contact[tl.contact_end];
    }
  }
  // re-express relative to frame 0 so poses[0] is the identity
  const RigidPose to_start = at_contact[0];
  for (auto& p : actor.points) p = to_start * p;
  for (int t = 0; t < n; ++t) actor.poses[t] = at_contact[t] * to_start.inverse();
  for (auto& nrm : actor.normals) nrm = to_start.rotation * nrm;
}

SyntheticScene drawer_scene(const ScenarioConfig& cfg) {
  const int n = cfg.num_frames;
  const double s = cfg.spacing;
  const Timeline tl = Timeline::for_frames(n);
  SyntheticScene scene;

  Surface cab;
  sample_rect(cab, {-0.3, -0.15, 1.2}, {0.6, 0, 0}, {0, 0.4, 0}, s, -Vec3::UnitZ(), [](const Vec3& p) {
    return p.x() > -0.215 && p.x() < 0.215 && p.y() > -0.04 && p.y() < 0.12;
  });
  sample_rect(cab, {-0.3, -0.15, 1.2 + s}, {0.6, 0, 0}, {0, 0, 0.3}, s, -Vec3::UnitY());
  scene.bodies.push_back(make_body("cabinet", cab, {0.55, 0.4, 0.25}, n));

  Surface panel, handle;
  sample_rect(panel, {-0.2, -0.025, 1.19}, {0.4, 0, 0}, {0, 0.13, 0}, s, -Vec3::UnitZ());
  sample_box(handle, {0, 0.04, 1.165}, {0.05, 0.01, 0.01}, 0.006, kAll & ~kPosZ);
  Body drawer = make_body("drawer", panel, {0.65, 0.5, 0.3}, n);
  append(drawer, handle, kHandleColor);
  for (int t = 0; t < n; ++t) drawer.poses[t] = translation({0, 0, -0.2 * tl.progress(t)});
  scene.bodies.push_back(drawer);

  Surface hand;
  sample_sphere(hand, {0, 0.04, 1.155 - 0.043}, 0.04, 0.009);
  Body actor = make_body("actor", hand, kActorColor, n);
  script_actor(actor, scene.bodies[1], tl, {0.06, -0.05, -0.16});
  scene.bodies.push_back(actor);

  scene.object_body = 1;
  scene.actor_body = 2;
  scene.scripted_contact = {tl.contact_start, tl.contact_end};
  return scene;
}

SyntheticScene door_scene(const ScenarioConfig& cfg) {
  const int n = cfg.num_frames;
  const double s = cfg.spacing;
  const Timeline tl = Timeline::for_frames(n);
  SyntheticScene scene;

  Surface wall;
  sample_rect(wall, {-0.45, -0.35, 1.4}, {0.9, 0, 0}, {0, 0.7, 0}, s, -Vec3::UnitZ(), [](const Vec3& p) {
    return p.x() > -0.24 && p.x() < 0.23 && p.y() > -0.30 && p.y() < 0.30;
  });
  scene.bodies.push_back(make_body("wall", wall, {0.8, 0.8, 0.75}, n));

  Surface panel, handle;
  sample_rect(panel, {-0.19, -0.28, 1.385}, {0.39, 0, 0}, {0, 0.56, 0}, s, -Vec3::UnitZ());
  sample_box(handle, {0.15, 0, 1.373}, {0.01, 0.05, 0.01}, 0.006, kAll & ~kPosZ);
  Body door = make_body("door", panel, {0.5, 0.35, 0.2}, n);
  append(door, handle, kHandleColor);
  const Hinge hinge{Vec3::UnitY(), {-0.2, 0, 1.4}};
  for (int t = 0; t < n; ++t) door.poses[t] = rotation_about(hinge.axis, 40 * kDeg * tl.progress(t), hinge.point);
  scene.bodies.push_back(door);

  Surface hand;
  sample_sphere(hand, {0.15, 0, 1.363 - 0.043}, 0.04, 0.009);
  Body actor = make_body("actor", hand, kActorColor, n);
  script_actor(actor, scene.bodies[1], tl, {0.08, -0.05, -0.16});
  scene.bodies.push_back(actor);

  scene.object_body = 1;
  scene.actor_body = 2;
  scene.scripted_contact = {tl.contact_start, tl.contact_end};
  scene.hinge = hinge;
  return scene;
}

SyntheticScene pitcher_scene(const ScenarioConfig& cfg) {
  const int n = cfg.num_frames;
  const double s = cfg.spacing;
  const Timeline tl = Timeline::for_frames(n);
  SyntheticScene scene;

  Surface table;
  sample_rect(table, {-0.35, 0.2, 0.95}, {0.7, 0, 0}, {0, 0, 0.5}, s, -Vec3::UnitY());
  scene.bodies.push_back(make_body("table", table, {0.6, 0.6, 0.6}, n));

  // the lowest 2.5 cm of the pitcher, where it meets the table, is left
  // unobserved (as the grazing band next to a support usually is)
  Surface jug, handle;
  const Vec3 center(0, 0.12, 1.2);
  sample_box(jug, center, {0.05, 0.08, 0.05}, 0.8 * s, kAll & ~kPosY);
  Surface observed;
  for (std::size_t i = 0; i < jug.points.size(); ++i)
    if (jug.points[i].y() <= 0.175) {
      observed.points.push_back(jug.points[i]);
      observed.normals.push_back(jug.normals[i]);
    }
  jug = std::move(observed);
  sample_box(handle, {0.07, 0.10, 1.2}, {0.01, 0.04, 0.01}, 0.006, kAll & ~kNegX);
  Body pitcher = make_body("pitcher", jug, {0.2, 0.4, 0.8}, n);
  append(pitcher, handle, kHandleColor);
  const double lift = 0.10;
  for (int t = 0; t < n; ++t) {
    // lift during the first half of the move, then tilt; each phase eased on its own
    const double p = tl.linear(t);
    const RigidPose up = translation({0, -lift * Timeline::ease(2 * p), 0});
    const Vec3 lifted_center = center - Vec3(0, lift, 0);
    const RigidPose tilt = rotation_about(Vec3::UnitZ(), -60 * kDeg * Timeline::ease(2 * p - 1), lifted_center);
    pitcher.poses[t] = tilt * up;
  }
  scene.bodies.push_back(pitcher);

  Surface hand;
  sample_sphere(hand, {0.08 + 0.043, 0.10, 1.2}, 0.04, 0.009);
  Body actor = make_body("actor", hand, kActorColor, n);
  script_actor(actor, scene.bodies[1], tl, {0.16, -0.08, -0.05});
  scene.bodies.push_back(actor);

  scene.object_body = 1;
  scene.actor_body = 2;
  scene.scripted_contact = {tl.contact_start, tl.contact_end};
  return scene;
}

SyntheticScene two_box_scene(const ScenarioConfig& cfg) {
  const int n = cfg.num_frames;
  SyntheticScene scene;
  Surface a, b;
  sample_box(a, {-0.12, 0, 1.2}, {0.08, 0.08, 0.08}, cfg.spacing, kAll);
  sample_box(b, {0.12, 0, 1.2}, {0.08, 0.08, 0.08}, cfg.spacing, kAll);
  scene.bodies.push_back(make_body("box_a", a, {0.7, 0.3, 0.3}, n));
  Body moving = make_body("box_b", b, {0.3, 0.7, 0.3}, n);
  for (int t = 0; t < n; ++t) {
    const double p = n > 1 ? double(t) / (n - 1) : 0.0;
    moving.poses[t] = translation(Vec3(0.02, -0.01, -0.03) * p) *
                      rotation_about(Vec3::UnitY(), 5 * kDeg * p, {0.12, 0, 1.2});
  }
  scene.bodies.push_back(moving);
  scene.object_body = 1;
  return scene;
}

SyntheticScene static_scene(const ScenarioConfig& cfg) {
  SyntheticScene scene;
  Surface box;
  sample_box(box, {0, 0, 1.2}, {0.1, 0.06, 0.08}, cfg.spacing, kAll);
  scene.bodies.push_back(make_body("box", box, {0.5, 0.5, 0.5}, cfg.num_frames));
  return scene;
}

Json pose_to_json(const RigidPose& p) {
  std::vector<double> r(9), t(3);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) r[3 * a + b] = p.rotation(a, b);
    t[a] = p.translation[a];
  }
  return {{"R", r}, {"t", t}};
}

RigidPose pose_from_json(const Json& j) {
  const auto r = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  RigidPose p;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) p.rotation(a, b) = r.at(3 * a + b);
    p.translation[a] = t.at(a);
  }
  return p;
}

Json vecs_to_json(const std::vector<Vec3>& v) {
  Json out = Json::array();
  for (const auto& p : v) out.push_back({p.x(), p.y(), p.z()});
  return out;
}

std::vector<Vec3> vecs_from_json(const Json& j) {
  std::vector<Vec3> out;
  for (const auto& p : j) out.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
  return out;
}

double min_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  const KdTree tree(b);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : a) best = std::min(best, tree.nearest(p).distance);
  return best;
}

}  // namespace

// Frames whose noise-free actor/background distance is within contact_dist.
std::optional<FrameWindow> proximity_window(const SyntheticScene& scene) {
  if (scene.actor_body < 0) return std::nullopt;
  int first = -1, last = -1;
  for (std::size_t t = 0; t < scene.num_frames(); ++t) {
    std::vector<Vec3> actor, others;
    for (std::size_t b = 0; b < scene.bodies.size(); ++b) {
      auto& dst = static_cast<int>(b) == scene.actor_body ? actor : others;
      for (const Vec3& p : scene.bodies[b].points) dst.push_back(scene.bodies[b].poses[t] * p);
    }
    if (!others.empty() && min_distance(actor, others) <= scene.contact_dist) {
      if (first < 0) first = static_cast<int>(t);
      last = static_cast<int>(t);
    }
  }
  if (first < 0) return std::nullopt;
  return FrameWindow{first, last};
}

void SyntheticScene::validate() const {
  if (bodies.empty()) throw input_error("synthetic scene: needs at least one body");
  if (num_frames() < 2) throw input_error("synthetic scene: needs at least 2 frames");
  if (!(noise_sigma >= 0)) throw input_error("synthetic scene: noise_sigma must be >= 0");
  for (const auto& b : bodies) {
    if (b.poses.size() != num_frames()) throw input_error("synthetic scene: pose count differs between bodies");
    if (b.normals.size() != b.points.size() || b.colors.size() != b.points.size())
      throw input_error("synthetic scene: body attribute sizes differ");
  }
  if (actor_body >= static_cast<int>(bodies.size()) || object_body >= static_cast<int>(bodies.size()))
    throw input_error("synthetic scene: role index out of range");
}

SyntheticOutput generate(const SyntheticScene& scene) {
  scene.validate();
  SyntheticOutput out;
  out.truth.scene = scene;
  for (std::size_t b = 0; b < scene.bodies.size(); ++b)
    out.truth.point_body.insert(out.truth.point_body.end(), scene.bodies[b].points.size(), static_cast<int>(b));

  std::mt19937_64 rng(scene.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t frames = scene.num_frames();
  for (std::size_t t = 0; t < frames; ++t) {
    PointCloud cloud;
    for (std::size_t b = 0; b < scene.bodies.size(); ++b) {
      const Body& body = scene.bodies[b];
      const RigidPose& pose = body.poses[t];
      for (std::size_t i = 0; i < body.points.size(); ++i) {
        const Vec3 p = pose * body.points[i];
        Vec3 jitter = Vec3::Zero();
        if (scene.noise_sigma > 0) jitter = scene.noise_sigma * Vec3(noise(rng), noise(rng), noise(rng));
        cloud.positions.push_back(p + jitter);
        cloud.normals.push_back((pose.rotation * body.normals[i]).normalized());
        cloud.colors.push_back(body.colors[i]);
      }
    }
    out.frames.push_back(std::move(cloud));
  }

  if (scene.actor_body >= 0) {
    const auto& actor0 = scene.bodies[scene.actor_body].points;
    for (const auto& p : actor0) out.truth.actor_seed += p;
    out.truth.actor_seed /= static_cast<double>(actor0.size());

    out.truth.contact = proximity_window(scene);
  }
  return out;
}

SyntheticScene make_scenario(const ScenarioConfig& cfg) {
  if (cfg.num_frames < 2) throw config_error("scenario: num_frames must be >= 2");
  if (!(cfg.spacing > 0)) throw config_error("scenario: spacing must be > 0");
  if (!(cfg.noise_sigma >= 0)) throw config_error("scenario: noise_sigma must be >= 0");
  SyntheticScene scene;
  if (cfg.scenario == "drawer") scene = drawer_scene(cfg);
  else if (cfg.scenario == "door") scene = door_scene(cfg);
  else if (cfg.scenario == "pitcher") scene = pitcher_scene(cfg);
  else if (cfg.scenario == "two_box") scene = two_box_scene(cfg);
  else if (cfg.scenario == "static") scene = static_scene(cfg);
  else throw config_error("scenario: unknown scenario '" + cfg.scenario + "'");
  scene.name = cfg.scenario;
  scene.noise_sigma = cfg.noise_sigma;
  scene.seed = cfg.seed;
  scene.contact_dist = cfg.contact_dist;
  // the eased approach reaches contact_dist a frame or so before the touch
  if (auto w = proximity_window(scene)) scene.scripted_contact = *w;
  return scene;
}

ScenarioConfig scenario_from_json(const std::string& text) {
  static const std::set<std::string> known{"scenario", "num_frames", "noise_sigma", "seed", "spacing", "contact_dist"};
  try {
    const auto j = Json::parse(text);
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw config_error("scenario: unknown key '" + k + "'");
    ScenarioConfig c;
    c.scenario = j.value("scenario", c.scenario);
    c.num_frames = j.value("num_frames", c.num_frames);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.seed = j.value("seed", c.seed);
    c.spacing = j.value("spacing", c.spacing);
    c.contact_dist = j.value("contact_dist", c.contact_dist);
    return c;
  } catch (const Json::exception& e) {
    throw config_error(std::string("scenario json: ") + e.what());
  }
}

std::string scenario_to_json(const ScenarioConfig& c) {
  const Json j = {{"scenario", c.scenario}, {"num_frames", c.num_frames}, {"noise_sigma", c.noise_sigma},
                  {"seed", c.seed}, {"spacing", c.spacing}, {"contact_dist", c.contact_dist}};
  return j.dump(2) + "\n";
}

std::string truth_to_json(const GroundTruth& truth) {
  const auto& sc = truth.scene;
  Json bodies = Json::array();
  for (const auto& b : sc.bodies) {
    Json poses = Json::array();
    for (const auto& p : b.poses) poses.push_back(pose_to_json(p));
    bodies.push_back({{"name", b.name},
                      {"points", vecs_to_json(b.points)},
                      {"normals", vecs_to_json(b.normals)},
                      {"colors", vecs_to_json(b.colors)},
                      {"poses", poses}});
  }
  Json j = {{"name", sc.name},
            {"bodies", bodies},
            {"actor_body", sc.actor_body},
            {"object_body", sc.object_body},
            {"scripted_contact", {sc.scripted_contact.first, sc.scripted_contact.last}},
            {"noise_sigma", sc.noise_sigma},
            {"seed", sc.seed},
            {"contact_dist", sc.contact_dist},
            {"actor_seed", {truth.actor_seed.x(), truth.actor_seed.y(), truth.actor_seed.z()}}};
  j["contact"] = truth.contact ? Json{truth.contact->first, truth.contact->last} : Json(nullptr);
  if (sc.hinge)
    j["hinge"] = {{"axis", {sc.hinge->axis.x(), sc.hinge->axis.y(), sc.hinge->axis.z()}},
                  {"point", {sc.hinge->point.x(), sc.hinge->point.y(), sc.hinge->point.z()}}};
  return j.dump() + "\n";
}

GroundTruth truth_from_json(const std::string& text) {
  try {
    const auto j = Json::parse(text);
    GroundTruth truth;
    auto& sc = truth.scene;
    sc.name = j.value("name", "");
    for (const auto& jb : j.at("bodies")) {
      Body b;
      b.name = jb.at("name").get<std::string>();
      b.points = vecs_from_json(jb.at("points"));
      b.normals = vecs_from_json(jb.at("normals"));
      b.colors = vecs_from_json(jb.at("colors"));
      for (const auto& p : jb.at("poses")) b.poses.push_back(pose_from_json(p));
      sc.bodies.push_back(std::move(b));
    }
    sc.actor_body = j.at("actor_body").get<int>();
    sc.object_body = j.at("object_body").get<int>();
    sc.scripted_contact = {j.at("scripted_contact")[0].get<int>(), j.at("scripted_contact")[1].get<int>()};
    sc.noise_sigma = j.at("noise_sigma").get<double>();
    sc.seed = j.at("seed").get<std::uint64_t>();
    sc.contact_dist = j.at("contact_dist").get<double>();
    const auto& s = j.at("actor_seed");
    truth.actor_seed = Vec3(s[0].get<double>(), s[1].get<double>(), s[2].get<double>());
    if (!j.at("contact").is_null()) truth.contact = FrameWindow{j["contact"][0].get<int>(), j["contact"][1].get<int>()};
    if (j.contains("hinge")) {
      const auto& h = j["hinge"];
      sc.hinge = Hinge{Vec3(h["axis"][0].get<double>(), h["axis"][1].get<double>(), h["axis"][2].get<double>()),
                       Vec3(h["point"][0].get<double>(), h["point"][1].get<double>(), h["point"][2].get<double>())};
    }
    for (const auto& b : sc.bodies) truth.point_body.insert(truth.point_body.end(), b.points.size(), static_cast<int>(&b - sc.bodies.data()));
    sc.validate();
    return truth;
  } catch (const Json::exception& e) {
    throw input_error(std::string("truth json: ") + e.what());
  }
}

double interval_iou(FrameWindow a, FrameWindow b) {
  const int inter = std::min(a.last, b.last) - std::max(a.first, b.first) + 1;
  const int uni = std::max(a.last, b.last) - std::min(a.first, b.first) + 1;
  if (inter <= 0) return 0.0;
  return double(inter) / double(uni);
}

double set_iou(const std::vector<Index>& a, const std::vector<Index>& b) {
  std::vector<Index> sa(a), sb(b), inter, uni;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
  return uni.empty() ? 1.0 : double(inter.size()) / double(uni.size());
}

Vec3 rotation_axis(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  if (std::abs(aa.angle()) < 1e-12) return Vec3::UnitZ();
  return aa.axis().normalized();
}

std::vector<int> model_point_bodies(const GroundTruth& truth, const PointCloud& model) {
  std::vector<Vec3> clean;
  std::vector<int> body;
  for (std::size_t b = 0; b < truth.scene.bodies.size(); ++b)
    for (const auto& p : truth.scene.bodies[b].points) {
      clean.push_back(truth.scene.bodies[b].poses.front() * p);
      body.push_back(static_cast<int>(b));
    }
  const KdTree tree(clean);
  std::vector<int> out;
  out.reserve(model.size());
  for (const auto& p : model.positions) out.push_back(body[tree.nearest(p).index]);
  return out;
}

Metrics score(const RunOutputs& result, const GroundTruth& truth) {
  const auto& sc = truth.scene;
  const auto& traj = result.trajectories.trajectories;
  result.trajectories.validate();
  if (traj.num_frames() != sc.num_frames())
    throw input_error("score: trajectory frame count differs from ground truth");
  if (result.objects.size() > result.contacts.size())
    throw input_error("score: more object results than contact events");

  Metrics m;
  const auto bodies = model_point_bodies(truth, traj.states.front());

  // trajectories: each model point should follow its body's motion
  double sq = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < traj.num_frames(); ++t)
    for (std::size_t i = 0; i < traj.num_points(); ++i) {
      const auto& poses = sc.bodies[bodies[i]].poses;
      const Vec3 expected = poses[t] * (poses[0].inverse() * traj.position(0, static_cast<Index>(i)));
      sq += (traj.position(t, static_cast<Index>(i)) - expected).squaredNorm();
      ++count;
    }
  m.trajectory_rmse = count ? std::sqrt(sq / double(count)) : 0.0;

  if (sc.actor_body >= 0) {
    std::size_t agree = 0;
    for (std::size_t i = 0; i < bodies.size(); ++i)
      agree += ((bodies[i] == sc.actor_body) == (result.trajectories.labels[i] == Label::Actor));
    m.label_accuracy = bodies.empty() ? 1.0 : double(agree) / double(bodies.size());
  }

  if (truth.contact) {
    for (std::size_t k = 0; k < result.contacts.size(); ++k) {
      const double iou = interval_iou({result.contacts[k].start_frame, result.contacts[k].end_frame}, *truth.contact);
      if (iou > m.contact_iou) {
        m.contact_iou = iou;
        m.matched_event = static_cast<int>(k);
      }
    }
  }

  if (m.matched_event >= 0 && m.matched_event < static_cast<int>(result.objects.size()) && sc.object_body >= 0) {
    const auto& obj = result.objects[m.matched_event];
    std::vector<Index> truth_segment;
    for (std::size_t i = 0; i < bodies.size(); ++i)
      if (bodies[i] == sc.object_body) truth_segment.push_back(static_cast<Index>(i));
    m.segment_iou = set_iou(obj.segment, truth_segment);

    const auto& poses = sc.bodies[sc.object_body].poses;
    if (!obj.poses.empty()) {
      const int start = obj.poses.front().frame;
      // translation is compared in an object-centered frame (origin at the
      // object's centroid at the window start), so it does not absorb the
      // lever arm between the camera origin and the object
      Vec3 center = Vec3::Zero();
      for (const auto& p : sc.bodies[sc.object_body].points) center += poses.at(start) * p;
      center /= static_cast<double>(sc.bodies[sc.object_body].points.size());
      for (const auto& fp : obj.poses) {
        const RigidPose expected = poses.at(fp.frame) * poses.at(start).inverse();
        const double rot = rotation_angle(expected.rotation, fp.pose.rotation) / kDeg;
        const double tra = (expected * center - fp.pose * center).norm();
        m.rotation_error_deg.push_back(rot);
        m.translation_error_m.push_back(tra);
        m.max_rotation_error_deg = std::max(m.max_rotation_error_deg, rot);
        m.max_translation_error_m = std::max(m.max_translation_error_m, tra);
      }
      if (sc.hinge) {
        const Mat3& r = obj.poses.back().pose.rotation;
        if (rotation_angle(Mat3::Identity(), r) > 1 * kDeg) {
          const double c = std::clamp(std::abs(rotation_axis(r).dot(sc.hinge->axis.normalized())), 0.0, 1.0);
          m.axis_error_deg = std::atan2(std::sqrt(1 - c * c), c) / kDeg;
        }
      }
    }
  }
  return m;
}

RunOutputs truth_as_outputs(const GroundTruth& truth) {
  const auto& sc = truth.scene;
  RunOutputs out;
  auto& states = out.trajectories.trajectories.states;
  for (std::size_t t = 0; t < sc.num_frames(); ++t) {
    PointCloud cloud;
    for (const auto& b : sc.bodies)
      for (const auto& p : b.points) cloud.positions.push_back(b.poses[t] * p);
    states.push_back(std::move(cloud));
  }
  for (int b : truth.point_body) out.trajectories.labels.push_back(b == sc.actor_body ? Label::Actor : Label::Background);

  if (truth.contact) {
    ContactEvent e;
    e.start_frame = truth.contact->first;
    e.end_frame = truth.contact->last;
    out.contacts.push_back(e);
    if (sc.object_body >= 0) {
      ObjectResult obj;
      for (std::size_t i = 0; i < truth.point_body.size(); ++i)
        if (truth.point_body[i] == sc.object_body) obj.segment.push_back(static_cast<Index>(i));
      obj.initial_cluster = obj.segment;
      const auto& poses = sc.bodies[sc.object_body].poses;
      for (int t = e.start_frame; t <= e.end_frame; ++t)
        obj.poses.push_back({t, poses[t] * poses[e.start_frame].inverse()});
      out.objects.push_back(std::move(obj));
    }
  }
  return out;
}

std::string metrics_to_json(const Metrics& m) {
  Json j = {{"contact_iou", m.contact_iou},
            {"segment_iou", m.segment_iou},
            {"matched_event", m.matched_event},
            {"rotation_error_deg", m.rotation_error_deg},
            {"translation_error_m", m.translation_error_m},
            {"max_rotation_error_deg", m.max_rotation_error_deg},
            {"max_translation_error_m", m.max_translation_error_m},
            {"trajectory_rmse", m.trajectory_rmse},
            {"label_accuracy", m.label_accuracy}};
  j["axis_error_deg"] = m.axis_error_deg ? Json(*m.axis_error_deg) : Json(nullptr);
  return j.dump(2) + "\n";
}

}  // namespace manipflow::synth
