#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "support.hpp"

#include "manipflow/object.hpp"

using namespace manipflow;
using namespace testing;

namespace {

std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n, double extent = 1.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

std::vector<Vec3> moved_by(const RigidPose& pose, const std::vector<Vec3>& pts) {
  std::vector<Vec3> out;
  for (const Vec3& p : pts) out.push_back(pose * p);
  return out;
}

double fit_residual(const RigidPose& pose, const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  double r = 0;
  for (std::size_t i = 0; i < src.size(); ++i) r += (pose * src[i] - dst[i]).squaredNorm();
  return r;
}

std::vector<Index> all_indices(std::size_t n) {
  std::vector<Index> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

/// Fraction of points whose cluster agrees with the truth body, up to swapping.
double agreement(const Bipartition& parts, const std::vector<Index>& candidates, const std::vector<int>& body) {
  std::size_t same = 0;
  for (Index k : parts.first) same += body[candidates[k]] == 0;
  for (Index k : parts.second) same += body[candidates[k]] == 1;
  const double n = static_cast<double>(candidates.size());
  return std::max(same / n, 1.0 - same / n);
}

ContactEvent event_at(const LabeledTrajectorySet& traj, int first, int last, const Vec3& centroid) {
  ContactEvent e;
  e.start_frame = first;
  e.end_frame = last;
  e.actor_points = {0};
  e.background_points = {0};
  for (int t = first; t <= last; ++t) e.centroids.push_back(centroid);
  (void)traj;
  return e;
}

}  // namespace

TEST_CASE("trajectory similarity") {
  TrajectorySet traj;
  for (int t = 0; t < 4; ++t) {
    PointCloud s;
    s.positions = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2 + 0.05 * (t == 2), 0, 0), Vec3(0, 0, 5)};
    traj.states.push_back(s);
  }
  std::vector<Index> cand = {0, 1, 2, 3};
  auto s = trajectory_similarity(traj, cand, {0, 3}, 0.05);
  CHECK(s.matrix(0, 1) == 1.0);  // static pair
  CHECK(s.matrix(0, 2) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(std::abs(s.matrix(0, 2) - 0.6065) < 1e-4);
  for (int i = 0; i < 4; ++i) {
    CHECK(s.matrix(i, i) == 1.0);
    for (int j = 0; j < 4; ++j) {
      CHECK(s.matrix(i, j) == s.matrix(j, i));
      CHECK(s.matrix(i, j) > 0.0);
      CHECK(s.matrix(i, j) <= 1.0);
    }
  }
  // outside the window the bump is invisible
  CHECK(trajectory_similarity(traj, cand, {0, 1}, 0.05).matrix(0, 2) == 1.0);
}

TEST_CASE("rigid co-motion gives similarity exactly one") {
  auto scene = two_body_trajectories(6, 0.0, 1);
  std::vector<Index> moving;
  for (std::size_t i = 0; i < scene.body.size(); ++i)
    if (scene.body[i] == 1) moving.push_back(static_cast<Index>(i));
  moving.resize(40);
  auto s = trajectory_similarity(scene.traj.trajectories, moving, {0, 5}, 0.01);
  CHECK(s.matrix.minCoeff() > 1.0 - 1e-12);
}

TEST_CASE("spectral clustering recovers ideal blocks") {
  const int n = 30;
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n, n, 1e-6);
  std::vector<int> block(n);
  std::mt19937_64 rng(2);
  for (int i = 0; i < n; ++i) block[i] = static_cast<int>(rng() % 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (block[i] == block[j]) m(i, j) = 1.0;
  TrajectorySimilarity s{m, 0.01};
  auto parts = spectral_cluster_2(s, 42);
  std::vector<int> label(n, -1);
  for (Index k : parts.first) label[k] = 0;
  for (Index k : parts.second) label[k] = 1;
  const bool same = label[0] == block[0];
  for (int i = 0; i < n; ++i) CHECK((label[i] == block[i]) == same);
}

TEST_CASE("spectral clustering output is a partition and deterministic") {
  TrajectorySimilarity ones{Eigen::MatrixXd::Ones(12, 12), 0.01};
  auto a = spectral_cluster_2(ones, 7);
  auto b = spectral_cluster_2(ones, 7);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  std::vector<Index> all = a.first;
  all.insert(all.end(), a.second.begin(), a.second.end());
  std::sort(all.begin(), all.end());
  CHECK(all == all_indices(12));

  // an isolated row goes to its own side
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(6, 6);
  m.row(5).setZero();
  m.col(5).setZero();
  m(5, 5) = 0;
  auto iso = spectral_cluster_2({m, 0.01}, 1);
  CHECK(iso.first == std::vector<Index>{0, 1, 2, 3, 4});
  CHECK(iso.second == std::vector<Index>{5});
}

TEST_CASE("two-body trajectories cluster by body") {
  auto scene = two_body_trajectories(10, 0.002, 3);
  auto cand = all_indices(scene.body.size());
  auto s = trajectory_similarity(scene.traj.trajectories, cand, {0, 9}, 0.01);
  auto parts = spectral_cluster_2(s, 42);
  CHECK(agreement(parts, cand, scene.body) >= 0.95);
}

TEST_CASE("k-means separates obvious groups") {
  Eigen::MatrixXd rows(8, 2);
  rows << 0, 0, 0.1, 0, 0, 0.1, 0.1, 0.1, 5, 5, 5.1, 5, 5, 5.1, 5.1, 5.1;
  auto labels = kmeans(rows, 2, 3, 5);
  for (int i = 1; i < 4; ++i) CHECK(labels[i] == labels[0]);
  for (int i = 5; i < 8; ++i) CHECK(labels[i] == labels[4]);
  CHECK(labels[0] != labels[4]);
}

TEST_CASE("pick_moving_cluster") {
  auto scene = two_body_trajectories(5, 0.0, 1);
  std::vector<Index> still, moving;
  for (std::size_t i = 0; i < scene.body.size(); ++i)
    (scene.body[i] ? moving : still).push_back(static_cast<Index>(i));
  const auto& tr = scene.traj.trajectories;
  CHECK(pick_moving_cluster(tr, still, moving, {0, 4}, Vec3::Zero()) == moving);
  CHECK(pick_moving_cluster(tr, moving, still, {0, 4}, Vec3::Zero()) == moving);
  CHECK(mean_path_length(tr, still, {0, 4}) == 0.0);

  // both static: the cluster nearest the contact centroid wins
  TrajectorySet frozen;
  frozen.states.assign(3, tr.states[0]);
  CHECK(pick_moving_cluster(frozen, still, moving, {0, 2}, Vec3(-0.1, 0, 1.0)) == still);
  CHECK(pick_moving_cluster(frozen, still, moving, {0, 2}, Vec3(0.1, 0, 1.0)) == moving);
}

TEST_CASE("umeyama examples") {
  std::mt19937_64 rng(4);
  auto src = random_points(rng, 20);
  auto id = umeyama_rigid_fit(src, src);
  CHECK((id.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(id.translation.norm() < 1e-12);

  RigidPose truth{rot_z(30), Vec3(1, 2, 3)};
  auto fit = umeyama_rigid_fit(src, moved_by(truth, src));
  CHECK(rotation_angle(fit.rotation, truth.rotation) < 1e-10);
  CHECK((fit.translation - truth.translation).norm() < 1e-10);

  std::vector<Vec3> mirror;
  for (const Vec3& p : src) mirror.emplace_back(-p.x(), p.y(), p.z());
  auto m = umeyama_rigid_fit(src, mirror);
  CHECK(m.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((m.rotation.transpose() * m.rotation - Mat3::Identity()).norm() < 1e-9);
  CHECK(fit_residual(m, src, mirror) > 1e-3);

  CHECK_THROWS_AS(umeyama_rigid_fit(std::vector<Vec3>(src.begin(), src.begin() + 2),
                                    std::vector<Vec3>(src.begin(), src.begin() + 2)),
                  Error);
  std::vector<Vec3> line = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
  CHECK_THROWS_AS(umeyama_rigid_fit(line, line), Error);
}

TEST_CASE("umeyama residual is invariant under a common rigid transform") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    auto src = random_points(rng, 15);
    RigidPose truth{random_rotation(rng), Vec3(n(rng), n(rng), n(rng))};
    auto dst = moved_by(truth, src);
    for (auto& p : dst) p += Vec3(n(rng), n(rng), n(rng));
    RigidPose g{random_rotation(rng), Vec3(1, -2, 0.5)};
    const double r0 = fit_residual(umeyama_rigid_fit(src, dst), src, dst);
    auto gs = moved_by(g, src), gd = moved_by(g, dst);
    const double r1 = fit_residual(umeyama_rigid_fit(gs, gd), gs, gd);
    CHECK(std::abs(r0 - r1) < 1e-10);
  }
}

TEST_CASE("ransac examples") {
  std::mt19937_64 rng(8);
  auto src = random_points(rng, 60);
  RigidPose truth{random_rotation(rng), Vec3(0.3, -0.1, 0.2)};
  auto dst = moved_by(truth, src);

  auto clean = ransac_rigid(src, dst, 0.01, 100, 1);
  CHECK(clean.inliers == all_indices(60));
  auto direct = umeyama_rigid_fit(src, dst);
  CHECK((clean.pose.rotation - direct.rotation).norm() < 1e-12);
  CHECK((clean.pose.translation - direct.translation).norm() < 1e-12);

  auto again = ransac_rigid(src, dst, 0.01, 100, 1);
  CHECK(again.inliers == clean.inliers);
  CHECK(again.pose.rotation == clean.pose.rotation);

  // 70/30 mixture
  std::uniform_real_distribution<double> u(-1, 1);
  auto mixed = dst;
  std::vector<Index> truth_inliers;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    if (i % 10 < 3) mixed[i] = Vec3(u(rng), u(rng), u(rng));
    else truth_inliers.push_back(static_cast<Index>(i));
  }
  auto robust = ransac_rigid(src, mixed, 0.01, 500, 3);
  std::size_t hit = 0;
  for (Index i : truth_inliers) hit += std::binary_search(robust.inliers.begin(), robust.inliers.end(), i);
  CHECK(hit == truth_inliers.size());
  CHECK((robust.pose.translation - truth.translation).norm() < 1e-3);

  // nothing consistent
  auto noise_src = random_points(rng, 30, 10.0), noise_dst = random_points(rng, 30, 10.0);
  try {
    ransac_rigid(noise_src, noise_dst, 1e-6, 50, 1);
    FAIL("expected no consensus");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoConsensus);
  }
}

TEST_CASE("segment_object on two bodies") {
  auto scene = two_body_trajectories(8, 0.001, 5);
  const auto& tr = scene.traj.trajectories;
  ObjectParams params;
  auto event = event_at(scene.traj, 1, 7, Vec3(0.1, 0, 1.0));
  auto result = segment_object(scene.traj, event, params);

  std::vector<Index> truth;
  for (std::size_t i = 0; i < scene.body.size(); ++i)
    if (scene.body[i] == 1) truth.push_back(static_cast<Index>(i));
  std::vector<Index> common;
  std::set_intersection(result.segment.begin(), result.segment.end(), truth.begin(), truth.end(),
                        std::back_inserter(common));
  const double iou = static_cast<double>(common.size()) /
                     static_cast<double>(result.segment.size() + truth.size() - common.size());
  CHECK(iou >= 0.9);

  REQUIRE(result.poses.size() == 7);
  CHECK(result.poses.front().frame == 1);
  CHECK((result.poses.front().pose.rotation - Mat3::Identity()).norm() < 1e-9);
  CHECK(result.poses.front().pose.translation.norm() < 1e-9);
  const RigidPose start_inv = scene.moving_poses[1].inverse();
  for (const auto& fp : result.poses) {
    const RigidPose expected = scene.moving_poses[fp.frame] * start_inv;
    CHECK(rotation_angle(fp.pose.rotation, expected.rotation) * 180 / M_PI < 1.0);
    CHECK((fp.pose.rotation.transpose() * fp.pose.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(fp.pose.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    // compare where the pose sends the body's start-frame centroid
    Vec3 c = Vec3::Zero();
    for (Index i : truth) c += tr.position(1, i);
    c /= static_cast<double>(truth.size());
    CHECK((fp.pose * c - expected * c).norm() < 5e-3);
  }

  // the segment lies in every per-frame inlier set
  for (const auto& inliers : result.inlier_sets)
    CHECK(std::includes(inliers.begin(), inliers.end(), result.segment.begin(), result.segment.end()));
  for (Index i : result.segment) CHECK(scene.traj.labels[i] == Label::Background);
  CHECK(result.poses.size() == result.ransac_poses.size());
}

TEST_CASE("segment_object ignores actor points") {
  auto scene = two_body_trajectories(6, 0.0, 2);
  for (std::size_t i = 0; i < scene.body.size(); i += 7) scene.traj.labels[i] = Label::Actor;
  auto result = segment_object(scene.traj, event_at(scene.traj, 0, 5, Vec3(0.1, 0, 1.0)), ObjectParams{});
  for (Index i : result.segment) CHECK(scene.traj.labels[i] == Label::Background);
  for (Index i : result.candidates) CHECK(scene.traj.labels[i] == Label::Background);
}

TEST_CASE("segment_object on a static scene yields identity poses") {
  auto scene = two_body_trajectories(1, 0.0, 1);
  scene.traj.trajectories.states.assign(5, scene.traj.trajectories.states[0]);
  auto result = segment_object(scene.traj, event_at(scene.traj, 0, 4, Vec3(0, 0, 1.0)), ObjectParams{});
  for (const auto& fp : result.poses) {
    CHECK((fp.pose.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(fp.pose.translation.norm() < 1e-9);
  }
  CHECK(result.segment == all_indices(scene.body.size()));
}

TEST_CASE("segment_object reports a lost object") {
  // 1 mm jitter against a 1.5 mm inlier gate: each frame keeps roughly half of
  // the body, and over twelve frames the intersection runs dry
  auto scene = two_body_trajectories(12, 0.001, 9);
  ObjectParams params;
  params.inlier_dist = 0.0015;
  try {
    segment_object(scene.traj, event_at(scene.traj, 0, 11, Vec3(0.1, 0, 1.0)), params);
    FAIL("expected a lost object");
  } catch (const ObjectLostError& e) {
    CHECK(e.kind() == ErrorKind::ObjectLost);
    REQUIRE(e.inlier_counts().size() == 12);
    CHECK(e.inlier_counts()[0] > 0);
    CHECK(std::string(e.what()).find("inlier counts") != std::string::npos);
  }
}

TEST_CASE("segment_object needs a moving cluster large enough for a rigid fit") {
  auto scene = two_body_trajectories(4, 0.0, 1);
  auto& states = scene.traj.trajectories.states;
  // one stray point races off while everything else stays put
  for (std::size_t t = 0; t < states.size(); ++t) {
    states[t] = states[0];
    states[t].positions[0] += Vec3(0.2 * t, 0, 0);
  }
  bool threw = false;
  try {
    segment_object(scene.traj, event_at(scene.traj, 0, 3, Vec3(-0.18, -0.05, 0.95)), ObjectParams{});
  } catch (const Error& e) {
    threw = true;
    CHECK(e.kind() == ErrorKind::Degenerate);
  }
  CHECK(threw);
}

TEST_CASE("object JSON round trip") {
  auto scene = two_body_trajectories(4, 0.0, 1);
  auto result = segment_object(scene.traj, event_at(scene.traj, 0, 3, Vec3(0.1, 0, 1.0)), ObjectParams{});
  const auto text = object_to_json(result);
  for (const char* key : {"\"segment\"", "\"initial_cluster\"", "\"poses\"", "\"frame\"", "\"R\"", "\"t\""})
    CHECK(text.find(key) != std::string::npos);
  auto back = object_from_json(text);
  CHECK(back.segment == result.segment);
  CHECK(back.initial_cluster == result.initial_cluster);
  REQUIRE(back.poses.size() == result.poses.size());
  for (std::size_t k = 0; k < back.poses.size(); ++k) {
    CHECK(back.poses[k].frame == result.poses[k].frame);
    CHECK(back.poses[k].pose.rotation == result.poses[k].pose.rotation);
    CHECK(back.poses[k].pose.translation == result.poses[k].pose.translation);
  }
}

TEST_CASE("object params validation") {
  ObjectParams p;
  CHECK_NOTHROW(p.validate());
  p.sigma = 0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.attention_radius = -1;
  CHECK_THROWS_AS(p.validate(), Error);
}
