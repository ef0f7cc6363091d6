#pragma once

// Shared scene builders and oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "manipflow/object.hpp"
#include "manipflow/registration.hpp"

namespace testing {

using namespace manipflow;

inline Mat3 rot_z(double deg) {
  return Eigen::AngleAxisd(deg * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

/// Points on the surface of an axis-aligned box with outward normals.
inline PointCloud box_surface(const Vec3& center, const Vec3& half, double spacing) {
  PointCloud c;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    const int nu = std::max(1, static_cast<int>(std::round(2 * half[u] / spacing)));
    const int nv = std::max(1, static_cast<int>(std::round(2 * half[v] / spacing)));
    for (int side : {-1, 1}) {
      for (int i = 0; i <= nu; ++i) {
        for (int j = 0; j <= nv; ++j) {
          // shared edges belong to the lower axis only
          if ((i == 0 || i == nu) && u < axis) continue;
          if ((j == 0 || j == nv) && v < axis) continue;
          Vec3 p = center;
          p[axis] += side * half[axis];
          p[u] += -half[u] + 2 * half[u] * i / nu;
          p[v] += -half[v] + 2 * half[v] * j / nv;
          Vec3 n = Vec3::Zero();
          n[axis] = side;
          c.positions.push_back(p);
          c.normals.push_back(n);
        }
      }
    }
  }
  return c;
}

inline PointCloud transformed(const PointCloud& c, const Mat3& r, const Vec3& t) {
  PointCloud out = c;
  for (auto& p : out.positions) p = r * p + t;
  for (auto& n : out.normals) n = r * n;
  return out;
}

inline PointCloud concat(const PointCloud& a, const PointCloud& b) {
  PointCloud out = a;
  out.positions.insert(out.positions.end(), b.positions.begin(), b.positions.end());
  out.normals.insert(out.normals.end(), b.normals.begin(), b.normals.end());
  return out;
}

struct CostInstance {
  PointCloud model, target;
  CorrespondenceSet corr;
  NeighborhoodGraph graph;
  WarpField warp;
  RegistrationParams params;
};

/// Random small registration problem. Half of the instances use a Huber
/// threshold large enough that most stiffness residuals sit in the quadratic zone.
inline CostInstance random_cost_instance(std::mt19937_64& rng, int max_points = 20) {
  std::uniform_real_distribution<double> u(-1, 1);
  CostInstance inst;
  const int n = 8 + static_cast<int>(rng() % (max_points - 7));
  for (int i = 0; i < n; ++i) {
    inst.model.positions.emplace_back(0.1 * u(rng), 0.1 * u(rng), 1.0 + 0.1 * u(rng));
    inst.model.normals.push_back(Vec3(u(rng), u(rng), u(rng)).normalized());
    inst.target.positions.push_back(inst.model.positions.back() + 0.02 * Vec3(u(rng), u(rng), u(rng)));
    inst.target.normals.push_back(Vec3(u(rng), u(rng), u(rng)).normalized());
  }
  for (int i = 0; i < n; ++i)
    if (rng() % 4 != 0) inst.corr.push_back({i, static_cast<Index>(rng() % n)});
  inst.params.w_point = 0.05 + 0.5 * std::abs(u(rng));
  inst.params.w_stiff = 1 + 300 * std::abs(u(rng));
  inst.params.delta = rng() % 2 ? 1e-4 : 0.3;
  inst.params.sigma_reg = 0.05;
  inst.graph = build_regularization_graph(inst.model, 4, inst.params.sigma_reg);
  inst.warp = WarpField(n);
  for (auto& t : inst.warp.transforms)
    t << 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng), 0.05 * u(rng), 0.05 * u(rng), 0.05 * u(rng);
  return inst;
}

inline double instance_cost(const CostInstance& c, const Eigen::VectorXd& x) {
  return registration_cost(c.model, c.target, c.corr, c.graph, WarpField::unflatten(x), c.params);
}

/// Relative error |g_fd - g| / |g| between the analytic gradient 2 J^T r and
/// central differences of the scalar cost.
inline double gradient_check(const CostInstance& c, double h = 1e-6) {
  auto sys = residuals_and_jacobian(c.model, c.target, c.corr, c.graph, c.warp, c.params);
  const Eigen::VectorXd analytic = 2.0 * (sys.jacobian.transpose() * sys.residuals);
  const Eigen::VectorXd x = c.warp.flatten();
  Eigen::VectorXd fd(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, b = x;
    a[k] += h;
    b[k] -= h;
    fd[k] = (instance_cost(c, a) - instance_cost(c, b)) / (2 * h);
  }
  return (fd - analytic).norm() / std::max(analytic.norm(), 1e-300);
}

/// Random J = U diag(s) V^T with orthonormal U, V and singular values in [1, 3],
/// so J^T J has condition number at most 9.
inline Eigen::MatrixXd well_conditioned_jacobian(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n;
  auto orthonormal = [&](int r, int c) -> Eigen::MatrixXd {
    Eigen::MatrixXd g(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g(i, j) = n(rng);
    return Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(r, c);
  };
  const Eigen::MatrixXd u = orthonormal(rows, cols), v = orthonormal(cols, cols);
  Eigen::VectorXd s(cols);
  std::uniform_real_distribution<double> unit(1.0, 3.0);
  for (int c = 0; c < cols; ++c) s[c] = unit(rng);
  return u * s.asDiagonal() * v.transpose();
}

/// Trajectories of two boxes side by side: the first is static, the second
/// turns about its own center and slides. Truth body per point in `body`.
struct TwoBodyTrajectories {
  LabeledTrajectorySet traj;
  std::vector<int> body;
  std::vector<RigidPose> moving_poses;
};

inline TwoBodyTrajectories two_body_trajectories(int frames, double noise, std::uint64_t seed,
                                                 double spacing = 0.02) {
  TwoBodyTrajectories out;
  PointCloud a = box_surface(Vec3(-0.1, 0, 1.0), Vec3(0.08, 0.05, 0.05), spacing);
  PointCloud b = box_surface(Vec3(0.1, 0, 1.0), Vec3(0.08, 0.05, 0.05), spacing);
  out.body.assign(a.size(), 0);
  out.body.resize(a.size() + b.size(), 1);
  const Vec3 c(0.1, 0, 1.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit;
  auto jitter = [&]() -> Vec3 { return noise * Vec3(unit(rng), unit(rng), unit(rng)); };
  for (int t = 0; t < frames; ++t) {
    const double s = static_cast<double>(t) / std::max(1, frames - 1);
    RigidPose pose;
    pose.rotation = Eigen::AngleAxisd(0.5 * s, Vec3(0.2, 1, 0.1).normalized()).toRotationMatrix();
    pose.translation = c - pose.rotation * c + Vec3(0.05, 0.03, -0.08) * s;
    out.moving_poses.push_back(pose);
    PointCloud state;
    for (const Vec3& p : a.positions) state.positions.push_back(p + jitter());
    for (const Vec3& p : b.positions) state.positions.push_back(pose * p + jitter());
    out.traj.trajectories.states.push_back(std::move(state));
  }
  out.traj.labels.assign(out.body.size(), Label::Background);
  return out;
}

inline double pose_translation_error(const RigidPose& a, const RigidPose& b) {
  return (a.translation - b.translation).norm();
}

}  // namespace testing
