#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "support.hpp"

#include "manipflow/registration.hpp"

using namespace manipflow;
using namespace testing;

namespace {

Eigen::MatrixXd dense(const Eigen::SparseMatrix<double, Eigen::RowMajor>& m) { return Eigen::MatrixXd(m); }

double max_displacement_error(const PointCloud& model, const WarpField& warp, const Mat3& r, const Vec3& t) {
  const PointCloud moved = apply_warp(model, warp);
  double worst = 0;
  for (std::size_t i = 0; i < model.size(); ++i)
    worst = std::max(worst, (moved.positions[i] - (r * model.positions[i] + t)).norm());
  return worst;
}

PointCloud test_box() { return box_surface(Vec3(0.02, -0.01, 1.0), Vec3(0.12, 0.08, 0.05), 0.02); }

}  // namespace

TEST_CASE("apply_warp examples") {
  PointCloud c;
  c.positions = {Vec3(1, 0, 0), Vec3(0, 2, 3)};
  c.normals = {Vec3(1, 0, 0), Vec3(0, 0, 1)};

  auto same = apply_warp(c, WarpField(2));
  CHECK(same.positions == c.positions);
  CHECK(same.normals == c.normals);

  WarpField quarter(2);
  quarter.transforms[0][2] = M_PI / 2;
  auto turned = apply_warp(c, quarter);
  CHECK((turned.positions[0] - Vec3(0, 1, 0)).norm() < 1e-12);
  CHECK((turned.normals[0] - Vec3(0, 1, 0)).norm() < 1e-12);

  WarpField lift(2);
  for (auto& t : lift.transforms) t[5] = 0.1;
  auto lifted = apply_warp(c, lift);
  for (int i = 0; i < 2; ++i) {
    CHECK((lifted.positions[i] - c.positions[i] - Vec3(0, 0, 0.1)).norm() < 1e-15);
    CHECK(lifted.normals[i] == c.normals[i]);
  }

  CHECK_THROWS_AS(apply_warp(c, WarpField(3)), Error);
}

TEST_CASE("euler rotation convention and derivatives") {
  const double a = 0.3, b = -0.2, g = 0.7;
  Mat3 expected = (Eigen::AngleAxisd(g, Vec3::UnitZ()) * Eigen::AngleAxisd(b, Vec3::UnitY()) *
                   Eigen::AngleAxisd(a, Vec3::UnitX())).toRotationMatrix();
  CHECK((euler_rotation(a, b, g) - expected).norm() < 1e-15);
  auto d = euler_rotation_derivatives(a, b, g);
  const double h = 1e-6;
  Mat3 fa = (euler_rotation(a + h, b, g) - euler_rotation(a - h, b, g)) / (2 * h);
  Mat3 fb = (euler_rotation(a, b + h, g) - euler_rotation(a, b - h, g)) / (2 * h);
  Mat3 fg = (euler_rotation(a, b, g + h) - euler_rotation(a, b, g - h)) / (2 * h);
  CHECK((d[0] - fa).norm() < 1e-9);
  CHECK((d[1] - fb).norm() < 1e-9);
  CHECK((d[2] - fg).norm() < 1e-9);
}

TEST_CASE("warp serialization round trips") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  WarpField w(7);
  for (auto& t : w.transforms)
    for (int c = 0; c < 6; ++c) t[c] = n(rng);
  auto bytes = serialize_warp(w);
  CHECK(bytes.size() == 7 * 48);
  CHECK(deserialize_warp(bytes).flatten() == w.flatten());
  CHECK(warp_from_json(warp_to_json(w)).flatten() == w.flatten());
  // first float is alpha of point 0, little endian
  double first;
  std::memcpy(&first, bytes.data(), 8);
  CHECK(first == w.transforms[0][0]);
  bytes.pop_back();
  CHECK_THROWS_AS(deserialize_warp(bytes), Error);
}

TEST_CASE("find_correspondences gates") {
  RegistrationParams p;
  auto plane = [](double z, Vec3 normal) {
    PointCloud c;
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        c.positions.emplace_back(0.01 * i, 0.01 * j, z);
        c.normals.push_back(normal);
      }
    return c;
  };

  auto a = plane(0, Vec3::UnitZ());
  auto self = find_correspondences(a, a, p);
  REQUIRE(self.size() == a.size());
  for (auto& c : self) CHECK((a.positions[c.source] - a.positions[c.target]).norm() == 0.0);

  CHECK(find_correspondences(a, plane(1.0, Vec3::UnitZ()), p).empty());

  PointCloud src, dst;
  src.positions = {Vec3::Zero()};
  src.normals = {Vec3::UnitZ()};
  dst.positions = {Vec3::Zero()};
  dst.normals = {Vec3::UnitX()};
  CHECK(find_correspondences(src, dst, p).empty());
  dst.normals.clear();  // gate skipped without target normals
  CHECK(find_correspondences(src, dst, p).size() == 1);

  src.colors = {Vec3(1, 0, 0)};
  dst.colors = {Vec3(0, 0, 1)};
  CHECK(find_correspondences(src, dst, p).empty());

  CHECK_THROWS_AS(find_correspondences(src, PointCloud{}, p), Error);
}

TEST_CASE("residual examples") {
  RegistrationParams p;
  auto model = test_box();
  auto graph = build_regularization_graph(model, 6, p.sigma_reg);
  CorrespondenceSet corr;
  for (std::size_t i = 0; i < model.size(); ++i) corr.push_back({static_cast<Index>(i), static_cast<Index>(i)});

  auto sys = residuals_and_jacobian(model, model, corr, graph, WarpField(model.size()), p);
  CHECK(sys.residuals.norm() == 0.0);
  CHECK(sys.jacobian.cols() == static_cast<Eigen::Index>(6 * model.size()));
  CHECK(sys.residuals.size() ==
        static_cast<Eigen::Index>(4 * corr.size() + 6 * graph.num_directed_edges()));

  // equal transforms give zero stiffness rows even away from identity
  WarpField moved(model.size());
  for (auto& t : moved.transforms) t << 0.1, 0.2, -0.1, 0.3, 0, 0.01;
  auto stiff_only = residuals_and_jacobian(model, model, {}, graph, moved, p);
  CHECK(stiff_only.residuals.size() == static_cast<Eigen::Index>(6 * graph.num_directed_edges()));
  CHECK(stiff_only.residuals.norm() == 0.0);
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 40; ++i) {
    auto inst = random_cost_instance(rng);
    CHECK(gradient_check(inst) < 1e-5);
  }
}

TEST_CASE("NormalEquations reproduces J^T J and J^T r") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    auto c = random_cost_instance(rng);
    auto sys = residuals_and_jacobian(c.model, c.target, c.corr, c.graph, c.warp, c.params);
    const Eigen::MatrixXd j = dense(sys.jacobian);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    NormalEquations ne(c.model, c.target, c.corr, c.graph, c.warp, c.params);
    CHECK((ne.rhs() - j.transpose() * sys.residuals).norm() <= 1e-10 * std::max(1.0, ne.rhs().norm()));
    CHECK((ne.diagonal() - jtj.diagonal()).norm() <= 1e-10 * jtj.norm());
    Eigen::VectorXd x = Eigen::VectorXd::Random(j.cols()), y;
    ne.apply(x, y);
    CHECK((y - jtj * x).norm() <= 1e-10 * (jtj * x).norm());
  }
}

TEST_CASE("gauss_newton_step examples") {
  Eigen::SparseMatrix<double, Eigen::RowMajor> eye(12, 12);
  eye.setIdentity();
  Eigen::VectorXd e1 = Eigen::VectorXd::Unit(12, 0);
  CHECK((gauss_newton_step(eye, e1, 200, 1e-12).x - e1).norm() < 1e-14);
  CHECK(gauss_newton_step(eye, Eigen::VectorXd::Zero(12), 200, 1e-12).x.isZero(0.0));

  std::mt19937_64 rng(30);
  const Eigen::MatrixXd j = well_conditioned_jacobian(rng, 30, 12);
  const Eigen::VectorXd r = Eigen::VectorXd::Random(30);
  const Eigen::VectorXd direct = (j.transpose() * j).ldlt().solve(j.transpose() * r);
  auto step = gauss_newton_step(j.sparseView(), r, 200, 1e-14);
  CHECK((step.x - direct).norm() < 1e-8);
  CHECK(step.residual_norm <= 1e-14 * (j.transpose() * r).norm());

  // a zero column is clamped instead of dividing by zero
  Eigen::MatrixXd jz = j;
  jz.col(3).setZero();
  auto clamped = gauss_newton_step(jz.sparseView(), r, 200, 1e-12);
  CHECK(clamped.x.allFinite());
}

TEST_CASE("Huber behaviour") {
  const double d = 1e-4;
  for (double e : {0.0, 1e-6, -5e-5, 1e-4}) {
    CHECK(std::abs(huber_cost(e, d) - 0.5 * e * e) <= 1e-12);
    CHECK(huber_weight(e, d) == 1.0);
  }
  // linear growth: equal increments on a geometric ramp converge to slope delta
  double prev_slope = 0;
  for (double e = 1e-3; e < 10; e *= 2) {
    const double slope = (huber_cost(2 * e, d) - huber_cost(e, d)) / e;
    CHECK(slope == doctest::Approx(d).epsilon(1e-12));
    CHECK(huber_weight(e, d) * e == doctest::Approx(d));
    prev_slope = slope;
  }
  CHECK(prev_slope > 0);

  // inside the threshold the stiffness cost of a warp is purely quadratic
  PointCloud two;
  two.positions = {Vec3(0, 0, 0), Vec3(0.01, 0, 0)};
  NeighborhoodGraph g;
  g.adjacency = {{1}, {0}};
  g.edge_weights = {{0.7}, {0.7}};
  WarpField w(2);
  w.transforms[0] << 5e-5, -3e-5, 1e-5, 9e-5, 0, -1e-4;
  const double quad = 2 * 0.7 * 0.5 * w.transforms[0].squaredNorm();
  CHECK(std::abs(stiffness_cost(g, w, d) - quad) <= 1e-12);
}

TEST_CASE("register: aligned input stays put") {
  auto model = test_box();
  RegistrationParams p;
  auto warp = register_nonrigid(model, model, WarpField(model.size()), p);
  CHECK(max_displacement_error(model, warp, Mat3::Identity(), Vec3::Zero()) < 1e-6);
}

TEST_CASE("register: zero Gauss-Newton iterations return init") {
  auto model = test_box();
  RegistrationParams p;
  p.gn_iters = 0;
  WarpField init(model.size());
  for (auto& t : init.transforms) t << 0.01, 0, 0, 0.02, 0, 0;
  auto target = transformed(model, rot_z(5), Vec3(0.01, 0, 0));
  CHECK(register_nonrigid(model, target, init, p).flatten() == init.flatten());
}

TEST_CASE("register: rigid motion is recovered") {
  auto model = test_box();
  const Mat3 r = rot_z(10);
  const Vec3 c = Vec3(0.02, -0.01, 1.0);
  const Vec3 t = c - r * c + Vec3(0.05, 0, 0);
  auto target = transformed(model, r, t);
  RegistrationParams p;
  RegistrationReport report;
  auto warp = register_nonrigid(model, target, WarpField(model.size()), p, &report);
  CHECK(max_displacement_error(model, warp, r, t) < 2e-3);

  // accepted steps never raise the cost for their correspondences
  REQUIRE(report.accepted_steps > 0);
  for (std::size_t k = 0; k < report.accepted_costs.size(); ++k)
    CHECK(report.accepted_costs[k] <= report.costs_before[k]);
}

TEST_CASE("register: huge stiffness collapses to one rigid motion") {
  auto model = test_box();
  const Mat3 r = rot_z(6);
  const Vec3 c = Vec3(0.02, -0.01, 1.0);
  const Vec3 t = c - r * c + Vec3(0.02, 0.01, 0);
  RegistrationParams p;
  p.w_stiff = 1e8;
  auto warp = register_nonrigid(model, transformed(model, r, t), WarpField(model.size()), p);
  double spread = 0;
  for (auto& x : warp.transforms) spread = std::max(spread, (x - warp.transforms[0]).cwiseAbs().maxCoeff());
  CHECK(spread < 1e-6);
  CHECK(max_displacement_error(model, warp, r, t) < 2e-3);
}

TEST_CASE("register is equivariant under point relabeling") {
  auto model = test_box();
  const Mat3 r = rot_z(4);
  auto target = transformed(model, r, Vec3(0.01, 0.0, 0.0));
  std::vector<Index> perm(model.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);

  RegistrationParams p;
  auto a = apply_warp(model, register_nonrigid(model, target, WarpField(model.size()), p));
  auto shuffled = model.subset(perm);
  auto b = apply_warp(shuffled, register_nonrigid(shuffled, target, WarpField(model.size()), p));
  double worst = 0;
  for (std::size_t k = 0; k < perm.size(); ++k)
    worst = std::max(worst, (b.positions[k] - a.positions[perm[k]]).norm());
  CHECK(worst < 1e-6);
}

TEST_CASE("register: no overlap is reported") {
  auto model = test_box();
  auto far = transformed(model, Mat3::Identity(), Vec3(5, 0, 0));
  CHECK_THROWS_AS(register_nonrigid(model, far, WarpField(model.size()), RegistrationParams{}), Error);
  try {
    register_nonrigid(model, far, WarpField(model.size()), RegistrationParams{});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoOverlap);
  }
}

TEST_CASE("registration params validation") {
  RegistrationParams p;
  CHECK_NOTHROW(p.validate());
  p.delta = 0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.w_stiff = -1;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.sigma_reg = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}
