#include "manipflow/registration.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"

#include "manipflow/error.hpp"

namespace manipflow {

Mat3 euler_rotation(double a, double b, double g) {
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cg = std::cos(g), sg = std::sin(g);
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cg, -sg, 0, sg, cg, 0, 0, 0, 1;
  return rz * ry * rx;
}

std::array<Mat3, 3> euler_rotation_derivatives(double a, double b, double g) {
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cg = std::cos(g), sg = std::sin(g);
  Mat3 rx, ry, rz, drx, dry, drz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cg, -sg, 0, sg, cg, 0, 0, 0, 1;
  drx << 0, 0, 0, 0, -sa, -ca, 0, ca, -sa;
  dry << -sb, 0, cb, 0, 0, 0, -cb, 0, -sb;
  drz << -sg, -cg, 0, cg, -sg, 0, 0, 0, 0;
  return {rz * ry * drx, rz * dry * rx, drz * ry * rx};
}

Vec3 WarpField::apply(std::size_t i, const Vec3& x) const {
  const auto& t = transforms[i];
  return euler_rotation(t[0], t[1], t[2]) * x + t.tail<3>();
}

Eigen::VectorXd WarpField::flatten() const {
  Eigen::VectorXd v(6 * static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) v.segment<6>(6 * i) = transforms[i];
  return v;
}

WarpField WarpField::unflatten(const Eigen::VectorXd& params) {
  if (params.size() % 6 != 0) throw input_error("warp: parameter count not a multiple of 6");
  WarpField w(static_cast<std::size_t>(params.size() / 6));
  for (std::size_t i = 0; i < w.size(); ++i) w.transforms[i] = params.segment<6>(6 * i);
  return w;
}

std::vector<std::uint8_t> serialize_warp(const WarpField& warp) {
  std::vector<std::uint8_t> out(warp.size() * 6 * sizeof(double));
  for (std::size_t i = 0; i < warp.size(); ++i)
    for (int c = 0; c < 6; ++c) {
      const double v = warp.transforms[i][c];
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b)
        out[(6 * i + c) * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  return out;
}

WarpField deserialize_warp(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 48 != 0) throw input_error("warp: record size not a multiple of 48 bytes");
  WarpField warp(bytes.size() / 48);
  for (std::size_t i = 0; i < warp.size(); ++i)
    for (int c = 0; c < 6; ++c) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(bytes[(6 * i + c) * 8 + b]) << (8 * b);
      double v;
      std::memcpy(&v, &bits, sizeof v);
      warp.transforms[i][c] = v;
    }
  return warp;
}

std::string warp_to_json(const WarpField& warp) {
  nlohmann::json j;
  j["num_points"] = warp.size();
  auto& params = j["params"] = nlohmann::json::array();
  for (const auto& t : warp.transforms)
    for (int c = 0; c < 6; ++c) params.push_back(t[c]);
  return j.dump();
}

WarpField warp_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto n = j.at("num_points").get<std::size_t>();
    const auto& params = j.at("params");
    if (params.size() != 6 * n) throw input_error("warp json: params length != 6 * num_points");
    WarpField warp(n);
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 6; ++c) warp.transforms[i][c] = params[6 * i + c].get<double>();
    return warp;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("warp json: ") + e.what());
  }
}

void RegistrationParams::validate() const {
  if (!(w_point >= 0) || !(w_stiff >= 0)) throw config_error("registration: weights must be >= 0");
  if (!(delta > 0)) throw config_error("registration: delta must be > 0");
  if (!(sigma_reg > 0)) throw config_error("registration: sigma_reg must be > 0");
  if (!(max_dist > 0) || !(max_normal_angle >= 0) || !(max_color_diff >= 0))
    throw config_error("registration: gates must be positive");
  if (icp_iters < 0 || gn_iters < 0 || cg_iters < 0)
    throw config_error("registration: iteration counts must be >= 0");
  if (!(cg_tol >= 0) || !(convergence_tol >= 0))
    throw config_error("registration: tolerances must be >= 0");
  if (graph_k < 1) throw config_error("registration: graph_k must be >= 1");
}

PointCloud apply_warp(const PointCloud& model, const WarpField& warp) {
  if (warp.size() != model.size()) throw input_error("apply_warp: warp size differs from model size");
  PointCloud out = model;
  const auto n = static_cast<std::int64_t>(model.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& t = warp.transforms[i];
    const Mat3 r = euler_rotation(t[0], t[1], t[2]);
    out.positions[i] = r * model.positions[i] + t.tail<3>();
    if (model.has_normals()) out.normals[i] = r * model.normals[i];
  }
  return out;
}

CorrespondenceSet find_correspondences(const PointCloud& source, const PointCloud& target,
                                       const RegistrationParams& params) {
  if (target.empty()) throw input_error("find_correspondences: empty target");
  return find_correspondences(source, target, KdTree(target.positions), params);
}

CorrespondenceSet find_correspondences(const PointCloud& source, const PointCloud& target,
                                       const KdTree& tree, const RegistrationParams& params) {
  if (target.empty() || tree.empty()) throw input_error("find_correspondences: empty target");
  const bool check_normals = source.has_normals() && target.has_normals();
  const bool check_colors = source.has_colors() && target.has_colors();
  const double min_cos = std::cos(params.max_normal_angle);
  const auto n = static_cast<std::int64_t>(source.size());
  std::vector<Index> match(source.size(), -1);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const Neighbor nb = tree.nearest(source.positions[i]);
    if (nb.distance > params.max_dist) continue;
    if (check_normals && source.normals[i].dot(target.normals[nb.index]) < min_cos) continue;
    if (check_colors && (source.colors[i] - target.colors[nb.index]).norm() > params.max_color_diff)
      continue;
    match[i] = nb.index;
  }
  CorrespondenceSet out;
  for (std::int64_t i = 0; i < n; ++i)
    if (match[i] >= 0) out.push_back({i, match[i]});
  return out;
}

double huber_cost(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
}

double huber_weight(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? 1.0 : delta / a;
}

NeighborhoodGraph build_regularization_graph(const PointCloud& model, int k, double sigma_reg) {
  NeighborhoodGraph g = build_knn_graph(model, k);
  const double inv = 1.0 / (2.0 * sigma_reg * sigma_reg);
  for (auto& ws : g.edge_weights)
    for (double& w : ws) w = std::exp(-w * w * inv);
  return g;
}

namespace {

struct DataTerm {
  Vec3 diff;                              // T(x) - y
  Vec3 normal;                            // target normal, zero if absent
  Eigen::Matrix<double, 3, 6> jacobian;   // d T(x) / d params
};

DataTerm data_term(const Vec3& x, const LocalTransform& t, const Vec3& y, const Vec3& normal) {
  const auto dr = euler_rotation_derivatives(t[0], t[1], t[2]);
  DataTerm d;
  d.diff = euler_rotation(t[0], t[1], t[2]) * x + t.tail<3>() - y;
  d.normal = normal;
  for (int k = 0; k < 3; ++k) d.jacobian.col(k) = dr[k] * x;
  d.jacobian.rightCols<3>().setIdentity();
  return d;
}

void check_sizes(const PointCloud& model, const NeighborhoodGraph& graph, const WarpField& warp) {
  if (warp.size() != model.size()) throw input_error("registration: warp size differs from model size");
  if (graph.num_nodes() != model.size())
    throw input_error("registration: graph size differs from model size");
}

Vec3 target_normal(const PointCloud& target, Index d) {
  return target.has_normals() ? target.normals[d] : Vec3::Zero();
}

}  // namespace

LinearizedSystem residuals_and_jacobian(const PointCloud& model, const PointCloud& target,
                                        const CorrespondenceSet& corr,
                                        const NeighborhoodGraph& graph, const WarpField& warp,
                                        const RegistrationParams& params) {
  check_sizes(model, graph, warp);
  const std::size_t rows = 4 * corr.size() + 6 * graph.num_directed_edges();
  LinearizedSystem sys;
  sys.residuals.resize(static_cast<Eigen::Index>(rows));
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * 6 * corr.size() + 12 * graph.num_directed_edges());

  const double sw = std::sqrt(params.w_point);
  Eigen::Index row = 0;
  for (const auto& c : corr) {
    const DataTerm d = data_term(model.positions[c.source], warp.transforms[c.source],
                                 target.positions[c.target], target_normal(target, c.target));
    const Eigen::Index col = 6 * c.source;
    sys.residuals[row] = d.normal.dot(d.diff);
    const Eigen::Matrix<double, 1, 6> plane = d.normal.transpose() * d.jacobian;
    for (int k = 0; k < 6; ++k) trip.emplace_back(row, col + k, plane[k]);
    ++row;
    for (int a = 0; a < 3; ++a, ++row) {
      sys.residuals[row] = sw * d.diff[a];
      for (int k = 0; k < 6; ++k) trip.emplace_back(row, col + k, sw * d.jacobian(a, k));
    }
  }
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    for (std::size_t e = 0; e < graph.adjacency[i].size(); ++e) {
      const Index j = graph.adjacency[i][e];
      const LocalTransform diff = warp.transforms[i] - warp.transforms[j];
      const double w = params.w_stiff * graph.edge_weights[i][e];
      for (int c = 0; c < 6; ++c, ++row) {
        const double s = std::sqrt(0.5 * w * huber_weight(diff[c], params.delta));
        sys.residuals[row] = s * diff[c];
        trip.emplace_back(row, 6 * static_cast<Eigen::Index>(i) + c, s);
        trip.emplace_back(row, 6 * j + c, -s);
      }
    }
  }
  sys.jacobian.resize(static_cast<Eigen::Index>(rows), 6 * static_cast<Eigen::Index>(model.size()));
  sys.jacobian.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

double stiffness_cost(const NeighborhoodGraph& graph, const WarpField& warp, double delta) {
  double cost = 0;
  for (std::size_t i = 0; i < graph.num_nodes(); ++i)
    for (std::size_t e = 0; e < graph.adjacency[i].size(); ++e) {
      const LocalTransform diff = warp.transforms[i] - warp.transforms[graph.adjacency[i][e]];
      double s = 0;
      for (int c = 0; c < 6; ++c) s += huber_cost(diff[c], delta);
      cost += graph.edge_weights[i][e] * s;
    }
  return cost;
}

double registration_cost(const PointCloud& model, const PointCloud& target,
                         const CorrespondenceSet& corr, const NeighborhoodGraph& graph,
                         const WarpField& warp, const RegistrationParams& params) {
  check_sizes(model, graph, warp);
  double plane = 0, point = 0;
  for (const auto& c : corr) {
    const Vec3 diff = warp.apply(c.source, model.positions[c.source]) - target.positions[c.target];
    const double p = target_normal(target, c.target).dot(diff);
    plane += p * p;
    point += diff.squaredNorm();
  }
  return plane + params.w_point * point + params.w_stiff * stiffness_cost(graph, warp, params.delta);
}

CgResult gauss_newton_step(const Eigen::SparseMatrix<double, Eigen::RowMajor>& jacobian,
                           const Eigen::VectorXd& residuals, int cg_iters, double cg_tol) {
  if (jacobian.rows() != residuals.size()) throw input_error("gauss_newton_step: J/r row mismatch");
  const Eigen::VectorXd rhs = jacobian.transpose() * residuals;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(jacobian.cols());
  for (Eigen::Index r = 0; r < jacobian.outerSize(); ++r)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(jacobian, r); it; ++it)
      diag[it.col()] += it.value() * it.value();
  Eigen::VectorXd tmp(jacobian.rows());
  auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
    tmp.noalias() = jacobian * x;
    y.noalias() = jacobian.transpose() * tmp;
  };
  return conjugate_gradient(apply, diag, rhs, cg_iters, cg_tol);
}

NormalEquations::NormalEquations(const PointCloud& model, const PointCloud& target,
                                 const CorrespondenceSet& corr, const NeighborhoodGraph& graph,
                                 const WarpField& warp, const RegistrationParams& params) {
  check_sizes(model, graph, warp);
  const std::size_t n = model.size();
  blocks_.assign(n, Eigen::Matrix<double, 6, 6>::Zero());
  rhs_ = Eigen::VectorXd::Zero(6 * static_cast<Eigen::Index>(n));

  // each source index appears at most once, so blocks can be filled in parallel
  const auto nc = static_cast<std::int64_t>(corr.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < nc; ++k) {
    const auto& c = corr[k];
    const DataTerm d = data_term(model.positions[c.source], warp.transforms[c.source],
                                 target.positions[c.target], target_normal(target, c.target));
    const Mat3 metric = d.normal * d.normal.transpose() + params.w_point * Mat3::Identity();
    blocks_[c.source].noalias() += d.jacobian.transpose() * metric * d.jacobian;
    rhs_.segment<6>(6 * c.source).noalias() += d.jacobian.transpose() * (metric * d.diff);
  }

  edges_.reserve(graph.num_directed_edges());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < graph.adjacency[i].size(); ++e) {
      const Index j = graph.adjacency[i][e];
      const LocalTransform diff = warp.transforms[i] - warp.transforms[j];
      const double w = params.w_stiff * graph.edge_weights[i][e];
      Edge edge{static_cast<Index>(i), j, LocalTransform::Zero()};
      for (int c = 0; c < 6; ++c) edge.weight[c] = 0.5 * w * huber_weight(diff[c], params.delta);
      const LocalTransform g = edge.weight.cwiseProduct(diff);
      rhs_.segment<6>(6 * static_cast<Eigen::Index>(i)) += g;
      rhs_.segment<6>(6 * j) -= g;
      edges_.push_back(edge);
    }
  }
}

Eigen::VectorXd NormalEquations::diagonal() const {
  Eigen::VectorXd d(rhs_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) d.segment<6>(6 * i) = blocks_[i].diagonal();
  for (const auto& e : edges_) {
    d.segment<6>(6 * e.i) += e.weight;
    d.segment<6>(6 * e.j) += e.weight;
  }
  return d;
}

void NormalEquations::apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
  y.resize(x.size());
  const auto n = static_cast<std::int64_t>(blocks_.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    y.segment<6>(6 * i).noalias() = blocks_[i] * x.segment<6>(6 * i);
  for (const auto& e : edges_) {
    const LocalTransform g = e.weight.cwiseProduct(x.segment<6>(6 * e.i) - x.segment<6>(6 * e.j));
    y.segment<6>(6 * e.i) += g;
    y.segment<6>(6 * e.j) -= g;
  }
}

WarpField register_nonrigid(const PointCloud& model, const PointCloud& target,
                            const WarpField& init, const RegistrationParams& params,
                            RegistrationReport* report) {
  if (model.size() < static_cast<std::size_t>(params.graph_k) + 1)
    throw input_error("register: model needs at least graph_k + 1 points");
  const NeighborhoodGraph graph = build_regularization_graph(model, params.graph_k, params.sigma_reg);
  return register_nonrigid(model, target, graph, init, params, report);
}

WarpField register_nonrigid(const PointCloud& model, const PointCloud& target,
                            const NeighborhoodGraph& graph, const WarpField& init,
                            const RegistrationParams& params, RegistrationReport* report) {
  params.validate();
  check_sizes(model, graph, init);
  if (target.empty()) throw input_error("register: empty target");
  RegistrationReport local;
  RegistrationReport& rep = report ? *report : local;
  rep = RegistrationReport{};

  WarpField warp = init;
  if (params.icp_iters == 0 || params.gn_iters == 0) return warp;

  constexpr int kMaxHalvings = 8;
  const KdTree tree(target.positions);
  bool any_overlap = false;
  for (int outer = 0; outer < params.icp_iters; ++outer) {
    rep.outer_iterations = outer + 1;
    const PointCloud current = apply_warp(model, warp);
    const CorrespondenceSet corr = find_correspondences(current, target, tree, params);
    rep.last_correspondences = corr.size();
    if (corr.empty()) continue;
    any_overlap = true;

    for (int gn = 0; gn < params.gn_iters; ++gn) {
      const NormalEquations ne(model, target, corr, graph, warp, params);
      const double cost0 = registration_cost(model, target, corr, graph, warp, params);
      const CgResult step = conjugate_gradient(
          [&ne](const Eigen::VectorXd& x, Eigen::VectorXd& y) { ne.apply(x, y); }, ne.diagonal(),
          ne.rhs(), params.cg_iters, params.cg_tol);
      if (step.x.isZero(0.0)) break;

      const Eigen::VectorXd base = warp.flatten();
      double scale = 1.0;
      bool accepted = false;
      WarpField candidate;
      double cost1 = cost0;
      for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
        candidate = WarpField::unflatten(base - scale * step.x);
        cost1 = registration_cost(model, target, corr, graph, candidate, params);
        if (cost1 <= cost0) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      rep.costs_before.push_back(cost0);
      rep.accepted_costs.push_back(cost1);
      ++rep.accepted_steps;
      warp = std::move(candidate);
    }

    const PointCloud moved = apply_warp(model, warp);
    double max_move = 0;
    for (std::size_t i = 0; i < model.size(); ++i)
      max_move = std::max(max_move, (moved.positions[i] - current.positions[i]).norm());
    if (max_move < params.convergence_tol) break;
  }
  if (!any_overlap) throw Error(ErrorKind::NoOverlap, "register: no correspondences survived the gates");
  return warp;
}

}  // namespace manipflow
