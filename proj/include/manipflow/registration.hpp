#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "manipflow/graph.hpp"
#include "manipflow/kdtree.hpp"
#include "manipflow/point_cloud.hpp"

namespace manipflow {

/// Local rigid transform [alpha beta gamma tx ty tz]. The rotation is
/// R = Rz(gamma) Ry(beta) Rx(alpha), applied about the world origin.
using LocalTransform = Eigen::Matrix<double, 6, 1>;

Mat3 euler_rotation(double alpha, double beta, double gamma);
/// Partial derivatives of euler_rotation w.r.t. alpha, beta, gamma.
std::array<Mat3, 3> euler_rotation_derivatives(double alpha, double beta, double gamma);

struct WarpField {
  std::vector<LocalTransform> transforms;

  WarpField() = default;
  explicit WarpField(std::size_t n) : transforms(n, LocalTransform::Zero()) {}

  std::size_t size() const noexcept { return transforms.size(); }
  Vec3 apply(std::size_t i, const Vec3& x) const;

  /// Concatenates all transforms into one 6n parameter vector.
  Eigen::VectorXd flatten() const;
  static WarpField unflatten(const Eigen::VectorXd& params);
};

/// Flat record: 6 little-endian float64 per point, ordered [a b g tx ty tz].
std::vector<std::uint8_t> serialize_warp(const WarpField& warp);
WarpField deserialize_warp(const std::vector<std::uint8_t>& bytes);
std::string warp_to_json(const WarpField& warp);
WarpField warp_from_json(const std::string& text);

struct Correspondence {
  Index source;
  Index target;
};
using CorrespondenceSet = std::vector<Correspondence>;

struct RegistrationParams {
  double w_point = 0.1;
  double w_stiff = 200.0;
  double delta = 1e-4;             // Huber threshold
  double sigma_reg = 0.03;         // meters
  double max_dist = 0.1;           // meters
  double max_normal_angle = 0.7853981633974483;  // 45 deg
  double max_color_diff = 0.2;     // RGB distance
  int icp_iters = 10;
  int gn_iters = 3;
  int cg_iters = 500;
  double cg_tol = 1e-6;
  int graph_k = 6;
  /// Outer loop stops once a full ICP iteration moves no point further than this (meters).
  double convergence_tol = 1e-6;

  void validate() const;
};

/// position_i <- R_i x_i + t_i, normal_i <- R_i n_i. Colors are carried over.
PointCloud apply_warp(const PointCloud& model, const WarpField& warp);

/// Nearest target point per source point, filtered by distance, normal angle
/// and color gates. Gates are skipped when either side lacks the attribute.
CorrespondenceSet find_correspondences(const PointCloud& source, const PointCloud& target,
                                       const RegistrationParams& params);
CorrespondenceSet find_correspondences(const PointCloud& source, const PointCloud& target,
                                       const KdTree& target_tree, const RegistrationParams& params);

/// Huber penalty on a single residual component: e^2 / 2 inside [-delta, delta],
/// delta (|e| - delta / 2) outside.
double huber_cost(double e, double delta);
/// IRLS weight with huber_cost'(e) = weight * e.
double huber_weight(double e, double delta);

/// Regularization graph: symmetrized k-NN graph whose edge weights are the
/// Gaussian kernel exp(-d^2 / (2 sigma_reg^2)).
NeighborhoodGraph build_regularization_graph(const PointCloud& model, int k, double sigma_reg);

struct LinearizedSystem {
  Eigen::VectorXd residuals;
  Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian;  // 6 |model| columns
};

/// Residual stack: per correspondence one point-to-plane row and three
/// sqrt(w_point)-scaled point-to-point rows; per directed graph edge (i, j)
/// six IRLS-weighted stiffness rows sqrt(w_stiff w_ij omega_c) (T_i - T_j)_c.
/// The gradient of registration_cost equals 2 J^T r.
LinearizedSystem residuals_and_jacobian(const PointCloud& model, const PointCloud& target,
                                        const CorrespondenceSet& corr,
                                        const NeighborhoodGraph& graph, const WarpField& warp,
                                        const RegistrationParams& params);

/// Total cost: point-to-plane + w_point * point-to-point + w_stiff * sum over
/// directed edges of w_ij * sum_c huber_cost((T_i - T_j)_c).
double registration_cost(const PointCloud& model, const PointCloud& target,
                         const CorrespondenceSet& corr, const NeighborhoodGraph& graph,
                         const WarpField& warp, const RegistrationParams& params);

/// The stiffness part of registration_cost alone (without w_stiff).
double stiffness_cost(const NeighborhoodGraph& graph, const WarpField& warp, double delta);

struct CgResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual_norm = 0;  // |b - A x|
};

/// Solves J^T J x = J^T r with diagonally preconditioned CG.
CgResult gauss_newton_step(const Eigen::SparseMatrix<double, Eigen::RowMajor>& jacobian,
                           const Eigen::VectorXd& residuals, int cg_iters, double cg_tol);

/// Preconditioned CG for an SPD operator given as a callable y = A x.
/// Stops when |b - A x| <= tol |b| or after max_iters iterations.
template <typename Apply>
CgResult conjugate_gradient(Apply&& apply, const Eigen::VectorXd& diagonal,
                            const Eigen::VectorXd& b, int max_iters, double tol) {
  constexpr double kDiagFloor = 1e-12;
  const Eigen::Index n = b.size();
  CgResult out;
  out.x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd inv_diag(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_diag[i] = 1.0 / std::max(diagonal[i], kDiagFloor);

  const double b_norm = b.norm();
  if (b_norm == 0.0) return out;
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  Eigen::VectorXd ap(n);
  double rz = r.dot(z);
  out.residual_norm = b_norm;
  for (int it = 0; it < max_iters; ++it) {
    apply(p, ap);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;
    const double step = rz / pap;
    out.x.noalias() += step * p;
    r.noalias() -= step * ap;
    out.iterations = it + 1;
    out.residual_norm = r.norm();
    if (out.residual_norm <= tol * b_norm) break;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return out;
}

/// Normal equations J^T J, J^T r assembled directly from the problem structure:
/// one 6x6 block per point from the data terms plus per-edge diagonal couplings.
class NormalEquations {
 public:
  NormalEquations(const PointCloud& model, const PointCloud& target,
                  const CorrespondenceSet& corr, const NeighborhoodGraph& graph,
                  const WarpField& warp, const RegistrationParams& params);

  const Eigen::VectorXd& rhs() const noexcept { return rhs_; }  // J^T r
  Eigen::VectorXd diagonal() const;
  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const;  // y = J^T J x

 private:
  struct Edge {
    Index i, j;
    LocalTransform weight;  // combined weight of both directed rows per component
  };
  std::vector<Eigen::Matrix<double, 6, 6>> blocks_;
  std::vector<Edge> edges_;
  Eigen::VectorXd rhs_;
};

struct RegistrationReport {
  int outer_iterations = 0;
  int accepted_steps = 0;
  std::vector<double> accepted_costs;  // cost after each accepted step, same correspondences
  std::vector<double> costs_before;    // cost before each accepted step
  std::size_t last_correspondences = 0;
};

/// Non-rigid ICP: alternate correspondence search against the warped model and
/// gn_iters Gauss-Newton updates of the warp. Steps that would raise the cost
/// are halved, and dropped after a few tries. Throws ErrorKind::NoOverlap when
/// no outer iteration finds any correspondence.
WarpField register_nonrigid(const PointCloud& model, const PointCloud& target,
                            const WarpField& init, const RegistrationParams& params,
                            RegistrationReport* report = nullptr);

/// Same as above with a caller-provided regularization graph over the model.
WarpField register_nonrigid(const PointCloud& model, const PointCloud& target,
                            const NeighborhoodGraph& graph, const WarpField& init,
                            const RegistrationParams& params, RegistrationReport* report = nullptr);

}  // namespace manipflow
