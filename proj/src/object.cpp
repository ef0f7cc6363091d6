#include "manipflow/object.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "json.hpp"

namespace manipflow {

double rotation_angle(const Mat3& a, const Mat3& b) {
  const Mat3 r = a.transpose() * b;
  const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  // atan2 keeps full precision near zero where acos((tr - 1) / 2) does not
  return std::atan2(0.5 * w.norm(), 0.5 * (r.trace() - 1.0));
}

void ObjectParams::validate() const {
  if (!(attention_radius > 0)) throw config_error("object: attention_radius must be > 0");
  if (!(sigma > 0)) throw config_error("object: sigma must be > 0");
  if (ransac_iters < 1) throw config_error("object: ransac_iters must be >= 1");
  if (!(inlier_dist > 0)) throw config_error("object: inlier_dist must be > 0");
  if (kmeans_restarts < 1) throw config_error("object: kmeans_restarts must be >= 1");
}

TrajectorySimilarity trajectory_similarity(const TrajectorySet& traj, std::span<const Index> candidates,
                                           FrameWindow window, double sigma) {
  if (window.first < 0 || window.last < window.first ||
      static_cast<std::size_t>(window.last) >= traj.num_frames())
    throw input_error("trajectory_similarity: window outside trajectory range");
  if (!(sigma > 0)) throw input_error("trajectory_similarity: sigma must be > 0");
  const auto n = static_cast<Eigen::Index>(candidates.size());
  const int frames = window.last - window.first + 1;

  // positions laid out [frame][candidate] for cache-friendly pair loops
  std::vector<Vec3> pos(static_cast<std::size_t>(frames) * candidates.size());
  for (int f = 0; f < frames; ++f)
    for (Eigen::Index i = 0; i < n; ++i)
      pos[f * n + i] = traj.position(window.first + f, candidates[i]);

  TrajectorySimilarity out;
  out.sigma = sigma;
  out.matrix = Eigen::MatrixXd::Identity(n, n);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const double floor = std::numeric_limits<double>::min();
#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double dmin = std::numeric_limits<double>::infinity(), dmax = 0;
      for (int f = 0; f < frames; ++f) {
        const double d = (pos[f * n + i] - pos[f * n + j]).norm();
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
      const double span = dmax - dmin;
      const double s = std::max(std::exp(-span * span * inv), floor);
      out.matrix(i, j) = s;
      out.matrix(j, i) = s;
    }
  }
  return out;
}

std::vector<int> kmeans(const Eigen::MatrixXd& rows, int k, std::uint64_t seed, int restarts,
                        int max_iters) {
  const Eigen::Index n = rows.rows();
  if (n == 0 || k < 1) return {};
  std::mt19937_64 rng(seed);
  std::vector<int> best_labels(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();

  for (int rs = 0; rs < std::max(1, restarts); ++rs) {
    // k-means++ seeding
    Eigen::MatrixXd centers(k, rows.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.row(0) = rows.row(pick(rng));
    Eigen::VectorXd d2(n);
    for (int c = 1; c < k; ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (int q = 0; q < c; ++q) m = std::min(m, (rows.row(i) - centers.row(q)).squaredNorm());
        d2[i] = m;
      }
      const double total = d2.sum();
      Eigen::Index chosen = pick(rng);
      if (total > 0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (Eigen::Index i = 0; i < n; ++i) {
          u -= d2[i];
          if (u <= 0) {
            chosen = i;
            break;
          }
        }
      }
      centers.row(c) = rows.row(chosen);
    }

    std::vector<int> labels(n, -1);
    double inertia = 0;
    for (int it = 0; it < max_iters; ++it) {
      bool changed = false;
      inertia = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double m = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double d = (rows.row(i) - centers.row(c)).squaredNorm();
          if (d < m) {
            m = d;
            arg = c;
          }
        }
        inertia += m;
        if (labels[i] != arg) {
          labels[i] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, rows.cols());
      std::vector<Eigen::Index> counts(k, 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(labels[i]) += rows.row(i);
        ++counts[labels[i]];
      }
      for (int c = 0; c < k; ++c)
        if (counts[c] > 0) centers.row(c) = sums.row(c) / static_cast<double>(counts[c]);
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

namespace {

// Two largest eigenpairs of a symmetric matrix. Dense for small sizes,
// otherwise Rayleigh-Ritz on a block Krylov space. The block matters: two
// disconnected bodies give eigenvalue 1 twice, and a single-vector Krylov
// space only ever sees one direction of a repeated eigenspace.
Eigen::MatrixXd top_two_eigenvectors(const Eigen::MatrixXd& m, std::uint64_t seed) {
  const Eigen::Index n = m.rows();
  if (n <= 400) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    return eig.eigenvectors().rightCols<2>();
  }
  constexpr Eigen::Index kBlock = 4;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd start(n, kBlock);
  for (Eigen::Index c = 0; c < kBlock; ++c)
    for (Eigen::Index i = 0; i < n; ++i) start(i, c) = gauss(rng);

  for (Eigen::Index dim = std::min<Eigen::Index>(n, 80);; dim = std::min<Eigen::Index>(n, 2 * dim)) {
    Eigen::MatrixXd basis(n, dim);
    Eigen::Index filled = 0;
    Eigen::MatrixXd block = start;
    while (filled < dim) {
      const Eigen::Index before = filled;
      for (Eigen::Index c = 0; c < block.cols() && filled < dim; ++c) {
        Eigen::VectorXd v = block.col(c);
        const double norm0 = v.norm();
        for (int pass = 0; pass < 2; ++pass)
          v -= basis.leftCols(filled) * (basis.leftCols(filled).transpose() * v);
        if (v.norm() <= 1e-10 * norm0) continue;
        basis.col(filled++) = v.normalized();
      }
      if (filled == before) break;  // invariant subspace reached
      block = m * basis.middleCols(before, filled - before);
    }
    const auto b = basis.leftCols(filled);
    const Eigen::MatrixXd mb = m * b;
    Eigen::MatrixXd proj = b.transpose() * mb;
    proj = 0.5 * (proj + proj.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(proj);
    const Eigen::MatrixXd ritz = b * eig.eigenvectors().rightCols<2>();
    const Eigen::VectorXd theta = eig.eigenvalues().tail<2>();
    double worst = 0;
    for (int c = 0; c < 2; ++c) worst = std::max(worst, (m * ritz.col(c) - theta[c] * ritz.col(c)).norm());
    if (worst < 1e-9 || filled < dim || dim == n) return ritz;
  }
}

}  // namespace

Bipartition spectral_cluster_2(const TrajectorySimilarity& similarity, std::uint64_t seed, int restarts) {
  const Eigen::MatrixXd& s = similarity.matrix;
  const Eigen::Index n = s.rows();
  if (n < 2 || s.cols() != n) throw input_error("spectral_cluster_2: need a square matrix with >= 2 rows");

  const Eigen::VectorXd degree = s.rowwise().sum();
  std::vector<Index> connected, isolated;
  for (Eigen::Index i = 0; i < n; ++i) (degree[i] < 1e-12 ? isolated : connected).push_back(i);

  Bipartition out;
  if (!isolated.empty() || connected.size() < 2) {
    out.first = connected;
    out.second = isolated;
    return out;
  }
  const auto m = static_cast<Eigen::Index>(connected.size());
  Eigen::VectorXd inv_sqrt(m);
  for (Eigen::Index a = 0; a < m; ++a) inv_sqrt[a] = 1.0 / std::sqrt(degree[connected[a]]);
  // D^-1/2 S D^-1/2 shares eigenvalues 1 - lambda with L_rw; v = D^-1/2 u
  Eigen::MatrixXd normalized(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      normalized(a, b) = inv_sqrt[a] * s(connected[a], connected[b]) * inv_sqrt[b];
  const Eigen::MatrixXd u = top_two_eigenvectors(normalized, seed);
  const Eigen::MatrixXd embedding = inv_sqrt.asDiagonal() * u;

  const auto labels = kmeans(embedding, 2, seed, restarts);
  for (Eigen::Index a = 0; a < m; ++a) (labels[a] == 0 ? out.first : out.second).push_back(connected[a]);
  return out;
}

double mean_path_length(const TrajectorySet& traj, std::span<const Index> points, FrameWindow window) {
  if (points.empty()) return 0;
  double total = 0;
  for (Index i : points)
    for (int t = window.first + 1; t <= window.last; ++t)
      total += (traj.position(t, i) - traj.position(t - 1, i)).norm();
  return total / static_cast<double>(points.size());
}

std::vector<Index> pick_moving_cluster(const TrajectorySet& traj, const std::vector<Index>& a,
                                       const std::vector<Index>& b, FrameWindow window,
                                       const Vec3& contact_centroid) {
  if (a.empty() || b.empty()) throw input_error("pick_moving_cluster: empty cluster");
  const double ma = mean_path_length(traj, a, window);
  const double mb = mean_path_length(traj, b, window);
  if (ma != mb) return ma > mb ? a : b;
  auto nearest = [&](const std::vector<Index>& c) {
    double best = std::numeric_limits<double>::infinity();
    for (Index i : c) best = std::min(best, (traj.position(window.first, i) - contact_centroid).norm());
    return best;
  };
  return nearest(a) <= nearest(b) ? a : b;
}

RigidPose umeyama_rigid_fit(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw input_error("umeyama: src/dst size mismatch");
  if (src.size() < 3) throw Error(ErrorKind::Degenerate, "umeyama: need at least 3 point pairs");
  const double n = static_cast<double>(src.size());
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;
  Mat3 cov = Mat3::Zero(), src_cov = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 ds = src[i] - mu_s;
    cov += (dst[i] - mu_d) * ds.transpose();
    src_cov += ds * ds.transpose();
  }
  cov /= n;
  const Eigen::SelfAdjointEigenSolver<Mat3> spread(src_cov);
  const Vec3 ev = spread.eigenvalues();
  if (!(ev[2] > 0) || ev[1] <= 1e-12 * ev[2])
    throw Error(ErrorKind::Degenerate, "umeyama: source points are collinear or coincident");

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 correction = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) correction(2, 2) = -1;
  RigidPose pose;
  pose.rotation = svd.matrixU() * correction * svd.matrixV().transpose();
  pose.translation = mu_d - pose.rotation * mu_s;
  return pose;
}

namespace {

std::vector<Index> inliers_of(const RigidPose& pose, std::span<const Vec3> src,
                              std::span<const Vec3> dst, double inlier_dist, double* residual_sum) {
  std::vector<Index> out;
  double sum = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double r = (pose * src[i] - dst[i]).norm();
    if (r <= inlier_dist) {
      out.push_back(static_cast<Index>(i));
      sum += r;
    }
  }
  if (residual_sum) *residual_sum = sum;
  return out;
}

RigidPose fit_subset(std::span<const Vec3> src, std::span<const Vec3> dst, const std::vector<Index>& idx) {
  std::vector<Vec3> s, d;
  s.reserve(idx.size());
  d.reserve(idx.size());
  for (Index i : idx) {
    s.push_back(src[i]);
    d.push_back(dst[i]);
  }
  return umeyama_rigid_fit(s, d);
}

}  // namespace

RansacResult ransac_rigid(std::span<const Vec3> src, std::span<const Vec3> dst, double inlier_dist,
                          int iters, std::uint64_t seed) {
  if (src.size() != dst.size()) throw input_error("ransac: src/dst size mismatch");
  if (src.size() < 3) throw Error(ErrorKind::Degenerate, "ransac: need at least 3 point pairs");
  const std::size_t n = src.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::vector<Index> best;
  double best_sum = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iters; ++it) {
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;
    const Vec3 ab = src[b] - src[a], ac = src[c] - src[a];
    if (ab.cross(ac).norm() <= 1e-12 * std::max(1.0, ab.squaredNorm() + ac.squaredNorm())) continue;
    const Vec3 s3[3] = {src[a], src[b], src[c]};
    const Vec3 d3[3] = {dst[a], dst[b], dst[c]};
    RigidPose hyp;
    try {
      hyp = umeyama_rigid_fit(s3, d3);
    } catch (const Error&) {
      continue;
    }
    double sum = 0;
    auto inl = inliers_of(hyp, src, dst, inlier_dist, &sum);
    if (inl.size() > best.size() || (inl.size() == best.size() && sum < best_sum)) {
      best = std::move(inl);
      best_sum = sum;
      if (best.size() == n) break;
    }
  }
  if (best.size() < 3) throw Error(ErrorKind::NoConsensus, "ransac: no hypothesis reached 3 inliers");

  RansacResult out;
  out.pose = fit_subset(src, dst, best);
  out.inliers = inliers_of(out.pose, src, dst, inlier_dist, nullptr);
  // refit until the inlier set settles
  for (int round = 0; round < 5 && out.inliers != best && out.inliers.size() >= 3; ++round) {
    best = out.inliers;
    out.pose = fit_subset(src, dst, best);
    out.inliers = inliers_of(out.pose, src, dst, inlier_dist, nullptr);
  }
  return out;
}

ObjectResult segment_object(const LabeledTrajectorySet& traj, const ContactEvent& event,
                            const ObjectParams& params) {
  params.validate();
  const auto& tr = traj.trajectories;
  if (event.start_frame < 0 || event.end_frame < event.start_frame ||
      static_cast<std::size_t>(event.end_frame) >= tr.num_frames())
    throw input_error("segment_object: event outside trajectory range");
  if (event.centroids.empty()) throw input_error("segment_object: event has no contact centroid");
  const FrameWindow window{event.start_frame, event.end_frame};
  const int t0 = window.first;
  const auto background = traj.indices_with(Label::Background);

  ObjectResult result;
  const Vec3 centroid = event.centroids.front();
  for (Index i : background)
    if ((tr.position(t0, i) - centroid).norm() <= params.attention_radius) result.candidates.push_back(i);
  if (result.candidates.size() < 2)
    throw Error(ErrorKind::Degenerate, "segment_object: fewer than 2 background points near the contact");

  std::vector<Index> clustered = result.candidates;
  if (params.max_candidates > 1 && clustered.size() > params.max_candidates) {
    std::mt19937_64 rng(params.seed);
    std::shuffle(clustered.begin(), clustered.end(), rng);
    clustered.resize(params.max_candidates);
    std::sort(clustered.begin(), clustered.end());
  }

  const auto sim = trajectory_similarity(tr, clustered, window, params.sigma);
  const auto parts = spectral_cluster_2(sim, params.seed, params.kmeans_restarts);
  auto to_model = [&](const std::vector<Index>& local) {
    std::vector<Index> out;
    for (Index k : local) out.push_back(clustered[k]);
    return out;
  };
  const auto first = to_model(parts.first), second = to_model(parts.second);
  if (first.empty() || second.empty()) result.initial_cluster = first.empty() ? second : first;
  else result.initial_cluster = pick_moving_cluster(tr, first, second, window, centroid);

  if (result.initial_cluster.size() < 3)
    throw Error(ErrorKind::Degenerate, "segment_object: the moving cluster has " +
                                           std::to_string(result.initial_cluster.size()) +
                                           " point(s); a rigid fit needs 3");
  std::vector<Vec3> m0;
  for (Index i : result.initial_cluster) m0.push_back(tr.position(t0, i));

  std::vector<std::size_t> counts;
  for (int t = window.first; t <= window.last; ++t) {
    RigidPose pose;
    if (t != t0) {
      std::vector<Vec3> mt;
      for (Index i : result.initial_cluster) mt.push_back(tr.position(t, i));
      pose = ransac_rigid(m0, mt, params.inlier_dist, params.ransac_iters,
                          params.seed + static_cast<std::uint64_t>(t)).pose;
    }
    result.ransac_poses.push_back({t, pose});
    std::vector<Index> inliers;
    for (Index i : background)
      if ((pose * tr.position(t0, i) - tr.position(t, i)).norm() <= params.inlier_dist) inliers.push_back(i);
    counts.push_back(inliers.size());
    result.inlier_sets.push_back(std::move(inliers));
  }

  result.segment = result.inlier_sets.front();
  for (std::size_t k = 1; k < result.inlier_sets.size(); ++k) {
    std::vector<Index> next;
    std::set_intersection(result.segment.begin(), result.segment.end(), result.inlier_sets[k].begin(),
                          result.inlier_sets[k].end(), std::back_inserter(next));
    result.segment = std::move(next);
  }
  if (result.segment.empty()) {
    std::string msg = "segment_object: inlier intersection is empty; per-frame inlier counts:";
    for (std::size_t k = 0; k < counts.size(); ++k)
      msg += " " + std::to_string(window.first + static_cast<int>(k)) + ":" + std::to_string(counts[k]);
    throw ObjectLostError(msg, counts);
  }

  std::vector<Vec3> s0;
  for (Index i : result.segment) s0.push_back(tr.position(t0, i));
  for (const auto& rp : result.ransac_poses) {
    FramePose fp{rp.frame, RigidPose::identity()};
    if (rp.frame != t0) {
      std::vector<Vec3> st;
      for (Index i : result.segment) st.push_back(tr.position(rp.frame, i));
      try {
        fp.pose = umeyama_rigid_fit(s0, st);
      } catch (const Error&) {
        fp.pose = rp.pose;  // segment too small or collinear for a refit
      }
    }
    result.poses.push_back(fp);
  }
  return result;
}

namespace {

nlohmann::json pose_json(const FramePose& fp) {
  std::vector<double> r(9), t(3);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) r[3 * a + b] = fp.pose.rotation(a, b);
    t[a] = fp.pose.translation[a];
  }
  return {{"frame", fp.frame}, {"R", r}, {"t", t}};
}

FramePose pose_from_json(const nlohmann::json& j) {
  FramePose fp;
  fp.frame = j.at("frame").get<int>();
  const auto r = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw input_error("object json: malformed pose");
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) fp.pose.rotation(a, b) = r[3 * a + b];
    fp.pose.translation[a] = t[a];
  }
  return fp;
}

}  // namespace

std::string object_to_json(const ObjectResult& result) {
  nlohmann::json poses = nlohmann::json::array(), ransac = nlohmann::json::array();
  for (const auto& p : result.poses) poses.push_back(pose_json(p));
  for (const auto& p : result.ransac_poses) ransac.push_back(pose_json(p));
  std::vector<std::size_t> counts;
  for (const auto& s : result.inlier_sets) counts.push_back(s.size());
  const nlohmann::json j = {{"segment", result.segment},
                            {"initial_cluster", result.initial_cluster},
                            {"candidates", result.candidates},
                            {"poses", poses},
                            {"ransac_poses", ransac},
                            {"inlier_counts", counts}};
  return j.dump() + "\n";
}

ObjectResult object_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ObjectResult r;
    r.segment = j.at("segment").get<std::vector<Index>>();
    r.initial_cluster = j.at("initial_cluster").get<std::vector<Index>>();
    if (j.contains("candidates")) r.candidates = j["candidates"].get<std::vector<Index>>();
    for (const auto& p : j.at("poses")) r.poses.push_back(pose_from_json(p));
    if (j.contains("ransac_poses"))
      for (const auto& p : j["ransac_poses"]) r.ransac_poses.push_back(pose_from_json(p));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("object json: ") + e.what());
  }
}

}  // namespace manipflow
