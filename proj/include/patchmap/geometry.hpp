#pragma once

// Rotation/pose algebra on rotation vectors (exponential map) and
// first-order uncertainty propagation through pose chains.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace patchmap {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Rotation vector: axis * angle, radians.
using RotVec = Eigen::Vector3d;

/// 6x6 covariance over pose parameters (r, t).
using PoseCov = Eigen::Matrix<double, 6, 6>;

inline Matrix3d skew(const Vector3d& v) {
  Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Wrap a rotation vector so that its magnitude is at most pi.
inline RotVec canonical_rotvec(const RotVec& r) {
  double theta = r.norm();
  if (theta <= M_PI) return r;
  const double two_pi = 2.0 * M_PI;
  double wrapped = std::fmod(theta, two_pi);
  if (wrapped > M_PI) wrapped -= two_pi;  // in (-pi, pi]
  return r * (wrapped / theta);
}

/// Rodrigues' formula for the exponential map R(r) = I + [r]x a + [r]x^2 b.
/// a = sin(theta)/theta and b = (1-cos(theta))/theta^2 switch to 4th-order
/// Taylor series below theta = 1e-6.
inline Matrix3d rodrigues(const RotVec& r) {
  const double theta2 = r.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-6) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Matrix3d k = skew(r);
  return Matrix3d::Identity() + a * k + b * k * k;
}

/// Inverse of rodrigues(). Input must be orthonormal (det +1); the returned
/// vector has magnitude <= pi. Uses quaternion extraction with the
/// largest-diagonal branch rule, which stays well conditioned at theta = pi.
inline RotVec log_map(const Matrix3d& R) {
  if ((R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-7 ||
      R.determinant() < 0.0) {
    throw std::invalid_argument("log_map: input is not a rotation matrix");
  }
  double w, x, y, z;
  const double tr = R.trace();
  if (tr >= R(0, 0) && tr >= R(1, 1) && tr >= R(2, 2)) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    w = 0.25 * s;
    x = (R(2, 1) - R(1, 2)) / s;
    y = (R(0, 2) - R(2, 0)) / s;
    z = (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) >= R(1, 1) && R(0, 0) >= R(2, 2)) {
    const double s = std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2)) * 2.0;
    w = (R(2, 1) - R(1, 2)) / s;
    x = 0.25 * s;
    y = (R(0, 1) + R(1, 0)) / s;
    z = (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) >= R(2, 2)) {
    const double s = std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2)) * 2.0;
    w = (R(0, 2) - R(2, 0)) / s;
    x = (R(0, 1) + R(1, 0)) / s;
    y = 0.25 * s;
    z = (R(1, 2) + R(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1)) * 2.0;
    w = (R(1, 0) - R(0, 1)) / s;
    x = (R(0, 2) + R(2, 0)) / s;
    y = (R(1, 2) + R(2, 1)) / s;
    z = 0.25 * s;
  }
  if (w < 0) {  // canonical sign keeps the angle in [0, pi]
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  const Vector3d v(x, y, z);
  const double vn = v.norm();
  if (vn < 1e-9) return 2.0 * v;
  return v * (2.0 * std::atan2(vn, w) / vn);
}

/// Rigid-body pose: rotation vector + translation, local frame in world.
struct Pose {
  RotVec r = RotVec::Zero();
  Vector3d t = Vector3d::Zero();

  Pose() = default;
  Pose(const RotVec& r_, const Vector3d& t_) : r(r_), t(t_) {}
  static Pose Identity() { return Pose(); }
  Matrix3d rotation() const { return rodrigues(r); }
};

/// q_w = R(r) q_l + t
inline Vector3d xform_fwd(const Vector3d& q_l, const Pose& pose) {
  return rodrigues(pose.r) * q_l + pose.t;
}

/// q_l = R(r)^T (q_w - t)
inline Vector3d xform_rev(const Vector3d& q_w, const Pose& pose) {
  return rodrigues(pose.r).transpose() * (q_w - pose.t);
}

/// (r, t)^-1 = (-r, -R(r)^T t)
inline Pose pose_inverse(const Pose& pose) {
  return Pose(-pose.r, -(rodrigues(pose.r).transpose() * pose.t));
}

/// Composition a * b: xform_fwd(q, compose(a, b)) == xform_fwd(xform_fwd(q, b), a).
inline Pose pose_compose(const Pose& a, const Pose& b) {
  const Matrix3d Ra = rodrigues(a.r);
  return Pose(log_map(Ra * rodrigues(b.r)), Ra * b.t + a.t);
}

/// Pose that rotates unit vector `from` onto unit vector `to` by the minimal
/// rotation (axis perpendicular to both, so e.g. z->n gives r_z = 0).
inline RotVec minimal_rotation(const Vector3d& from, const Vector3d& to) {
  const Vector3d f = from.normalized();
  const Vector3d g = to.normalized();
  const Vector3d axis = f.cross(g);
  const double s = axis.norm();
  const double c = f.dot(g);
  if (s < 1e-12) {
    if (c > 0.0) return RotVec::Zero();
    // Antiparallel: pick any perpendicular axis.
    Vector3d perp = f.cross(Vector3d::UnitX());
    if (perp.norm() < 1e-6) perp = f.cross(Vector3d::UnitY());
    return perp.normalized() * M_PI;
  }
  return (axis / s) * std::atan2(s, c);
}

namespace detail {

inline Vector6d pose_to_vec(const Pose& p) {
  Vector6d v;
  v << p.r, p.t;
  return v;
}

inline Pose vec_to_pose(const Vector6d& v) {
  return Pose(v.head<3>(), v.tail<3>());
}

inline Pose compose_chain(const std::vector<Pose>& poses) {
  Pose acc = poses.front();
  for (size_t i = 1; i < poses.size(); ++i) acc = pose_compose(acc, poses[i]);
  return acc;
}

}  // namespace detail

/// First-order covariance of a pose chain: Sigma_c = J_c diag(S_n..S_1) J_c^T.
/// The chain Jacobian is evaluated by central finite differences (step 1e-6)
/// on the composed (r, t) parameters. poses[0] is the outermost link.
inline PoseCov propagate_chain_cov(const std::vector<Pose>& poses,
                                   const std::vector<PoseCov>& covs) {
  if (poses.empty() || poses.size() != covs.size()) {
    throw std::invalid_argument("propagate_chain_cov: dimension mismatch");
  }
  const size_t n = poses.size();
  const double h = 1e-6;
  Eigen::MatrixXd jac(6, 6 * n);
  std::vector<Pose> work = poses;
  for (size_t link = 0; link < n; ++link) {
    const Vector6d base = detail::pose_to_vec(poses[link]);
    for (int j = 0; j < 6; ++j) {
      Vector6d v = base;
      v[j] = base[j] + h;
      work[link] = detail::vec_to_pose(v);
      const Vector6d fwd = detail::pose_to_vec(detail::compose_chain(work));
      v[j] = base[j] - h;
      work[link] = detail::vec_to_pose(v);
      const Vector6d bwd = detail::pose_to_vec(detail::compose_chain(work));
      jac.col(6 * link + j) = (fwd - bwd) / (2.0 * h);
    }
    work[link] = poses[link];
  }
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(6 * n, 6 * n);
  for (size_t link = 0; link < n; ++link) {
    big.block<6, 6>(6 * link, 6 * link) = covs[link];
  }
  PoseCov out = jac * big * jac.transpose();
  return 0.5 * (out + out.transpose());  // enforce exact symmetry
}

}  // namespace patchmap
