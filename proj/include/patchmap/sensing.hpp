#pragma once

// Depth-image to organized-point-cloud conversion, per-point covariance from
// the two-parameter stereo error model, gravity extraction from an IMU
// quaternion, and depth-IMU extrinsic calibration.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "patchmap/geometry.hpp"
#include "patchmap/grid.hpp"

namespace patchmap {

struct CameraIntrinsics {
  double fx = 580.0;  ///< focal length, pixels
  double fy = 580.0;
  double cx = 319.5;  ///< principal point, pixels
  double cy = 239.5;
  int width = 640;    ///< M columns
  int height = 480;   ///< N rows
  double baseline = 0.075;  ///< stereo baseline, meters

  void validate() const {
    if (fx <= 0 || fy <= 0 || baseline <= 0 || width < 1 || height < 1) {
      throw std::invalid_argument("CameraIntrinsics: invalid parameters");
    }
  }
};

/// Two-parameter stereo error model: pointing std and disparity-matching std,
/// both in pixels.
struct ErrorModel {
  double sigma_p = 0.35;
  double sigma_m = 0.17;
};

/// Unit gravity direction expressed in camera frame.
struct GravityDir {
  Vector3d dir = Vector3d(0, 1, 0);

  static GravityDir from(const Vector3d& v) {
    const double n = v.norm();
    if (!(n > 1e-12)) throw std::invalid_argument("GravityDir: zero vector");
    return GravityDir{v / n};
  }
};

/// M x N grid of optional 3D points with optional per-point 3x3 covariances.
/// The grid shape is fixed by the camera intrinsics at construction.
class OrganizedCloud {
 public:
  explicit OrganizedCloud(const CameraIntrinsics& intr)
      : intr_(intr),
        pts_(static_cast<size_t>(intr.width) * intr.height,
             Vector3d::Constant(std::numeric_limits<double>::quiet_NaN())) {
    intr.validate();
  }

  int width() const { return intr_.width; }
  int height() const { return intr_.height; }
  const CameraIntrinsics& intrinsics() const { return intr_; }

  bool in_bounds(int u, int v) const {
    return u >= 0 && u < intr_.width && v >= 0 && v < intr_.height;
  }

  bool has(int u, int v) const { return std::isfinite(pts_[idx(u, v)].x()); }

  const Vector3d& point(int u, int v) const { return pts_[idx(u, v)]; }

  void set_point(int u, int v, const Vector3d& p) {
    if (!p.allFinite()) throw std::invalid_argument("set_point: non-finite");
    pts_[idx(u, v)] = p;
  }

  void clear_point(int u, int v) {
    pts_[idx(u, v)].setConstant(std::numeric_limits<double>::quiet_NaN());
  }

  bool has_covariances() const { return !cov_.empty(); }

  const Matrix3d& cov(int u, int v) const { return cov_[idx(u, v)]; }

  void set_cov(int u, int v, const Matrix3d& c) {
    if (cov_.empty()) cov_.assign(pts_.size(), Matrix3d::Zero());
    cov_[idx(u, v)] = c;
  }

  size_t present_count() const {
    size_t n = 0;
    for (const auto& p : pts_)
      if (std::isfinite(p.x())) ++n;
    return n;
  }

 private:
  size_t idx(int u, int v) const {
    return static_cast<size_t>(v) * intr_.width + u;
  }

  CameraIntrinsics intr_;
  std::vector<Vector3d> pts_;
  std::vector<Matrix3d> cov_;
};

/// Point along a unit measurement ray at the given range.
inline Vector3d ray_to_point(const Vector3d& m, double range) {
  if (!(range > 0)) throw std::invalid_argument("ray_to_point: range <= 0");
  return m * range;
}

/// Covariance of the 3D point seen at pixel (u, v) with depth z, per the
/// stereo model Sigma = J E J^T with disparity d = fx b / z. sigma_p and
/// sigma_m are standard deviations and enter E squared.
inline Matrix3d covariance_for_pixel(double u, double v, double z,
                                     const CameraIntrinsics& intr,
                                     const ErrorModel& em) {
  if (!(z > 0)) throw std::invalid_argument("covariance_for_pixel: z <= 0");
  const double d = intr.fx * intr.baseline / z;
  const double uc = u - intr.cx;
  const double vc = v - intr.cy;
  const double b = intr.baseline;
  Matrix3d J;
  J << b / d, 0, -b * uc / (d * d),
       0, b / d, -b * vc / (d * d),
       0, 0, -intr.fx * b / (d * d);
  const Vector3d E(em.sigma_p * em.sigma_p, em.sigma_p * em.sigma_p,
                   em.sigma_m * em.sigma_m);
  Matrix3d S = J * E.asDiagonal() * J.transpose();
  return 0.5 * (S + S.transpose());
}

/// Back-project a depth image to an organized cloud. Invalid depths (<= 0 or
/// non-finite) become absent points. If an error model is given, per-point
/// covariances are attached.
inline OrganizedCloud depth_to_cloud(const DepthImage& depth,
                                     const CameraIntrinsics& intr,
                                     const ErrorModel* em = nullptr) {
  if (depth.width() != intr.width || depth.height() != intr.height) {
    throw std::invalid_argument("depth_to_cloud: shape mismatch");
  }
  OrganizedCloud cloud(intr);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const double z = depth.at(u, v);
      if (!std::isfinite(z) || z <= 0) continue;
      cloud.set_point(u, v, Vector3d((u - intr.cx) / intr.fx * z,
                                     (v - intr.cy) / intr.fy * z, z));
      if (em) cloud.set_cov(u, v, covariance_for_pixel(u, v, z, intr, *em));
    }
  }
  return cloud;
}

/// Gravity direction in camera frame from an IMU orientation quaternion
/// (IMU-to-world, w x y z) and the IMU-to-camera extrinsic rotation.
/// World down is +z in the IMU world frame.
inline GravityDir gravity_from_quaternion(const Eigen::Quaterniond& q,
                                          const Matrix3d& extrinsic) {
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument("gravity_from_quaternion: non-unit quaternion");
  }
  const Vector3d down_world(0, 0, 1);
  const Vector3d down_imu = q.normalized().toRotationMatrix().transpose() * down_world;
  return GravityDir::from(extrinsic * down_imu);
}

/// Orthogonal Procrustes: rotation R* minimizing sum ||R g_imu - g_cam||^2
/// over paired unit gravity observations. Needs at least two non-parallel
/// pairs; otherwise the rotation about the common axis is unobservable.
inline Matrix3d calibrate_imu_to_camera(
    const std::vector<std::pair<Vector3d, Vector3d>>& pairs) {
  if (pairs.size() < 2) {
    throw std::invalid_argument("calibrate_imu_to_camera: need >= 2 pairs");
  }
  Matrix3d H = Matrix3d::Zero();
  for (const auto& [g_imu, g_cam] : pairs) {
    H += g_cam.normalized() * g_imu.normalized().transpose();
  }
  Eigen::JacobiSVD<Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(1) <= 1e-9 * std::max(sv(0), 1.0)) {
    throw std::invalid_argument(
        "calibrate_imu_to_camera: degenerate geometry (pairs parallel)");
  }
  Matrix3d D = Matrix3d::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

/// Discontinuity-preserving bilateral filter on the depth channel; x and y are
/// re-projected through the pixel rays. Window is square of the given size.
inline OrganizedCloud bilateral_filter(const OrganizedCloud& cloud,
                                       double sigma_px = 3.0,
                                       double sigma_z = 0.03, int window = 7) {
  const CameraIntrinsics& intr = cloud.intrinsics();
  OrganizedCloud out(intr);
  const int hw = window / 2;
  for (int v = 0; v < cloud.height(); ++v) {
    for (int u = 0; u < cloud.width(); ++u) {
      if (!cloud.has(u, v)) continue;
      const double z0 = cloud.point(u, v).z();
      double wsum = 0.0, zsum = 0.0;
      for (int dv = -hw; dv <= hw; ++dv) {
        for (int du = -hw; du <= hw; ++du) {
          const int uu = u + du, vv = v + dv;
          if (!cloud.in_bounds(uu, vv) || !cloud.has(uu, vv)) continue;
          const double z = cloud.point(uu, vv).z();
          const double w =
              std::exp(-(du * du + dv * dv) / (2.0 * sigma_px * sigma_px)) *
              std::exp(-(z - z0) * (z - z0) / (2.0 * sigma_z * sigma_z));
          wsum += w;
          zsum += w * z;
        }
      }
      const double z = zsum / wsum;
      out.set_point(u, v, Vector3d((u - intr.cx) / intr.fx * z,
                                   (v - intr.cy) / intr.fy * z, z));
      if (cloud.has_covariances()) out.set_cov(u, v, cloud.cov(u, v));
    }
  }
  return out;
}

/// 2x2 median-filter downsample. Cells with fewer than two present points
/// become absent; median of an even count is the average of the middle pair.
/// Covariances, when present on the input, are recomputed from the error
/// model at the downsampled pixel.
inline OrganizedCloud median_downsample_2x2(const OrganizedCloud& cloud,
                                            const ErrorModel* em = nullptr) {
  const CameraIntrinsics& fi = cloud.intrinsics();
  CameraIntrinsics half = fi;
  half.width = fi.width / 2;
  half.height = fi.height / 2;
  half.fx = fi.fx / 2.0;
  half.fy = fi.fy / 2.0;
  half.cx = (fi.cx + 0.5) / 2.0 - 0.5;
  half.cy = (fi.cy + 0.5) / 2.0 - 0.5;
  OrganizedCloud out(half);
  for (int v = 0; v < half.height; ++v) {
    for (int u = 0; u < half.width; ++u) {
      double zs[4];
      int n = 0;
      for (int dv = 0; dv < 2; ++dv) {
        for (int du = 0; du < 2; ++du) {
          const int uu = 2 * u + du, vv = 2 * v + dv;
          if (cloud.has(uu, vv)) zs[n++] = cloud.point(uu, vv).z();
        }
      }
      if (n < 2) continue;
      std::sort(zs, zs + n);
      const double z = (n % 2 == 1) ? zs[n / 2] : 0.5 * (zs[n / 2 - 1] + zs[n / 2]);
      out.set_point(u, v, Vector3d((u - half.cx) / half.fx * z,
                                   (v - half.cy) / half.fy * z, z));
      if (em) out.set_cov(u, v, covariance_for_pixel(u, v, z, half, *em));
    }
  }
  return out;
}

}  // namespace patchmap
