#pragma once

// Synthetic ground truth: analytic rocky terrains (sum of Gaussian bumps over
// a base plane), depth rendering through the stereo noise model, camera
// trajectories, and analytic patches for fit-recovery oracles.
//
// World frame: z up, gravity (0, 0, -1). Camera frame: x right, y down in the
// image, z forward.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "patchmap/fitting.hpp"
#include "patchmap/geometry.hpp"
#include "patchmap/grid.hpp"
#include "patchmap/patch.hpp"
#include "patchmap/rng.hpp"
#include "patchmap/sensing.hpp"

namespace patchmap {

struct GaussianBump {
  double amp = 0.1;    ///< signed height, m
  double cx = 0.0;
  double cy = 0.0;
  double width = 0.1;  ///< Gaussian sigma, m
};

/// C-infinity heightfield z(x, y) = base + sum of Gaussian bumps.
struct Terrain {
  double base = 0.0;
  std::vector<GaussianBump> bumps;

  double height(double x, double y) const {
    double z = base;
    for (const auto& b : bumps) {
      const double dx = x - b.cx, dy = y - b.cy;
      z += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
    }
    return z;
  }

  Vector2d gradient(double x, double y) const {
    Vector2d g = Vector2d::Zero();
    for (const auto& b : bumps) {
      const double dx = x - b.cx, dy = y - b.cy;
      const double s2 = b.width * b.width;
      const double e = b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
      g.x() += -dx / s2 * e;
      g.y() += -dy / s2 * e;
    }
    return g;
  }

  Eigen::Matrix2d hessian(double x, double y) const {
    Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
    for (const auto& b : bumps) {
      const double dx = x - b.cx, dy = y - b.cy;
      const double s2 = b.width * b.width;
      const double e = b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
      h(0, 0) += e * (dx * dx / (s2 * s2) - 1.0 / s2);
      h(1, 1) += e * (dy * dy / (s2 * s2) - 1.0 / s2);
      h(0, 1) += e * dx * dy / (s2 * s2);
    }
    h(1, 0) = h(0, 1);
    return h;
  }

  /// Upward unit normal.
  Vector3d normal(double x, double y) const {
    const Vector2d g = gradient(x, y);
    return Vector3d(-g.x(), -g.y(), 1.0).normalized();
  }

  /// Global bound on the gradient magnitude (for safe ray marching).
  double gradient_bound() const {
    double g = 0.0;
    for (const auto& b : bumps) g += std::abs(b.amp) / (b.width * std::sqrt(M_E));
    return g;
  }

  /// Bound on the magnitude of third derivatives, used to check where the
  /// quadratic (patch) approximation is trustworthy.
  double third_derivative_bound() const {
    double g = 0.0;
    // |d^3/dx^3 of a 1D Gaussian| <= a * 2.32 / s^3 (max of |H_3| weight)
    for (const auto& b : bumps) {
      g += 2.4 * std::abs(b.amp) / (b.width * b.width * b.width);
    }
    return g;
  }
};

/// Camera pose (world_from_camera) at `position` looking toward `target`,
/// with the image y axis as downward as the geometry allows.
inline Pose look_at_camera(const Vector3d& position, const Vector3d& target) {
  const Vector3d fwd = (target - position).normalized();
  const Vector3d down(0, 0, -1);
  Vector3d y = down - down.dot(fwd) * fwd;
  Matrix3d R;
  if (y.norm() < 1e-9) {
    // nadir view: pick x along world x
    Vector3d x = Vector3d::UnitX() - Vector3d::UnitX().dot(fwd) * fwd;
    x.normalize();
    R << x, fwd.cross(x), fwd;
  } else {
    y.normalize();
    R << y.cross(fwd), y, fwd;
  }
  return Pose(log_map(R), position);
}

/// Circular trajectory of n camera poses at the given height above the
/// terrain base, all looking at `target`.
inline std::vector<Pose> orbit_trajectory(const Vector3d& target, double radius,
                                          double height, int n) {
  std::vector<Pose> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / std::max(n, 1);
    const Vector3d pos = target + Vector3d(radius * std::cos(a),
                                           radius * std::sin(a), height);
    out.push_back(look_at_camera(pos, target));
  }
  return out;
}

/// Gravity direction in the camera frame for a world_from_camera pose.
inline GravityDir gravity_in_camera(const Pose& world_from_camera) {
  return GravityDir::from(rodrigues(world_from_camera.r).transpose() *
                          Vector3d(0, 0, -1));
}

/// Render a depth image by per-pixel ray / heightfield intersection
/// (adaptive march with a Lipschitz bound, then bisection to 1e-6 m).
/// Measurement noise follows the stereo model: the sampled ray is perturbed
/// by sigma_p and the depth passes through disparity space with sigma_m, both
/// scaled by sigma_scale. Deterministic for a fixed seed.
inline DepthImage render_depth(const Terrain& terrain, const Pose& camera,
                               const CameraIntrinsics& intr,
                               const ErrorModel& em, double sigma_scale,
                               uint64_t seed) {
  const Vector3d origin = camera.t;
  if (origin.z() <= terrain.height(origin.x(), origin.y())) {
    throw std::invalid_argument("render_depth: camera not above terrain");
  }
  const Matrix3d R = rodrigues(camera.r);
  const double grad_bound = terrain.gradient_bound();
  DepthImage depth(intr.width, intr.height, 0.0);

  const double s_max = 30.0;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      Rng rng = Rng::keyed(seed, static_cast<uint64_t>(v) * intr.width + u);
      double pu = u, pv = v;
      if (sigma_scale > 0.0 && em.sigma_p > 0.0) {
        pu += em.sigma_p * sigma_scale * rng.normal();
        pv += em.sigma_p * sigma_scale * rng.normal();
      }
      // unnormalized direction with unit forward component: the ray parameter
      // is then exactly the camera-frame depth
      const Vector3d m((pu - intr.cx) / intr.fx, (pv - intr.cy) / intr.fy, 1.0);
      const Vector3d d = R * m;
      const double lips = std::abs(d.z()) + grad_bound * d.head<2>().norm() + 1e-9;

      double s = 1e-3;
      double g_prev = origin.z() + s * d.z() -
                      terrain.height(origin.x() + s * d.x(), origin.y() + s * d.y());
      if (g_prev <= 0.0) continue;  // immediately underground; treat as miss
      double hit = -1.0;
      while (s < s_max) {
        const double step = std::max(g_prev / lips, 1e-4);
        const double s_next = s + step;
        const double g_next =
            origin.z() + s_next * d.z() -
            terrain.height(origin.x() + s_next * d.x(), origin.y() + s_next * d.y());
        if (g_next <= 0.0) {
          double lo = s, hi = s_next;
          while (hi - lo > 1e-6) {
            const double mid = 0.5 * (lo + hi);
            const double gm = origin.z() + mid * d.z() -
                              terrain.height(origin.x() + mid * d.x(),
                                             origin.y() + mid * d.y());
            (gm > 0.0 ? lo : hi) = mid;
          }
          hit = 0.5 * (lo + hi);
          break;
        }
        s = s_next;
        g_prev = g_next;
      }
      if (hit <= 0.0) continue;

      double z = hit;
      if (sigma_scale > 0.0 && em.sigma_m > 0.0) {
        const double disparity = intr.fx * intr.baseline / z;
        const double noisy = disparity + em.sigma_m * sigma_scale * rng.normal();
        if (noisy <= 0.0) continue;
        z = intr.fx * intr.baseline / noisy;
      }
      depth.at(u, v) = z;
    }
  }
  return depth;
}

/// Ground-truth patch at a terrain point: principal curvatures and frame from
/// the first/second fundamental forms of the heightfield, boundary radius r.
inline Patch analytic_patch_at(const Terrain& terrain, double x, double y,
                               double r, double flat_kappa = 0.1) {
  const double z = terrain.height(x, y);
  const Vector2d g = terrain.gradient(x, y);
  const Eigen::Matrix2d H = terrain.hessian(x, y);
  Eigen::Matrix2d I;
  I << 1 + g.x() * g.x(), g.x() * g.y(), g.x() * g.y(), 1 + g.y() * g.y();
  const Eigen::Matrix2d II = H / std::sqrt(1.0 + g.squaredNorm());
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix2d> es(II, I);
  Vector2d k(es.eigenvalues()(0), es.eigenvalues()(1));

  const Vector3d n = terrain.normal(x, y);
  const Vector3d e1(1, 0, g.x());
  const Vector3d e2(0, 1, g.y());
  const Eigen::Vector2d v = es.eigenvectors().col(0);
  Vector3d xhat = (v.x() * e1 + v.y() * e2).normalized();
  const Vector3d yhat = n.cross(xhat);
  Matrix3d R;
  R << xhat, yhat, n;
  Pose pose(log_map(R), Vector3d(x, y, z));

  const SurfaceType type = discriminate_curvature(k, flat_kappa);
  switch (type) {
    case SurfaceType::Plane:
      return Patch(SurfaceType::Plane, BoundaryType::Ellipse, Vector2d::Zero(),
                   {r, r}, pose);
    case SurfaceType::CircularParaboloid: {
      const double kk = 0.5 * (k.x() + k.y());
      return Patch(type, BoundaryType::Circle, Vector2d(kk, kk), {r},
                   detail::canonicalize_five_dof(pose));
    }
    case SurfaceType::CylindricParaboloid: {
      if (std::abs(k.x()) > std::abs(k.y())) {
        pose = detail::swap_principal_axes(pose);
        k = Vector2d(k.y(), k.x());
      }
      return Patch(type, BoundaryType::Rect, Vector2d(0.0, k.y()), {r, r}, pose);
    }
    default:
      return Patch(type, BoundaryType::Ellipse, k, {r, r}, pose);
  }
}

/// One synthetic frame stream: terrain + camera trajectory + sensor model.
struct Scenario {
  Terrain terrain;
  std::vector<Pose> trajectory;  ///< world_from_camera per frame
  CameraIntrinsics intrinsics;
  ErrorModel error_model;
  double noise_scale = 0.0;
  uint64_t seed = 0;
};

}  // namespace patchmap
