#include "patchmap/synth.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace patchmap {
namespace {

CameraIntrinsics tiny_intr(int w = 64, int h = 48, double f = 60.0) {
  CameraIntrinsics intr;
  intr.width = w;
  intr.height = h;
  intr.fx = intr.fy = f;
  intr.cx = (w - 1) / 2.0;
  intr.cy = (h - 1) / 2.0;
  return intr;
}

Pose nadir_camera(double height) {
  return look_at_camera(Vector3d(0, 0, height), Vector3d(0, 0, 0));
}

TEST(Render, FlatTerrainNadirConstantDepth) {
  Terrain flat;
  const CameraIntrinsics intr = tiny_intr();
  const DepthImage depth =
      render_depth(flat, nadir_camera(1.0), intr, ErrorModel{}, 0.0, 1);
  for (int v = 0; v < intr.height; v += 5) {
    for (int u = 0; u < intr.width; u += 5) {
      EXPECT_NEAR(depth.at(u, v), 1.0, 1e-6);
    }
  }
}

TEST(Render, CloudPointsLieOnTerrain) {
  Terrain t;
  t.bumps = {{0.15, 0.1, 0.0, 0.15}, {-0.08, -0.2, 0.1, 0.2}};
  const CameraIntrinsics intr = tiny_intr(80, 60, 80.0);
  const Pose cam = nadir_camera(1.2);
  const DepthImage depth = render_depth(t, cam, intr, ErrorModel{}, 0.0, 1);
  const OrganizedCloud cloud = depth_to_cloud(depth, intr);
  ASSERT_GT(cloud.present_count(), 1000u);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      if (!cloud.has(u, v)) continue;
      const Vector3d w = xform_fwd(cloud.point(u, v), cam);
      EXPECT_LT(std::abs(w.z() - t.height(w.x(), w.y())), 1e-5);
    }
  }
}

TEST(Render, DeterministicPerSeed) {
  Terrain t;
  t.bumps = {{0.1, 0, 0, 0.12}};
  const CameraIntrinsics intr = tiny_intr();
  const DepthImage a = render_depth(t, nadir_camera(1.0), intr, ErrorModel{}, 1.0, 42);
  const DepthImage b = render_depth(t, nadir_camera(1.0), intr, ErrorModel{}, 1.0, 42);
  const DepthImage c = render_depth(t, nadir_camera(1.0), intr, ErrorModel{}, 1.0, 43);
  EXPECT_EQ(a.data(), b.data());
  EXPECT_NE(a.data(), c.data());
}

TEST(Render, DepthVarianceMatchesErrorModel) {
  Terrain flat;
  CameraIntrinsics intr = tiny_intr(4, 4, 580.0);
  intr.cx = 1.5;
  intr.cy = 1.5;
  const ErrorModel em;
  const Pose cam = nadir_camera(1.0);
  const int n = 10000;
  std::vector<double> zs;
  zs.reserve(n);
  for (int i = 0; i < n; ++i) {
    const DepthImage d = render_depth(flat, cam, intr, em, 1.0, 1000 + i);
    zs.push_back(d.at(1, 1));
  }
  double mean = 0;
  for (double z : zs) mean += z;
  mean /= n;
  double var = 0;
  for (double z : zs) var += (z - mean) * (z - mean);
  var /= (n - 1);
  const Matrix3d pred = covariance_for_pixel(1, 1, 1.0, intr, em);
  EXPECT_NEAR(var / pred(2, 2), 1.0, 0.10);
}

TEST(AnalyticPatch, FlatBaseIsPlane) {
  Terrain flat;
  const Patch p = analytic_patch_at(flat, 0.3, -0.2, 0.1);
  EXPECT_EQ(p.surface(), SurfaceType::Plane);
  EXPECT_EQ(p.k().norm(), 0.0);
  EXPECT_NEAR(p.pose().t.z(), 0.0, 1e-12);
}

TEST(AnalyticPatch, BumpApexCurvature) {
  Terrain t;
  const double a = 0.08, s = 0.12;
  t.bumps = {{a, 0, 0, s}};
  const Patch p = analytic_patch_at(t, 0, 0, 0.05);
  // at the apex the gradient vanishes and both curvatures are -a/s^2
  EXPECT_NEAR(p.k().x(), -a / (s * s), 1e-9);
  EXPECT_NEAR(p.k().y(), -a / (s * s), 1e-9);
  EXPECT_EQ(p.surface(), SurfaceType::CircularParaboloid);

  // finite-difference cross-check of the Hessian-derived curvature
  const double h = 1e-5;
  const double fd_kxx =
      (t.height(h, 0) - 2 * t.height(0, 0) + t.height(-h, 0)) / (h * h);
  EXPECT_NEAR(p.k().x(), fd_kxx, 1e-4);
}

TEST(AnalyticPatch, SaddleBetweenBumps) {
  Terrain t;
  t.bumps = {{0.1, -0.15, 0, 0.1}, {0.1, 0.15, 0, 0.1}};
  const Patch p = analytic_patch_at(t, 0, 0, 0.05);
  EXPECT_LT(p.kappa_min(), 0.0);
  EXPECT_GT(p.kappa_max(), 0.0);
  EXPECT_EQ(p.surface(), SurfaceType::HyperbolicParaboloid);
}

TEST(AnalyticPatch, OffApexMatchesFiniteDifferenceNormal) {
  Terrain t;
  t.bumps = {{0.12, 0, 0, 0.15}};
  const double x = 0.08, y = -0.05;
  const Patch p = analytic_patch_at(t, x, y, 0.05);
  EXPECT_LT(test::angle_between(p.z_axis(), t.normal(x, y)), 1e-12);
  // the patch apex sits on the surface
  EXPECT_NEAR(p.pose().t.z(), t.height(x, y), 1e-12);
}

// Render -> cloud -> fit recovers the analytic curvatures where the cubic
// terrain terms are negligible relative to the quadratic ones.
TEST(RenderFitLoop, RecoversAnalyticCurvature) {
  Terrain t;
  const double a = 0.10, s = 0.18;
  t.bumps = {{a, 0, 0, s}};
  const CameraIntrinsics intr = tiny_intr(160, 120, 160.0);
  const Pose cam = nadir_camera(1.0);
  const DepthImage depth = render_depth(t, cam, intr, ErrorModel{}, 0.0, 7);
  const OrganizedCloud cloud = depth_to_cloud(depth, intr);

  // gather a neighborhood around the apex pixel, in world frame
  const double r = 0.06;
  std::vector<Vector3d> pts;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      if (!cloud.has(u, v)) continue;
      const Vector3d w = xform_fwd(cloud.point(u, v), cam);
      if (w.head<2>().norm() <= r) pts.push_back(w);
    }
  }
  ASSERT_GT(pts.size(), 100u);

  FitConfig cfg;
  cfg.viewpoint = cam.t;
  const FitResult fit = fit_patch(pts, {}, cfg);
  const Patch truth = analytic_patch_at(t, 0, 0, r);
  const double kappa = truth.k().x();
  EXPECT_EQ(fit.patch.surface(), SurfaceType::CircularParaboloid);
  EXPECT_NEAR(fit.patch.k().x(), kappa, 0.05 * std::abs(kappa));
  EXPECT_NEAR(fit.patch.k().y(), kappa, 0.05 * std::abs(kappa));
}

TEST(Trajectory, OrbitLooksAtTarget) {
  const auto traj = orbit_trajectory(Vector3d(0.5, -0.5, 0), 1.0, 1.2, 8);
  ASSERT_EQ(traj.size(), 8u);
  for (const auto& pose : traj) {
    const Vector3d fwd = rodrigues(pose.r).col(2);
    const Vector3d to_target = (Vector3d(0.5, -0.5, 0) - pose.t).normalized();
    EXPECT_LT(test::angle_between(fwd, to_target), 1e-9);
    // y axis points downward-ish
    EXPECT_GT(rodrigues(pose.r).col(1).dot(Vector3d(0, 0, -1)), 0.0);
  }
}

TEST(Gravity, CameraFrameGravityIsUnit) {
  const Pose cam = look_at_camera(Vector3d(1, 2, 1.5), Vector3d(0, 0, 0));
  const GravityDir g = gravity_in_camera(cam);
  EXPECT_NEAR(g.dir.norm(), 1.0, 1e-12);
  // gravity must have a positive component along camera y (down in image)
  EXPECT_GT(g.dir.y(), 0.0);
}

}  // namespace
}  // namespace patchmap
