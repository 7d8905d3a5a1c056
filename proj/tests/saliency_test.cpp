#include "patchmap/saliency.hpp"

#include <gtest/gtest.h>

#include "patchmap/synth.hpp"
#include "test_util.hpp"

namespace patchmap {
namespace {

CameraIntrinsics cam_intr(int w, int h, double f) {
  CameraIntrinsics intr;
  intr.width = w;
  intr.height = h;
  intr.fx = intr.fy = f;
  intr.cx = (w - 1) / 2.0;
  intr.cy = (h - 1) / 2.0;
  return intr;
}

/// Camera-frame cloud of the height surface z_cam = f(x_cam, y_cam).
template <typename F>
OrganizedCloud cloud_from_depth_fn(const CameraIntrinsics& intr, F&& depth_of) {
  OrganizedCloud cloud(intr);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      // solve z from the pinhole relation x = (u-cx)/fx * z iteratively; the
      // surfaces used in tests are graphs over (x, y) with mild slopes
      double z = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double x = (u - intr.cx) / intr.fx * z;
        const double y = (v - intr.cy) / intr.fy * z;
        const double zn = depth_of(x, y);
        if (!std::isfinite(zn) || zn <= 0) { z = -1; break; }
        if (std::abs(zn - z) < 1e-12) { z = zn; break; }
        z = zn;
      }
      if (z > 0) {
        cloud.set_point(u, v, Vector3d((u - intr.cx) / intr.fx * z,
                                       (v - intr.cy) / intr.fy * z, z));
      }
    }
  }
  return cloud;
}

TEST(Normals, FlatSceneAllStraight) {
  const CameraIntrinsics intr = cam_intr(96, 72, 96.0);
  const auto cloud = cloud_from_depth_fn(intr, [](double, double) { return 1.0; });
  const NormalMap nm = estimate_normals(cloud, 0.1, NormalScale::Full);
  int checked = 0;
  for (int v = 0; v < intr.height; v += 3) {
    for (int u = 0; u < intr.width; u += 3) {
      if (!has_normal(nm, u, v)) continue;
      EXPECT_LT(test::angle_between(nm.at(u, v), Vector3d(0, 0, -1)),
                0.5 * M_PI / 180.0);
      ++checked;
    }
  }
  EXPECT_GT(checked, 500);
}

TEST(Normals, SphereMatchesAnalytic) {
  const CameraIntrinsics intr = cam_intr(128, 96, 160.0);
  const double R = 0.5, zc = 1.5;
  const auto cloud = cloud_from_depth_fn(intr, [&](double x, double y) {
    const double rho2 = x * x + y * y;
    if (rho2 > 0.35 * R * R) return -1.0;  // keep away from the silhouette
    return zc - std::sqrt(R * R - rho2);
  });
  const NormalMap nm = estimate_normals(cloud, 0.04, NormalScale::Full);
  int checked = 0;
  for (int v = 8; v < intr.height - 8; v += 4) {
    for (int u = 8; u < intr.width - 8; u += 4) {
      if (!cloud.has(u, v) || !has_normal(nm, u, v)) continue;
      const Vector3d p = cloud.point(u, v);
      // stay a full window inside the rendered cap so the fit is unclipped
      if (p.head<2>().squaredNorm() > 0.15 * R * R) continue;
      const Vector3d analytic = (p - Vector3d(0, 0, zc)).normalized();
      EXPECT_LT(test::angle_between(nm.at(u, v), analytic), 3.0 * M_PI / 180.0);
      ++checked;
    }
  }
  EXPECT_GT(checked, 150);
}

TEST(Normals, WindowSizeFormula) {
  EXPECT_NEAR(normal_window_px(0.1, 580.0, 1.0), 116.0, 1e-12);
  EXPECT_NEAR(normal_window_px(0.05, 290.0, 2.0), 14.5, 1e-12);
}

TEST(Fixation, DirectFormula) {
  const GravityDir g{Vector3d(0, 1, 0)};
  EXPECT_TRUE(fixation_point(g, 1.0, 2.0).isApprox(Vector3d(0, 1, 2), 1e-12));
  EXPECT_TRUE(fixation_point(g, 0.7, 0.0).isApprox(Vector3d(0, 0.7, 0), 1e-12));
}

TEST(Fixation, LiesInGravityForwardPlane) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    Vector3d gv(rng.normal(), rng.normal(), rng.normal());
    const GravityDir g = GravityDir::from(gv);
    const Vector3d f = fixation_point(g, 1.0, 0.9);
    const Vector3d fwd = Vector3d::UnitX().cross(g.dir);
    const Vector3d normal = g.dir.cross(fwd);
    EXPECT_LT(std::abs(f.dot(normal)), 1e-12);
  }
}

TEST(Filter, HorizontalPlaneInRoiAllPass) {
  // nadir view of a flat floor 1 m below; gravity along +z camera
  const CameraIntrinsics intr = cam_intr(96, 72, 60.0);
  const auto cloud = cloud_from_depth_fn(intr, [](double, double) { return 1.0; });
  const auto ns = estimate_normals_two_scale(cloud, 0.1);
  const GravityDir g{Vector3d(0, 0, 1)};
  SaliencyConfig cfg;
  cfg.l_d = 1.0;
  cfg.l_f = 0.0;   // fixation at the floor point straight below
  cfg.roi_radius = 0.5;
  const Mask mask = saliency_filter(cloud, ns.coarse, ns.fine, g, cfg);
  const Vector3d fix = fixation_point(g, cfg.l_d, cfg.l_f);
  int roi = 0, salient = 0, missing = 0;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      if (!cloud.has(u, v)) continue;
      if ((cloud.point(u, v) - fix).norm() > cfg.roi_radius) {
        EXPECT_EQ(mask.at(u, v), 0);
        continue;
      }
      if (!has_normal(ns.coarse, u, v) || !has_normal(ns.fine, u, v)) {
        ++missing;
        continue;
      }
      ++roi;
      salient += mask.at(u, v);
    }
  }
  EXPECT_EQ(missing, 0);
  EXPECT_GT(roi, 1000);
  EXPECT_EQ(salient, roi);  // on a noiseless plane the mask is the ROI mask
}

TEST(Filter, SteepRampFailsDoNG) {
  // 45 degree ramp fills the view; gravity along +z camera (nadir look)
  const CameraIntrinsics intr = cam_intr(96, 72, 96.0);
  const auto cloud =
      cloud_from_depth_fn(intr, [](double x, double) { return 1.0 + x; });
  const auto ns = estimate_normals_two_scale(cloud, 0.1);
  const GravityDir g{Vector3d(0, 0, 1)};
  SaliencyConfig cfg;
  cfg.l_d = 1.0;
  cfg.l_f = 0.0;
  cfg.roi_radius = 10.0;  // isolate the DoNG test
  const Mask mask = saliency_filter(cloud, ns.coarse, ns.fine, g, cfg);
  int salient = 0;
  for (const auto& m : mask.data()) salient += m;
  EXPECT_EQ(salient, 0);  // 45 > 34.9
}

TEST(Filter, RidgeCreaseFailsDoN) {
  // ridge along camera y: two 60-degree faces meeting under the camera
  const CameraIntrinsics intr = cam_intr(128, 96, 128.0);
  const double slope = std::tan(60.0 * M_PI / 180.0);
  const auto cloud = cloud_from_depth_fn(
      intr, [&](double x, double) { return 1.0 + slope * std::abs(x); });
  const auto ns = estimate_normals_two_scale(cloud, 0.08);
  const GravityDir g{Vector3d(0, 0, 1)};
  SaliencyConfig cfg;
  cfg.roi_radius = 100.0;
  cfg.phi_g_deg = 89.0;  // isolate the DoN test
  cfg.l_f = 0.0;
  // windowed plane fits smooth both scales, so the scale disagreement over
  // this dihedral peaks near 6 degrees; threshold between that and the flat
  // flanks (DoN = 0)
  cfg.phi_d_deg = 4.0;
  const Mask mask = saliency_filter(cloud, ns.coarse, ns.fine, g, cfg);

  int crease_failed = 0, flank_pass = 0, flank_total = 0;
  for (int v = 10; v < intr.height - 10; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      if (!cloud.has(u, v) || !has_normal(ns.coarse, u, v)) continue;
      const double x = cloud.point(u, v).x();
      const double z = cloud.point(u, v).z();
      const double win_m = normal_window_px(0.08, intr.fx, z) * z / intr.fx;
      // the discrepancy between scales peaks where the fine window has left
      // the crease but the coarse window still straddles it
      if (std::abs(x) < 0.4 * win_m && mask.at(u, v) == 0) ++crease_failed;
      if (std::abs(x) > 1.2 * win_m) {
        ++flank_total;
        flank_pass += mask.at(u, v);
      }
    }
  }
  EXPECT_GT(crease_failed, 20);
  ASSERT_GT(flank_total, 200);
  EXPECT_EQ(flank_pass, flank_total);
}

TEST(Filter, MonotoneInThresholds) {
  Terrain t;
  t.bumps = {{0.12, 0.1, 0, 0.12}, {-0.06, -0.15, 0.1, 0.1}, {0.09, 0, -0.2, 0.15}};
  const CameraIntrinsics intr = cam_intr(96, 72, 96.0);
  const Pose cam = look_at_camera(Vector3d(0, -0.8, 1.0), Vector3d(0, 0, 0));
  const DepthImage depth = render_depth(t, cam, intr, ErrorModel{}, 0.5, 5);
  const OrganizedCloud cloud = depth_to_cloud(depth, intr);
  const auto ns = estimate_normals_two_scale(cloud, 0.08);
  const GravityDir g = gravity_in_camera(cam);

  SaliencyConfig base;
  base.l_d = 1.2;
  base.l_f = 0.4;
  const Mask m0 = saliency_filter(cloud, ns.coarse, ns.fine, g, base);
  for (int variant = 0; variant < 3; ++variant) {
    SaliencyConfig larger = base;
    if (variant == 0) larger.phi_d_deg += 20.0;
    if (variant == 1) larger.phi_g_deg += 20.0;
    if (variant == 2) larger.roi_radius += 0.5;
    const Mask m1 = saliency_filter(cloud, ns.coarse, ns.fine, g, larger);
    for (size_t i = 0; i < m0.data().size(); ++i) {
      EXPECT_GE(m1.data()[i], m0.data()[i]);
    }
  }
}

TEST(Filter, DongInvariantUnderJointRotation) {
  const CameraIntrinsics intr = cam_intr(64, 48, 64.0);
  const auto cloud = cloud_from_depth_fn(
      intr, [](double x, double y) { return 1.0 + 0.25 * x + 0.1 * y; });
  const Matrix3d R = rodrigues(RotVec(0.3, -0.2, 0.5));
  OrganizedCloud rotated(intr);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      if (cloud.has(u, v)) rotated.set_point(u, v, R * cloud.point(u, v));
    }
  }
  const GravityDir g{Vector3d(0, 0, 1)};
  const GravityDir g_rot{R * g.dir};
  const auto n0 = estimate_normals_two_scale(cloud, 0.1);
  const auto n1 = estimate_normals_two_scale(rotated, 0.1);
  SaliencyConfig cfg;
  cfg.roi_radius = 1e6;   // DtFP off (fixation is frame-dependent)
  cfg.phi_d_deg = 89.9;   // DoN effectively off
  const Mask m0 = saliency_filter(cloud, n0.coarse, n0.fine, g, cfg);
  const Mask m1 = saliency_filter(rotated, n1.coarse, n1.fine, g_rot, cfg);
  EXPECT_EQ(m0.data(), m1.data());
}

}  // namespace
}  // namespace patchmap
