#pragma once

// Hiking saliency filter: per-pixel plane-fit normals at two scales from
// summed-area tables, the fixation point from gravity, and the DtFP / DoN /
// DoNG keep tests.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <vector>

#include "patchmap/grid.hpp"
#include "patchmap/sensing.hpp"

namespace patchmap {

struct SaliencyConfig {
  double r = 0.1;        ///< patch/foot radius, m (normal window scale)
  double l_d = 1.0;      ///< fixation offset down, m
  double l_f = 0.9;      ///< fixation offset forward, m
  double roi_radius = 0.7;   ///< DtFP ball radius, m
  double phi_d_deg = 15.3;   ///< DoN threshold (human mean + 3 sigma)
  double phi_g_deg = 34.9;   ///< DoNG threshold (human mean + 3 sigma)
};

/// M x N grid of optional unit normals (NaN where absent), oriented toward
/// the camera.
using NormalMap = Grid<Vector3d>;

inline bool has_normal(const NormalMap& m, int u, int v) {
  return std::isfinite(m.at(u, v).x());
}

enum class NormalScale : uint8_t { Full, Half };

/// Plane-fit window side in pixels at depth z: 2 r f / z.
inline double normal_window_px(double r, double focal_px, double z) {
  return 2.0 * r * focal_px / z;
}

namespace detail {

/// Summed-area tables over the nine second-order point moments plus a
/// presence count, for O(1) windowed plane fits.
struct MomentSat {
  int w = 0, h = 0;
  // channels: x y z xx yy zz xy xz yz count
  std::vector<double> acc[10];

  explicit MomentSat(const OrganizedCloud& cloud)
      : w(cloud.width()), h(cloud.height()) {
    for (auto& a : acc) a.assign(static_cast<size_t>(w + 1) * (h + 1), 0.0);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        double c[10] = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
        if (cloud.has(u, v)) {
          const Vector3d& p = cloud.point(u, v);
          c[0] = p.x();
          c[1] = p.y();
          c[2] = p.z();
          c[3] = p.x() * p.x();
          c[4] = p.y() * p.y();
          c[5] = p.z() * p.z();
          c[6] = p.x() * p.y();
          c[7] = p.x() * p.z();
          c[8] = p.y() * p.z();
          c[9] = 1.0;
        }
        const size_t i00 = static_cast<size_t>(v) * (w + 1) + u;
        const size_t i01 = i00 + 1;
        const size_t i10 = i00 + (w + 1);
        const size_t i11 = i10 + 1;
        for (int ch = 0; ch < 10; ++ch) {
          acc[ch][i11] = c[ch] + acc[ch][i01] + acc[ch][i10] - acc[ch][i00];
        }
      }
    }
  }

  /// Inclusive-rectangle sums; u0..u1, v0..v1 must be within the image.
  void window(int u0, int v0, int u1, int v1, double out[10]) const {
    const size_t a = static_cast<size_t>(v0) * (w + 1) + u0;
    const size_t b = static_cast<size_t>(v0) * (w + 1) + (u1 + 1);
    const size_t c = static_cast<size_t>(v1 + 1) * (w + 1) + u0;
    const size_t d = static_cast<size_t>(v1 + 1) * (w + 1) + (u1 + 1);
    for (int ch = 0; ch < 10; ++ch) {
      out[ch] = acc[ch][d] - acc[ch][b] - acc[ch][c] + acc[ch][a];
    }
  }
};

inline NormalMap normals_from_sat(const OrganizedCloud& cloud,
                                  const MomentSat& sat, double r,
                                  double scale) {
  const CameraIntrinsics& intr = cloud.intrinsics();
  NormalMap out(cloud.width(), cloud.height(),
                Vector3d::Constant(std::numeric_limits<double>::quiet_NaN()));
  for (int v = 0; v < cloud.height(); ++v) {
    for (int u = 0; u < cloud.width(); ++u) {
      if (!cloud.has(u, v)) continue;
      const double z = cloud.point(u, v).z();
      const double side = scale * normal_window_px(r, intr.fx, z);
      const int hw = std::max(1, static_cast<int>(std::lround(side / 2.0)));
      const int u0 = std::max(0, u - hw), u1 = std::min(cloud.width() - 1, u + hw);
      const int v0 = std::max(0, v - hw), v1 = std::min(cloud.height() - 1, v + hw);
      double m[10];
      sat.window(u0, v0, u1, v1, m);
      const double n = m[9];
      if (n < 6.0) continue;
      const Vector3d mean(m[0] / n, m[1] / n, m[2] / n);
      Matrix3d scatter;
      scatter << m[3], m[6], m[7], m[6], m[4], m[8], m[7], m[8], m[5];
      scatter -= n * mean * mean.transpose();
      Eigen::SelfAdjointEigenSolver<Matrix3d> es;
      es.computeDirect(scatter);
      Vector3d normal = es.eigenvectors().col(0);
      if (normal.dot(cloud.point(u, v)) > 0) normal = -normal;
      out.at(u, v) = normal;
    }
  }
  return out;
}

}  // namespace detail

/// Windowed plane-fit normals; the full scale uses window side 2 r f / Z(i),
/// the half scale half of that. Absent where the window holds < 6 points.
inline NormalMap estimate_normals(const OrganizedCloud& cloud, double r,
                                  NormalScale scale) {
  const detail::MomentSat sat(cloud);
  return detail::normals_from_sat(cloud, sat, r,
                                  scale == NormalScale::Full ? 1.0 : 0.5);
}

struct TwoScaleNormals {
  NormalMap coarse;  ///< window 2 r f / Z
  NormalMap fine;    ///< half window
};

/// Both scales off one set of summed-area tables.
inline TwoScaleNormals estimate_normals_two_scale(const OrganizedCloud& cloud,
                                                  double r) {
  const detail::MomentSat sat(cloud);
  return {detail::normals_from_sat(cloud, sat, r, 1.0),
          detail::normals_from_sat(cloud, sat, r, 0.5)};
}

/// Fixation point in camera frame: l_d down along gravity plus l_f forward
/// along [1 0 0]^T x g.
inline Vector3d fixation_point(const GravityDir& g, double l_d, double l_f) {
  return l_d * g.dir + l_f * Vector3d::UnitX().cross(g.dir);
}

/// Keep pixels that are inside the fixation ball (DtFP), whose fine- and
/// coarse-scale normals agree within phi_d (DoN), and whose coarse normal is
/// within phi_g of vertical (DoNG). Pixels lacking a point or either normal
/// are removed.
inline Mask saliency_filter(const OrganizedCloud& cloud, const NormalMap& coarse,
                            const NormalMap& fine, const GravityDir& g,
                            const SaliencyConfig& cfg) {
  const Vector3d fix = fixation_point(g, cfg.l_d, cfg.l_f);
  const double cos_d = std::cos(cfg.phi_d_deg * M_PI / 180.0);
  const double cos_g = std::cos(cfg.phi_g_deg * M_PI / 180.0);
  Mask mask(cloud.width(), cloud.height(), 0);
  for (int v = 0; v < cloud.height(); ++v) {
    for (int u = 0; u < cloud.width(); ++u) {
      if (!cloud.has(u, v)) continue;
      if (!has_normal(coarse, u, v) || !has_normal(fine, u, v)) continue;
      if ((cloud.point(u, v) - fix).norm() > cfg.roi_radius) continue;
      if (coarse.at(u, v).dot(fine.at(u, v)) < cos_d) continue;
      if (-coarse.at(u, v).dot(g.dir) < cos_g) continue;
      mask.at(u, v) = 1;
    }
  }
  return mask;
}

/// DoN and DoNG angles (degrees) at a pixel, for reporting.
struct SaliencyAngles {
  double don_deg = 0.0;
  double dong_deg = 0.0;
};

inline SaliencyAngles saliency_angles(const NormalMap& coarse,
                                      const NormalMap& fine, const GravityDir& g,
                                      int u, int v) {
  const auto clamp_acos = [](double c) {
    return std::acos(std::min(1.0, std::max(-1.0, c))) * 180.0 / M_PI;
  };
  SaliencyAngles a;
  a.don_deg = clamp_acos(coarse.at(u, v).dot(fine.at(u, v)));
  a.dong_deg = clamp_acos(-coarse.at(u, v).dot(g.dir));
  return a;
}

}  // namespace patchmap
