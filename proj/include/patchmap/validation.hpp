#pragma once

// Accept/reject fitted patches by residual, coverage, and curvature.

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "patchmap/patch.hpp"

namespace patchmap {

struct ValidationConfig {
  double t_r = 0.01;         ///< residual threshold, m
  double w_c = 0.01;         ///< coverage cell pitch, m
  double zeta_i = 0.8;       ///< inside-count factor
  double zeta_o = 0.2;       ///< outside-count factor
  double t_p_factor = 0.3;   ///< bad-cell budget as a fraction of N_p
  double kappa_min_t = -13.6;  ///< 1/m
  double kappa_max_t = 19.7;   ///< 1/m
};

struct ValidationReport {
  double residual = 0.0;  ///< Euclidean RMSE, m
  int bad_cells = 0;
  double n_p = 0.0;  ///< patch area in cells, A_p / w_c^2
  bool residual_ok = false;
  bool coverage_ok = false;
  bool curvature_ok = false;
  bool overall = false;
};

/// Euclidean RMSE between the points and their closest points on the
/// unbounded patch surface.
inline double residual_rmse(const std::vector<Vector3d>& points, const Patch& p) {
  if (points.empty()) throw std::invalid_argument("residual_rmse: no points");
  double ss = 0.0;
  for (const auto& q : points) {
    const double d = closest_point(q, p).distance;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(points.size()));
}

/// Worst-case point deviation (alternative residual; not used by default).
inline double residual_max(const std::vector<Vector3d>& points, const Patch& p) {
  if (points.empty()) throw std::invalid_argument("residual_max: no points");
  double worst = 0.0;
  for (const auto& q : points) worst = std::max(worst, closest_point(q, p).distance);
  return worst;
}

struct CoverageResult {
  int bad_cells = 0;
  double n_p = 0.0;
  bool ok = false;
};

/// Cell-grid coverage test. An axis-aligned grid of pitch w_c, anchored at
/// the local origin, spans the bounding box of the projected boundary. A cell
/// is bad iff I_c < (A_i/w_c^2) T_i or O_c > (1 - A_i/w_c^2) T_o, with
/// T_i = zeta_i N_e, T_o = zeta_o N_e, N_e = N / N_p, N_p = A_p / w_c^2.
/// The cell-boundary intersection area A_i is 20x20 sub-sampled.
inline CoverageResult coverage_check(const std::vector<Vector3d>& points,
                                     const Patch& patch,
                                     const ValidationConfig& cfg) {
  const double w = cfg.w_c;
  const double area = patch_area(patch);
  if (!(area > 0)) throw std::invalid_argument("coverage_check: zero-area patch");

  double bx = 0, by = 0;
  switch (patch.boundary()) {
    case BoundaryType::Ellipse:
    case BoundaryType::Rect:
      bx = patch.d()[0];
      by = patch.d()[1];
      break;
    case BoundaryType::Circle:
      bx = by = patch.d()[0];
      break;
    case BoundaryType::ConvexQuad:
      for (const auto& v : patch.quad_vertices()) {
        bx = std::max(bx, std::abs(v.x()));
        by = std::max(by, std::abs(v.y()));
      }
      break;
  }
  const int iu0 = static_cast<int>(std::floor(-bx / w));
  const int iu1 = static_cast<int>(std::floor(bx / w));
  const int iv0 = static_cast<int>(std::floor(-by / w));
  const int iv1 = static_cast<int>(std::floor(by / w));
  const int nu = iu1 - iu0 + 1, nv = iv1 - iv0 + 1;

  std::vector<int> inside(static_cast<size_t>(nu) * nv, 0);
  std::vector<int> outside(inside.size(), 0);
  for (const auto& q : points) {
    const Vector2d u = project_uv(q, patch);
    const int iu = static_cast<int>(std::floor(u.x() / w));
    const int iv = static_cast<int>(std::floor(u.y() / w));
    if (iu < iu0 || iu > iu1 || iv < iv0 || iv > iv1) continue;
    const size_t idx = static_cast<size_t>(iv - iv0) * nu + (iu - iu0);
    if (boundary_contains(u, patch) <= 0.0) ++inside[idx];
    else ++outside[idx];
  }

  CoverageResult out;
  out.n_p = area / (w * w);
  const double n_e = static_cast<double>(points.size()) / out.n_p;
  const double t_i = cfg.zeta_i * n_e;
  const double t_o = cfg.zeta_o * n_e;

  const int sub = 20;
  for (int iv = iv0; iv <= iv1; ++iv) {
    for (int iu = iu0; iu <= iu1; ++iu) {
      int hits = 0;
      for (int sv = 0; sv < sub; ++sv) {
        for (int su = 0; su < sub; ++su) {
          const Vector2d c((iu + (su + 0.5) / sub) * w, (iv + (sv + 0.5) / sub) * w);
          if (boundary_contains(c, patch) <= 0.0) ++hits;
        }
      }
      const double frac = static_cast<double>(hits) / (sub * sub);  // A_i / w_c^2
      const size_t idx = static_cast<size_t>(iv - iv0) * nu + (iu - iu0);
      if (inside[idx] < frac * t_i || outside[idx] > (1.0 - frac) * t_o) {
        ++out.bad_cells;
      }
    }
  }
  out.ok = out.bad_cells <= cfg.t_p_factor * out.n_p;
  return out;
}

/// Fail iff min curvature is below kappa_min_t or max is above kappa_max_t
/// (equality passes).
inline bool curvature_check(const Vector2d& k, const ValidationConfig& cfg) {
  return !(std::min(k.x(), k.y()) < cfg.kappa_min_t ||
           std::max(k.x(), k.y()) > cfg.kappa_max_t);
}

inline ValidationReport validate(const std::vector<Vector3d>& points,
                                 const Patch& patch,
                                 const ValidationConfig& cfg = ValidationConfig()) {
  ValidationReport rep;
  rep.residual = residual_rmse(points, patch);
  rep.residual_ok = rep.residual <= cfg.t_r;
  const CoverageResult cov = coverage_check(points, patch, cfg);
  rep.bad_cells = cov.bad_cells;
  rep.n_p = cov.n_p;
  rep.coverage_ok = cov.ok;
  rep.curvature_ok = curvature_check(patch.k(), cfg);
  rep.overall = rep.residual_ok && rep.coverage_ok && rep.curvature_ok;
  return rep;
}

}  // namespace patchmap
