#pragma once

// The moving local volume, seed selection over its xz grid, backprojection
// neighborhood search, per-frame map updates (saliency -> seeds ->
// neighborhoods -> fit -> validate), and five-test patch matching.

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "patchmap/fitting.hpp"
#include "patchmap/geometry.hpp"
#include "patchmap/patch.hpp"
#include "patchmap/rng.hpp"
#include "patchmap/saliency.hpp"
#include "patchmap/sensing.hpp"
#include "patchmap/validation.hpp"

namespace patchmap {

/// Volume moving policy: recenter when the camera strays from its nominal
/// volume-relative pose by more than c_d meters or c_a degrees.
struct RemapPolicy {
  double c_d = 0.3;
  double c_a_deg = 15.0;
  double d_cp = 0.5;  ///< drop patches farther than this behind the camera
  bool drop_behind = true;
};

/// Gravity-aligned cubic workspace, origin at the cube center, y up.
/// The xz plane (horizontal) carries a V_g x V_g seed/patch grid.
struct Volume {
  double size = 3.0;
  int v_g = 8;
  Pose world_from_volume;
  RemapPolicy policy;

  double cell_pitch() const { return size / v_g; }

  bool contains(const Vector3d& p_vol) const {
    return p_vol.cwiseAbs().maxCoeff() <= size / 2.0;
  }

  /// Row-major cell index over (x, z), or -1 outside the grid.
  int cell_of(double x, double z) const {
    const int ix = static_cast<int>(std::floor((x + size / 2.0) / cell_pitch()));
    const int iz = static_cast<int>(std::floor((z + size / 2.0) / cell_pitch()));
    if (ix < 0 || ix >= v_g || iz < 0 || iz >= v_g) return -1;
    return iz * v_g + ix;
  }

  Vector2d cell_center(int index) const {
    const int iz = index / v_g, ix = index % v_g;
    return Vector2d(-size / 2.0 + (ix + 0.5) * cell_pitch(),
                    -size / 2.0 + (iz + 0.5) * cell_pitch());
  }
};

namespace detail {

/// Gravity-aligned volume pose: y exactly up, z the horizontal projection of
/// the camera forward axis, origin at the camera position.
inline Pose aligned_volume_pose(const Pose& world_from_camera,
                                const Vector3d& gravity_world) {
  const Vector3d up = -gravity_world.normalized();
  const Vector3d fwd_w = rodrigues(world_from_camera.r).col(2);
  Vector3d z = fwd_w - fwd_w.dot(up) * up;
  if (z.norm() < 1e-9) {
    z = rodrigues(world_from_camera.r).col(1);  // nadir view: use image down
    z -= z.dot(up) * up;
    if (z.norm() < 1e-9) z = Vector3d::UnitX() - Vector3d::UnitX().dot(up) * up;
  }
  z.normalize();
  Matrix3d R;
  R << up.cross(z), up, z;
  return Pose(log_map(R), world_from_camera.t);
}

}  // namespace detail

/// Initialize the volume centered on the camera with y opposing gravity.
inline Volume init_volume(const Pose& world_from_camera,
                          const Vector3d& gravity_world, double size = 3.0,
                          int v_g = 8, RemapPolicy policy = RemapPolicy{}) {
  Volume vol;
  vol.size = size;
  vol.v_g = v_g;
  vol.policy = policy;
  vol.world_from_volume = detail::aligned_volume_pose(world_from_camera, gravity_world);
  return vol;
}

struct PatchEntry {
  Patch patch;  ///< pose in volume frame
  int cell = -1;
  ValidationReport report;
  long birth_frame = 0;
  int seed_u = 0, seed_v = 0;
  double don_deg = 0.0, dong_deg = 0.0;
};

struct PatchMap {
  Volume volume;
  std::vector<PatchEntry> patches;
  int n_g = 5;    ///< per-cell patch limit
  int n_s = 100;  ///< per-update seed limit
  long frame = -1;

  std::vector<int> cell_counts() const {
    std::vector<int> counts(static_cast<size_t>(volume.v_g) * volume.v_g, 0);
    for (const auto& e : patches) {
      if (e.cell >= 0) ++counts[e.cell];
    }
    return counts;
  }
};

struct SeedPixel {
  int u = 0, v = 0;
};

/// Draw seed pixels from the salient mask: project candidates to the volume
/// xz grid, visit cells in increasing distance from the camera's ground
/// position (row-major tie-break), and fill each cell up to n_g (counting
/// patches already there) until n_s seeds total. Deterministic per rng state.
inline std::vector<SeedPixel> select_seeds(const Mask& mask,
                                           const OrganizedCloud& cloud,
                                           const Volume& volume,
                                           const Pose& camera_to_volume,
                                           const std::vector<int>& cell_counts,
                                           int n_g, int n_s, Rng& rng) {
  const int n_cells = volume.v_g * volume.v_g;
  if (static_cast<int>(cell_counts.size()) != n_cells) {
    throw std::invalid_argument("select_seeds: cell count size mismatch");
  }
  std::vector<std::vector<SeedPixel>> per_cell(n_cells);
  for (int v = 0; v < cloud.height(); ++v) {
    for (int u = 0; u < cloud.width(); ++u) {
      if (!mask.at(u, v) || !cloud.has(u, v)) continue;
      const Vector3d p_vol = xform_fwd(cloud.point(u, v), camera_to_volume);
      if (!volume.contains(p_vol)) continue;
      const int cell = volume.cell_of(p_vol.x(), p_vol.z());
      if (cell >= 0) per_cell[cell].push_back({u, v});
    }
  }

  const Vector3d cam_in_vol = camera_to_volume.t;
  const Vector2d cam_xz(cam_in_vol.x(), cam_in_vol.z());
  std::vector<int> order(n_cells);
  for (int i = 0; i < n_cells; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return (volume.cell_center(a) - cam_xz).norm() <
           (volume.cell_center(b) - cam_xz).norm();
  });

  std::vector<SeedPixel> seeds;
  for (int cell : order) {
    if (static_cast<int>(seeds.size()) >= n_s) break;
    auto& cands = per_cell[cell];
    int capacity = n_g - cell_counts[cell];
    capacity = std::min(capacity, n_s - static_cast<int>(seeds.size()));
    for (int k = 0; k < capacity && !cands.empty(); ++k) {
      const size_t pick = rng.uniform_below(cands.size());
      seeds.push_back(cands[pick]);
      cands[pick] = cands.back();
      cands.pop_back();
    }
  }
  return seeds;
}

struct Neighborhood {
  std::vector<Vector3d> points;
  std::vector<Matrix3d> covs;  ///< empty when the cloud has no covariances
};

/// All cloud points within Euclidean r of a 3D center, found by scanning the
/// pixel bounding box of the backprojected r-ball (identical to a brute-force
/// scan of the image). Decimated to n_f by strided selection when n_f > 0.
inline Neighborhood neighborhood_at(const OrganizedCloud& cloud,
                                    const Vector3d& center, double r, int n_f) {
  if (!center.allFinite()) {
    throw std::invalid_argument("neighborhood_at: absent seed point");
  }
  const CameraIntrinsics& intr = cloud.intrinsics();
  int u0 = 0, u1 = cloud.width() - 1, v0 = 0, v1 = cloud.height() - 1;
  const double zlo = center.z() - r, zhi = center.z() + r;
  if (zlo > 1e-9) {
    const auto interval = [&](double c, double f, double pp) {
      const double lo_num = c - r, hi_num = c + r;
      const double lo = lo_num >= 0 ? lo_num / zhi : lo_num / zlo;
      const double hi = hi_num >= 0 ? hi_num / zlo : hi_num / zhi;
      return std::pair<int, int>(
          static_cast<int>(std::floor(f * lo + pp)),
          static_cast<int>(std::ceil(f * hi + pp)));
    };
    const auto [a, b] = interval(center.x(), intr.fx, intr.cx);
    const auto [c, d] = interval(center.y(), intr.fy, intr.cy);
    u0 = std::max(0, a);
    u1 = std::min(cloud.width() - 1, b);
    v0 = std::max(0, c);
    v1 = std::min(cloud.height() - 1, d);
  }

  std::vector<std::pair<int, int>> keep;
  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      if (!cloud.has(u, v)) continue;
      if ((cloud.point(u, v) - center).norm() <= r) keep.push_back({u, v});
    }
  }

  Neighborhood out;
  const size_t n = keep.size();
  const size_t take = (n_f > 0 && n > static_cast<size_t>(n_f))
                          ? static_cast<size_t>(n_f)
                          : n;
  out.points.reserve(take);
  if (cloud.has_covariances()) out.covs.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    const size_t j = (take == n) ? i : i * n / take;
    const auto [u, v] = keep[j];
    out.points.push_back(cloud.point(u, v));
    if (cloud.has_covariances()) out.covs.push_back(cloud.cov(u, v));
  }
  return out;
}

inline Neighborhood neighborhood(const OrganizedCloud& cloud, int u, int v,
                                 double r, int n_f) {
  if (!cloud.in_bounds(u, v) || !cloud.has(u, v)) {
    throw std::invalid_argument("neighborhood: absent seed pixel");
  }
  return neighborhood_at(cloud, cloud.point(u, v), r, n_f);
}

namespace detail {

/// Numeric Jacobian of the stored pose parameters under a left-composed
/// rigid transform, for carrying the parameter covariance through remaps and
/// frame changes. Handles the reduced (r_xy, t) packing of 5-DoF types.
inline Eigen::MatrixXd pose_param_jacobian(const Pose& transform,
                                           const Pose& pose, bool reduced) {
  const int nr = reduced ? 2 : 3;
  const auto pack = [&](const Pose& p) {
    Eigen::VectorXd v(nr + 3);
    if (reduced) v << p.r.x(), p.r.y(), p.t;
    else v << p.r, p.t;
    return v;
  };
  const auto unpack = [&](const Eigen::VectorXd& v) {
    return reduced ? Pose(RotVec(v[0], v[1], 0.0), v.tail<3>())
                   : Pose(RotVec(v[0], v[1], v[2]), v.tail<3>());
  };
  const auto g = [&](const Eigen::VectorXd& v) {
    Pose composed = pose_compose(transform, unpack(v));
    if (reduced) composed = canonicalize_five_dof(composed);
    return pack(composed);
  };
  const Eigen::VectorXd x0 = pack(pose);
  Eigen::MatrixXd J(nr + 3, nr + 3);
  const double h = 1e-6;
  for (int j = 0; j < nr + 3; ++j) {
    Eigen::VectorXd xp = x0, xm = x0;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (g(xp) - g(xm)) / (2.0 * h);
  }
  return J;
}

/// Re-express a patch in another frame: pose left-composed with `transform`,
/// covariance pose block propagated to first order.
inline Patch transform_patch(const Patch& p, const Pose& transform) {
  Pose pose = pose_compose(transform, p.pose());
  const bool reduced = p.is_five_dof();
  Eigen::MatrixXd cov = p.cov();
  if (cov.size() > 0) {
    const int nr = reduced ? 2 : 3;
    const int head = p.param_count() - (nr + 3);
    const Eigen::MatrixXd J = pose_param_jacobian(transform, p.pose(), reduced);
    Eigen::MatrixXd big = Eigen::MatrixXd::Identity(p.param_count(), p.param_count());
    big.block(head, head, nr + 3, nr + 3) = J;
    cov = big * cov * big.transpose();
  }
  if (reduced) pose = canonicalize_five_dof(pose);
  return Patch(p.surface(), p.boundary(), p.k(), p.d(), pose, std::move(cov));
}

}  // namespace detail

/// Check the moving policy; when violated, recenter the volume on the camera
/// (gravity re-aligned) and return the volume-frame transform old -> new.
inline std::optional<Pose> maybe_remap_volume(Volume& volume,
                                              const Pose& world_from_camera,
                                              const Vector3d& gravity_world) {
  const Pose cam_to_vol =
      pose_compose(pose_inverse(volume.world_from_volume), world_from_camera);
  const double dev_pos = cam_to_vol.t.norm();
  const Vector3d fwd = rodrigues(cam_to_vol.r).col(2);
  const Vector3d fwd_xz(fwd.x(), 0.0, fwd.z());
  double dev_ang = M_PI;
  if (fwd_xz.norm() > 1e-9) {
    dev_ang = std::acos(std::clamp(fwd_xz.normalized().dot(Vector3d::UnitZ()),
                                   -1.0, 1.0));
  }
  if (dev_pos <= volume.policy.c_d &&
      dev_ang <= volume.policy.c_a_deg * M_PI / 180.0) {
    return std::nullopt;
  }
  const Pose fresh = detail::aligned_volume_pose(world_from_camera, gravity_world);
  const Pose old_to_new =
      pose_compose(pose_inverse(fresh), volume.world_from_volume);
  volume.world_from_volume = fresh;
  return old_to_new;
}

struct RemapStats {
  int dropped_outside = 0;
  int dropped_behind = 0;
  int culled = 0;
};

/// Apply a volume-frame transform to every patch, drop patches that left the
/// volume or fell too far behind the camera, reassign cells, and cull
/// overfull cells keeping the oldest patches.
inline RemapStats remap_patches(PatchMap& map, const Pose& old_to_new,
                                const Pose& world_from_camera) {
  RemapStats stats;
  const Pose cam_to_vol =
      pose_compose(pose_inverse(map.volume.world_from_volume), world_from_camera);
  const Pose vol_to_cam = pose_inverse(cam_to_vol);

  std::vector<PatchEntry> kept;
  kept.reserve(map.patches.size());
  for (auto& e : map.patches) {
    PatchEntry moved = e;
    moved.patch = detail::transform_patch(e.patch, old_to_new);
    const Vector3d center = moved.patch.pose().t;
    if (!map.volume.contains(center)) {
      ++stats.dropped_outside;
      continue;
    }
    if (map.volume.policy.drop_behind &&
        xform_fwd(center, vol_to_cam).z() < -map.volume.policy.d_cp) {
      ++stats.dropped_behind;
      continue;
    }
    moved.cell = map.volume.cell_of(center.x(), center.z());
    kept.push_back(std::move(moved));
  }

  // cull overfull cells, oldest kept
  std::vector<std::vector<size_t>> by_cell(
      static_cast<size_t>(map.volume.v_g) * map.volume.v_g);
  for (size_t i = 0; i < kept.size(); ++i) {
    if (kept[i].cell >= 0) by_cell[kept[i].cell].push_back(i);
  }
  std::vector<bool> drop(kept.size(), false);
  for (auto& idxs : by_cell) {
    if (static_cast<int>(idxs.size()) <= map.n_g) continue;
    std::stable_sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
      return kept[a].birth_frame < kept[b].birth_frame;
    });
    for (size_t j = map.n_g; j < idxs.size(); ++j) {
      drop[idxs[j]] = true;
      ++stats.culled;
    }
  }
  std::vector<PatchEntry> final_set;
  final_set.reserve(kept.size());
  for (size_t i = 0; i < kept.size(); ++i) {
    if (!drop[i]) final_set.push_back(std::move(kept[i]));
  }
  map.patches = std::move(final_set);
  return stats;
}

/// One input frame: the full-resolution cloud for neighborhood search, an
/// optional preprocessed cloud for saliency and seeding (defaults to the full
/// cloud), gravity in camera frame, and the camera pose in world frame.
struct MapFrame {
  const OrganizedCloud* cloud = nullptr;
  const OrganizedCloud* seed_cloud = nullptr;
  GravityDir gravity;
  Pose world_from_camera;
  long index = 0;
};

struct MapConfig {
  SaliencyConfig saliency;
  FitConfig fit;
  ValidationConfig validation;
  double r = 0.1;          ///< neighborhood radius, m
  int n_f = 50;            ///< neighborhood decimation (0 = keep all)
  double nu = 0.9;         ///< target surface coverage fraction
  double budget_ms = 0.0;  ///< wall-clock budget per update (0 = unlimited;
                           ///< a nonzero budget trades determinism for time)
};

struct UpdateStats {
  int seeds = 0;
  int fitted = 0;
  int added = 0;
  int drop_fit = 0;        ///< not converged / too few points
  int drop_residual = 0;
  int drop_coverage = 0;
  int drop_curvature = 0;
  int drop_placement = 0;  ///< center outside volume or cell already full
  double surface_area = 0.0;  ///< measured S, m^2
  double target = 0.0;        ///< nu S / (pi r^2)
  double ms_normals = 0.0;
  double ms_saliency = 0.0;
  double ms_seeds = 0.0;
  double ms_fit = 0.0;
  double ms_total = 0.0;
};

/// Surface area seen by the cloud: sum of per-pixel footprints z^2/(fx fy).
inline double measured_surface_area(const OrganizedCloud& cloud) {
  const CameraIntrinsics& intr = cloud.intrinsics();
  double area = 0.0;
  for (int v = 0; v < cloud.height(); ++v) {
    for (int u = 0; u < cloud.width(); ++u) {
      if (!cloud.has(u, v)) continue;
      const double z = cloud.point(u, v).z();
      area += z * z / (intr.fx * intr.fy);
    }
  }
  return area;
}

/// One map update: saliency -> seeds -> neighborhoods -> fit -> validate,
/// adding only validated patches, stopping at the seed limit, the expected
/// patch-count target nu S / (pi r^2), or the time budget.
inline UpdateStats update_map(PatchMap& map, const MapFrame& frame,
                              const MapConfig& cfg, Rng& rng) {
  using clock = std::chrono::steady_clock;
  const auto to_ms = [](auto d) {
    return std::chrono::duration<double, std::milli>(d).count();
  };
  const auto t_start = clock::now();
  UpdateStats stats;

  const OrganizedCloud& cloud = *frame.cloud;
  const OrganizedCloud& seed_cloud = frame.seed_cloud ? *frame.seed_cloud : cloud;
  map.frame = frame.index;

  auto t0 = clock::now();
  const TwoScaleNormals normals = estimate_normals_two_scale(seed_cloud, cfg.saliency.r);
  stats.ms_normals = to_ms(clock::now() - t0);

  t0 = clock::now();
  const Mask mask =
      saliency_filter(seed_cloud, normals.coarse, normals.fine, frame.gravity,
                      cfg.saliency);
  stats.ms_saliency = to_ms(clock::now() - t0);

  stats.surface_area = measured_surface_area(seed_cloud);
  stats.target = cfg.nu * stats.surface_area / (M_PI * cfg.r * cfg.r);

  const Pose cam_to_vol =
      pose_compose(pose_inverse(map.volume.world_from_volume), frame.world_from_camera);

  t0 = clock::now();
  std::vector<int> counts = map.cell_counts();
  const std::vector<SeedPixel> seeds =
      select_seeds(mask, seed_cloud, map.volume, cam_to_vol, counts, map.n_g,
                   map.n_s, rng);
  stats.ms_seeds = to_ms(clock::now() - t0);
  stats.seeds = static_cast<int>(seeds.size());

  t0 = clock::now();
  for (const SeedPixel& seed : seeds) {
    if (static_cast<double>(map.patches.size()) >= stats.target) break;
    if (cfg.budget_ms > 0.0 && to_ms(clock::now() - t_start) > cfg.budget_ms) break;

    const Neighborhood nb =
        neighborhood_at(cloud, seed_cloud.point(seed.u, seed.v), cfg.r, cfg.n_f);
    if (nb.points.size() < 10) {
      ++stats.drop_fit;
      continue;
    }
    ++stats.fitted;
    FitConfig fit_cfg = cfg.fit;
    fit_cfg.viewpoint = Vector3d::Zero();  // camera origin
    FitResult fit = [&]() -> FitResult {
      return fit_patch(nb.points, nb.covs, fit_cfg);
    }();
    if (!fit.converged) {
      ++stats.drop_fit;
      continue;
    }
    const ValidationReport report = validate(nb.points, fit.patch, cfg.validation);
    if (!report.overall) {
      if (!report.residual_ok) ++stats.drop_residual;
      else if (!report.coverage_ok) ++stats.drop_coverage;
      else ++stats.drop_curvature;
      continue;
    }

    PatchEntry entry{detail::transform_patch(fit.patch, cam_to_vol),
                     -1,
                     report,
                     frame.index,
                     seed.u,
                     seed.v,
                     0.0,
                     0.0};
    const Vector3d center = entry.patch.pose().t;
    entry.cell = map.volume.cell_of(center.x(), center.z());
    if (entry.cell < 0 || !map.volume.contains(center) ||
        counts[entry.cell] >= map.n_g) {
      ++stats.drop_placement;
      continue;
    }
    const SaliencyAngles angles =
        saliency_angles(normals.coarse, normals.fine, frame.gravity, seed.u, seed.v);
    entry.don_deg = angles.don_deg;
    entry.dong_deg = angles.dong_deg;
    ++counts[entry.cell];
    map.patches.push_back(std::move(entry));
    ++stats.added;
  }
  stats.ms_fit = to_ms(clock::now() - t0);
  stats.ms_total = to_ms(clock::now() - t_start);
  return stats;
}

/// Remap bookkeeping plus a map update, in frame order.
inline UpdateStats process_frame(PatchMap& map, const MapFrame& frame,
                                 const MapConfig& cfg, Rng& rng) {
  const Vector3d gravity_world =
      rodrigues(frame.world_from_camera.r) * frame.gravity.dir;
  if (const auto transform = maybe_remap_volume(
          map.volume, frame.world_from_camera, gravity_world)) {
    remap_patches(map, *transform, frame.world_from_camera);
  }
  return update_map(map, frame, cfg, rng);
}

struct MatchThresholds {
  double d_s = 0.015;     ///< boundary parameters, m
  double k_s = 5.0;       ///< curvatures, 1/m
  double a_s_deg = 20.0;  ///< normal angle, degrees
  double r_s = 0.01;      ///< position, m
};

struct MatchReport {
  bool type_ok = false;
  bool boundary_ok = false;
  bool curvature_ok = false;
  bool normal_ok = false;
  bool position_ok = false;
  bool pass = false;
};

/// Five-test patch similarity. Both patches must be expressed in the same
/// frame (position is compared there). Normal comparison minimizes over the
/// discrete symmetries of the type; for planes that includes the flipped
/// normal.
inline MatchReport match_patch(const Patch& candidate, const Patch& trained,
                               const MatchThresholds& th) {
  MatchReport rep;
  rep.type_ok = candidate.surface() == trained.surface();

  rep.boundary_ok = candidate.boundary() == trained.boundary();
  if (rep.boundary_ok) {
    for (size_t i = 0; i < candidate.d().size(); ++i) {
      if (std::abs(candidate.d()[i] - trained.d()[i]) >= th.d_s) {
        rep.boundary_ok = false;
        break;
      }
    }
  }

  rep.curvature_ok = (candidate.k() - trained.k()).cwiseAbs().maxCoeff() < th.k_s;

  const Vector3d za = candidate.z_axis(), zb = trained.z_axis();
  double cosang = za.dot(zb);
  if (candidate.surface() == SurfaceType::Plane &&
      trained.surface() == SurfaceType::Plane) {
    cosang = std::abs(cosang);  // plane surfaces admit the flipped frame
  }
  const double ang = std::acos(std::clamp(cosang, -1.0, 1.0));
  rep.normal_ok = ang < th.a_s_deg * M_PI / 180.0;

  rep.position_ok = (candidate.pose().t - trained.pose().t).norm() < th.r_s;

  rep.pass = rep.type_ok && rep.boundary_ok && rep.curvature_ok &&
             rep.normal_ok && rep.position_ok;
  return rep;
}

}  // namespace patchmap
