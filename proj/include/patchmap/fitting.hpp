#pragma once

// Weighted Levenberg-Marquardt patch fitting. A fit runs plane
// initialization, an unbounded-surface WLM stage on the implicit form (each
// residual scaled by the first-order standard deviation of the implicit value
// under the point's covariance), curvature discrimination, and a moment-based
// boundary fit with containment scaling lambda = sqrt(2) erfinv(Gamma).

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "patchmap/geometry.hpp"
#include "patchmap/patch.hpp"

namespace patchmap {

/// Newton-refined inverse error function.
inline double inverse_erf(double y) {
  if (!(y > -1.0 && y < 1.0)) {
    throw std::invalid_argument("inverse_erf: argument outside (-1, 1)");
  }
  if (y == 0.0) return 0.0;
  // Winitzki initial guess
  const double a = 0.147;
  const double L = std::log(1.0 - y * y);
  const double c = 2.0 / (M_PI * a) + 0.5 * L;
  double x = std::copysign(std::sqrt(std::sqrt(c * c - L / a) - c), y);
  for (int i = 0; i < 5; ++i) {
    const double err = std::erf(x) - y;
    x -= err * std::sqrt(M_PI) / 2.0 * std::exp(x * x);
  }
  return x;
}

/// Containment scaling for a target boundary containment probability.
inline double boundary_lambda(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("boundary_lambda: Gamma outside (0, 1]");
  }
  const double g = std::min(gamma, 1.0 - 1e-12);
  return std::sqrt(2.0) * inverse_erf(g);
}

/// Surface family requested from the fitter. Auto fits a general paraboloid
/// and discriminates among the paraboloid types and the plane.
enum class FitSurface : uint8_t { Auto, Plane, Sphere, CircularCylinder };

struct FitConfig {
  double gamma = 0.95;       ///< boundary containment probability
  int max_iter = 50;
  double lambda0 = 1e-3;     ///< initial LM damping
  double tol_grad = 1e-10;
  double tol_step = 1e-12;
  double flat_kappa = 0.1;   ///< |kappa| below this counts as flat, 1/m
  double sigma_floor = 1e-6; ///< lower bound on per-point implicit std, m
  bool use_weights = true;
  FitSurface surface = FitSurface::Auto;
  BoundaryType plane_boundary = BoundaryType::Ellipse;
  Vector3d viewpoint = Vector3d::Zero();  ///< normals oriented toward here
};

struct FitResult {
  Patch patch;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;  ///< Euclidean RMSE against the unbounded surface
  Eigen::MatrixXd cov;    ///< parameter covariance, [k d r t] order
  std::vector<double> chi2_trace;  ///< objective after each accepted step
};

/// Linear least-squares plane: local z is the smallest-eigenvector normal,
/// oriented toward the viewpoint; t is the perpendicular projection of the
/// centroid onto the plane; r has r_z = 0.
inline Pose fit_plane_lls(const std::vector<Vector3d>& points,
                          const Vector3d& viewpoint = Vector3d::Zero()) {
  if (points.size() < 3) {
    throw std::invalid_argument("fit_plane_lls: need >= 3 points");
  }
  Vector3d mean = Vector3d::Zero();
  for (const auto& q : points) mean += q;
  mean /= static_cast<double>(points.size());
  Matrix3d scatter = Matrix3d::Zero();
  for (const auto& q : points) scatter += (q - mean) * (q - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Matrix3d> es(scatter);
  if (es.eigenvalues()(1) <= 1e-12 * std::max(es.eigenvalues()(2), 1e-300)) {
    throw std::invalid_argument("fit_plane_lls: points are collinear");
  }
  Vector3d n = es.eigenvectors().col(0);
  if (n.dot(mean - viewpoint) > 0) n = -n;
  // the LLS plane passes through the centroid, so the perpendicular
  // projection of the centroid is the centroid itself
  return Pose(minimal_rotation(Vector3d::UnitZ(), n), mean);
}

namespace detail {

/// Parameter packing for the WLM stage: maps a parameter vector to quadric
/// coefficients a = (a_x, a_y, a_z) and a pose. Offsets depend on the model.
struct WlmModel {
  SurfaceType type = SurfaceType::EllipticParaboloid;  // family placeholder
  int n_params = 8;
  bool reduced_pose = false;  // r_z fixed at 0
  std::function<void(const Eigen::VectorXd&, Vector3d*, Pose*)> unpack;
  std::function<Eigen::VectorXd(const Vector2d&, const Pose&)> pack;
  std::function<Vector2d(const Eigen::VectorXd&)> curvatures;
};

inline WlmModel model_parab_full() {
  WlmModel m;
  m.n_params = 8;
  m.unpack = [](const Eigen::VectorXd& p, Vector3d* a, Pose* pose) {
    *a = Vector3d(p[0], p[1], 0.0);
    *pose = Pose(RotVec(p[2], p[3], p[4]), Vector3d(p[5], p[6], p[7]));
  };
  m.pack = [](const Vector2d& k, const Pose& pose) {
    Eigen::VectorXd p(8);
    p << k.x(), k.y(), pose.r, pose.t;
    return p;
  };
  m.curvatures = [](const Eigen::VectorXd& p) { return Vector2d(p[0], p[1]); };
  return m;
}

inline WlmModel model_parab_cylindric() {
  WlmModel m;
  m.n_params = 7;
  m.unpack = [](const Eigen::VectorXd& p, Vector3d* a, Pose* pose) {
    *a = Vector3d(0.0, p[0], 0.0);
    *pose = Pose(RotVec(p[1], p[2], p[3]), Vector3d(p[4], p[5], p[6]));
  };
  m.pack = [](const Vector2d& k, const Pose& pose) {
    Eigen::VectorXd p(7);
    p << k.y(), pose.r, pose.t;
    return p;
  };
  m.curvatures = [](const Eigen::VectorXd& p) { return Vector2d(0.0, p[0]); };
  return m;
}

inline WlmModel model_parab_circular() {
  WlmModel m;
  m.n_params = 6;
  m.reduced_pose = true;
  m.unpack = [](const Eigen::VectorXd& p, Vector3d* a, Pose* pose) {
    *a = Vector3d(p[0], p[0], 0.0);
    *pose = Pose(RotVec(p[1], p[2], 0.0), Vector3d(p[3], p[4], p[5]));
  };
  m.pack = [](const Vector2d& k, const Pose& pose) {
    Eigen::VectorXd p(6);
    p << k.x(), pose.r.x(), pose.r.y(), pose.t;
    return p;
  };
  m.curvatures = [](const Eigen::VectorXd& p) { return Vector2d(p[0], p[0]); };
  return m;
}

inline WlmModel model_plane() {
  WlmModel m;
  m.n_params = 6;
  m.unpack = [](const Eigen::VectorXd& p, Vector3d* a, Pose* pose) {
    *a = Vector3d::Zero();
    *pose = Pose(RotVec(p[0], p[1], p[2]), Vector3d(p[3], p[4], p[5]));
  };
  m.pack = [](const Vector2d&, const Pose& pose) {
    Eigen::VectorXd p(6);
    p << pose.r, pose.t;
    return p;
  };
  m.curvatures = [](const Eigen::VectorXd&) { return Vector2d::Zero(); };
  return m;
}

inline WlmModel model_sphere() {
  WlmModel m;
  m.n_params = 6;
  m.reduced_pose = true;
  m.unpack = [](const Eigen::VectorXd& p, Vector3d* a, Pose* pose) {
    *a = Vector3d(p[0], p[0], p[0]);
    *pose = Pose(RotVec(p[1], p[2], 0.0), Vector3d(p[3], p[4], p[5]));
  };
  m.pack = [](const Vector2d& k, const Pose& pose) {
    Eigen::VectorXd p(6);
    p << k.x(), pose.r.x(), pose.r.y(), pose.t;
    return p;
  };
  m.curvatures = [](const Eigen::VectorXd& p) { return Vector2d(p[0], p[0]); };
  return m;
}

inline WlmModel model_cylinder() {
  WlmModel m;
  m.n_params = 7;
  m.unpack = [](const Eigen::VectorXd& p, Vector3d* a, Pose* pose) {
    *a = Vector3d(0.0, p[0], p[0]);
    *pose = Pose(RotVec(p[1], p[2], p[3]), Vector3d(p[4], p[5], p[6]));
  };
  m.pack = [](const Vector2d& k, const Pose& pose) {
    Eigen::VectorXd p(7);
    p << k.y(), pose.r, pose.t;
    return p;
  };
  m.curvatures = [](const Eigen::VectorXd& p) { return Vector2d(0.0, p[0]); };
  return m;
}

struct WlmOutcome {
  Eigen::VectorXd params;
  bool converged = false;
  int iterations = 0;
  Eigen::MatrixXd cov;  ///< pseudo-inverse of the Gauss-Newton Hessian
  std::vector<double> chi2_trace;
};

/// Residual vector e_i = f(q_i) / sigma_i for the quadric family.
inline void wlm_residuals(const WlmModel& model, const Eigen::VectorXd& p,
                          const std::vector<Vector3d>& pts,
                          const std::vector<Matrix3d>* covs,
                          const FitConfig& cfg, Eigen::VectorXd* e) {
  Vector3d a;
  Pose pose;
  model.unpack(p, &a, &pose);
  const Matrix3d R = rodrigues(pose.r);
  const Matrix3d Rt = R.transpose();
  for (size_t i = 0; i < pts.size(); ++i) {
    const Vector3d ql = Rt * (pts[i] - pose.t);
    const double f = a.x() * ql.x() * ql.x() + a.y() * ql.y() * ql.y() +
                     a.z() * ql.z() * ql.z() - 2.0 * ql.z();
    double sigma = 1.0;
    if (cfg.use_weights && covs && !covs->empty()) {
      const Vector3d gl(2.0 * a.x() * ql.x(), 2.0 * a.y() * ql.y(),
                        2.0 * a.z() * ql.z() - 2.0);
      const Vector3d gw = R * gl;
      sigma = std::sqrt(std::max(gw.dot((*covs)[i] * gw), 0.0));
      sigma = std::max(sigma, cfg.sigma_floor);
    }
    (*e)[i] = f / sigma;
  }
}

inline WlmOutcome wlm_minimize(const WlmModel& model, const Eigen::VectorXd& p0,
                               const std::vector<Vector3d>& pts,
                               const std::vector<Matrix3d>* covs,
                               const FitConfig& cfg) {
  const int n = static_cast<int>(pts.size());
  const int np = model.n_params;
  WlmOutcome out;
  out.params = p0;

  Eigen::VectorXd e(n), e_try(n), ej_f(n), ej_b(n);
  wlm_residuals(model, out.params, pts, covs, cfg, &e);
  double chi2 = e.squaredNorm();
  out.chi2_trace.push_back(chi2);

  Eigen::MatrixXd J(n, np);
  double lm_lambda = cfg.lambda0;
  bool converged = false;

  for (int iter = 0; iter < cfg.max_iter && !converged; ++iter) {
    out.iterations = iter + 1;
    for (int j = 0; j < np; ++j) {
      const double h = 1e-6 * (1.0 + std::abs(out.params[j]));
      Eigen::VectorXd pj = out.params;
      pj[j] = out.params[j] + h;
      wlm_residuals(model, pj, pts, covs, cfg, &ej_f);
      pj[j] = out.params[j] - h;
      wlm_residuals(model, pj, pts, covs, cfg, &ej_b);
      J.col(j) = (ej_f - ej_b) / (2.0 * h);
    }
    const Eigen::VectorXd g = J.transpose() * e;
    if (g.cwiseAbs().maxCoeff() < cfg.tol_grad) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd H = J.transpose() * J;
    const Eigen::VectorXd damping = H.diagonal().array() + 1e-12;

    bool accepted = false;
    while (lm_lambda <= 1e12) {
      Eigen::MatrixXd Hd = H;
      Hd.diagonal() += lm_lambda * damping;
      const Eigen::VectorXd step = Hd.ldlt().solve(-g);
      if (step.norm() < cfg.tol_step) {
        converged = true;
        break;
      }
      wlm_residuals(model, out.params + step, pts, covs, cfg, &e_try);
      const double chi2_try = e_try.squaredNorm();
      if (chi2_try < chi2) {
        out.params += step;
        e.swap(e_try);
        chi2 = chi2_try;
        out.chi2_trace.push_back(chi2);
        lm_lambda = std::max(lm_lambda / 10.0, 1e-15);
        accepted = true;
        break;
      }
      lm_lambda *= 10.0;
    }
    if (!accepted && !converged) break;  // damping exhausted
  }
  out.converged = converged;

  // Parameter covariance: pseudo-inverse of J^T J across gauge directions.
  for (int j = 0; j < np; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(out.params[j]));
    Eigen::VectorXd pj = out.params;
    pj[j] = out.params[j] + h;
    wlm_residuals(model, pj, pts, covs, cfg, &ej_f);
    pj[j] = out.params[j] - h;
    wlm_residuals(model, pj, pts, covs, cfg, &ej_b);
    J.col(j) = (ej_f - ej_b) / (2.0 * h);
  }
  const Eigen::MatrixXd H = J.transpose() * J;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  const double ev_max = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  Eigen::VectorXd inv = es.eigenvalues();
  for (int j = 0; j < np; ++j) {
    inv[j] = es.eigenvalues()[j] > 1e-10 * ev_max ? 1.0 / es.eigenvalues()[j] : 0.0;
  }
  out.cov = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

/// Swap the local x and y axes (rotation by 90 degrees about local z), which
/// exchanges the curvature roles: k' = (k_y, k_x).
inline Pose swap_principal_axes(const Pose& pose) {
  return pose_compose(pose, Pose(RotVec(0, 0, M_PI / 2), Vector3d::Zero()));
}

/// Reduce a full pose to the 5-DoF representation: same local z axis, r_z = 0.
inline Pose canonicalize_five_dof(const Pose& pose) {
  const Vector3d n = rodrigues(pose.r).col(2);
  return Pose(minimal_rotation(Vector3d::UnitZ(), n), pose.t);
}

}  // namespace detail

/// Result of the unbounded-surface WLM stage.
struct SurfaceFit {
  Vector2d k = Vector2d::Zero();
  Pose pose;
  bool converged = false;
  int iterations = 0;
  Eigen::MatrixXd cov;  ///< over the model's own parameter vector
  std::vector<double> chi2_trace;
  detail::WlmModel model;
  Eigen::VectorXd params;
};

/// Fit an unbounded surface of the given family by WLM starting from `init`
/// (normally the output of fit_plane_lls, with zero curvature).
inline SurfaceFit wlm_fit_surface(const std::vector<Vector3d>& points,
                                  const std::vector<Matrix3d>& covs,
                                  const Pose& init, const FitConfig& cfg,
                                  FitSurface family = FitSurface::Auto,
                                  const Vector2d& k_init = Vector2d::Zero()) {
  detail::WlmModel model;
  switch (family) {
    case FitSurface::Auto: model = detail::model_parab_full(); break;
    case FitSurface::Plane: model = detail::model_plane(); break;
    case FitSurface::Sphere: model = detail::model_sphere(); break;
    case FitSurface::CircularCylinder: model = detail::model_cylinder(); break;
  }
  const size_t min_pts = static_cast<size_t>(model.n_params);
  if (points.size() < min_pts) {
    throw std::invalid_argument("wlm_fit_surface: too few points for model");
  }
  Pose start = model.reduced_pose ? detail::canonicalize_five_dof(init) : init;
  const Eigen::VectorXd p0 = model.pack(k_init, start);
  const auto res = detail::wlm_minimize(model, p0, points,
                                        covs.empty() ? nullptr : &covs, cfg);
  SurfaceFit fit;
  Vector3d a;
  model.unpack(res.params, &a, &fit.pose);
  fit.k = model.curvatures(res.params);
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.cov = res.cov;
  fit.chi2_trace = res.chi2_trace;
  fit.model = model;
  fit.params = res.params;
  return fit;
}

/// Classify fitted curvatures: both flat -> plane, one flat -> cylindric
/// paraboloid, same sign -> elliptic (circular when within 10%), opposite
/// sign -> hyperbolic.
inline SurfaceType discriminate_curvature(const Vector2d& k, double flat_kappa) {
  const double ax = std::abs(k.x()), ay = std::abs(k.y());
  if (ax < flat_kappa && ay < flat_kappa) return SurfaceType::Plane;
  if (ax < flat_kappa || ay < flat_kappa) return SurfaceType::CylindricParaboloid;
  if (k.x() * k.y() > 0.0) {
    if (std::abs(k.x() - k.y()) <= 0.1 * std::max(ax, ay)) {
      return SurfaceType::CircularParaboloid;
    }
    return SurfaceType::EllipticParaboloid;
  }
  return SurfaceType::HyperbolicParaboloid;
}

/// Boundary parameters plus the pose update that aligning the boundary may
/// introduce (in-plane PCA rotation and centroid recentering for planes).
struct BoundaryFit {
  std::vector<double> d;
  Pose pose;
  Eigen::MatrixXd cov;  ///< sampling covariance of d
};

/// Fit the boundary for a surface already fitted: project the points into the
/// local frame and scale the second moments by lambda(Gamma). Planes resolve
/// their in-plane gauge by PCA on the projected points.
inline BoundaryFit fit_boundary(const std::vector<Vector3d>& points,
                                SurfaceType surface, BoundaryType boundary,
                                const Pose& pose_in, double gamma) {
  if (points.size() < 3) {
    throw std::invalid_argument("fit_boundary: need >= 3 projected points");
  }
  const double lambda = boundary_lambda(gamma);
  Pose pose = pose_in;

  if (surface == SurfaceType::Plane) {
    // Recenter t on the data centroid projected to the plane.
    Vector3d mean = Vector3d::Zero();
    for (const auto& q : points) mean += q;
    mean /= static_cast<double>(points.size());
    const Matrix3d R = rodrigues(pose.r);
    const Vector3d n = R.col(2);
    pose.t = mean - n.dot(mean - pose.t) * n;
    if (boundary != BoundaryType::Circle) {
      // PCA alignment of the local x axis with the principal data direction.
      double mxx = 0, myy = 0, mxy = 0;
      for (const auto& q : points) {
        const Vector3d ql = R.transpose() * (q - pose.t);
        mxx += ql.x() * ql.x();
        myy += ql.y() * ql.y();
        mxy += ql.x() * ql.y();
      }
      const double angle = 0.5 * std::atan2(2.0 * mxy, mxx - myy);
      pose = pose_compose(pose, Pose(RotVec(0, 0, angle), Vector3d::Zero()));
      if (five_dof(surface, boundary)) pose = detail::canonicalize_five_dof(pose);
    }
  }

  std::vector<Vector2d> us;
  us.reserve(points.size());
  const Matrix3d Rt = rodrigues(pose.r).transpose();
  for (const auto& q : points) {
    const Vector3d ql = Rt * (q - pose.t);
    us.emplace_back(ql.x(), ql.y());
  }
  const double n = static_cast<double>(us.size());

  BoundaryFit out;
  out.pose = pose;
  const auto radius_and_var = [&](auto&& proj) {
    double v = 0, m4 = 0;
    for (const auto& u : us) {
      const double s = proj(u);
      v += s * s;
      m4 += s * s * s * s;
    }
    v /= n;
    m4 /= n;
    const double var_v = std::max(m4 - v * v, 0.0) / n;
    const double d = lambda * std::sqrt(std::max(v, 1e-300));
    const double var_d = lambda * lambda * var_v / (4.0 * std::max(v, 1e-300));
    return std::pair<double, double>(d, var_d);
  };

  switch (boundary) {
    case BoundaryType::Ellipse:
    case BoundaryType::Rect: {
      const auto [dx, vx] = radius_and_var([](const Vector2d& u) { return u.x(); });
      const auto [dy, vy] = radius_and_var([](const Vector2d& u) { return u.y(); });
      out.d = {dx, dy};
      out.cov = Eigen::Vector2d(vx, vy).asDiagonal();
      break;
    }
    case BoundaryType::Circle: {
      const auto [dc, vc] =
          radius_and_var([](const Vector2d& u) { return u.norm() / std::sqrt(2.0); });
      out.d = {dc};
      out.cov = Eigen::MatrixXd::Constant(1, 1, vc);
      break;
    }
    case BoundaryType::ConvexQuad: {
      out.d.resize(5);
      Eigen::VectorXd var(5);
      for (int j = 0; j < 4; ++j) {
        const double ang = M_PI / 4.0 + j * M_PI / 2.0;
        const Vector2d dir(std::cos(ang), std::sin(ang));
        const auto [dj, vj] =
            radius_and_var([&](const Vector2d& u) { return u.dot(dir); });
        out.d[j] = dj;
        var[j] = vj;
      }
      out.d[4] = 0.0;  // skew resolved by the PCA alignment above
      var[4] = 0.0;
      out.cov = var.asDiagonal();
      break;
    }
  }
  return out;
}

namespace detail {

/// Clamp boundary extents that the curved-surface domain cannot support
/// (sphere cap radius and cylinder arc half-width are capped at 1/|kappa|).
inline void clamp_boundary_to_domain(SurfaceType s, const Vector2d& k,
                                     std::vector<double>* d) {
  if (s == SurfaceType::Sphere) {
    (*d)[0] = std::min((*d)[0], (1.0 - 1e-12) / std::abs(k.x()));
  } else if (s == SurfaceType::CircularCylinder) {
    (*d)[1] = std::min((*d)[1], (1.0 - 1e-12) / std::abs(k.y()));
  }
}

/// Assemble the full parameter covariance in [k d r t] order from the
/// surface-stage covariance and the boundary-moment covariance.
inline Eigen::MatrixXd assemble_cov(SurfaceType s, BoundaryType b,
                                    const Eigen::MatrixXd& surf_cov,
                                    const Eigen::MatrixXd& d_cov,
                                    bool reduced_pose) {
  const int nk = curvature_param_count(s);
  const int nd = boundary_param_count(b);
  const int nr = reduced_pose ? 2 : 3;
  const int p = nk + nd + nr + 3;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  // surface params are [k(nk) r(nr) t(3)] for every model
  cov.block(0, 0, nk, nk) = surf_cov.block(0, 0, nk, nk);
  cov.block(0, nk + nd, nk, nr + 3) = surf_cov.block(0, nk, nk, nr + 3);
  cov.block(nk + nd, 0, nr + 3, nk) = surf_cov.block(nk, 0, nr + 3, nk);
  cov.block(nk + nd, nk + nd, nr + 3, nr + 3) =
      surf_cov.block(nk, nk, nr + 3, nr + 3);
  cov.block(nk, nk, nd, nd) = d_cov;
  return cov;
}

}  // namespace detail

/// Full patch fit: plane initialization, WLM surface fit, curvature
/// discrimination (with a constrained re-fit for the discriminated type), and
/// boundary fitting. Covariances may be empty for unweighted fitting.
inline FitResult fit_patch(const std::vector<Vector3d>& points,
                           const std::vector<Matrix3d>& covs,
                           const FitConfig& cfg = FitConfig()) {
  if (points.size() < 10) {
    throw std::invalid_argument("fit_patch: too few points (need >= 10)");
  }
  if (!covs.empty() && covs.size() != points.size()) {
    throw std::invalid_argument("fit_patch: covariance count mismatch");
  }

  // Steps 1-2: plane init, WLM on the requested family.
  const Pose plane_pose = fit_plane_lls(points, cfg.viewpoint);
  SurfaceFit surf = wlm_fit_surface(points, covs, plane_pose, cfg, cfg.surface);

  SurfaceType type;
  BoundaryType boundary;
  switch (cfg.surface) {
    case FitSurface::Plane:
      type = SurfaceType::Plane;
      boundary = cfg.plane_boundary;
      break;
    case FitSurface::Sphere:
      type = SurfaceType::Sphere;
      boundary = BoundaryType::Circle;
      break;
    case FitSurface::CircularCylinder:
      type = SurfaceType::CircularCylinder;
      boundary = BoundaryType::Rect;
      break;
    case FitSurface::Auto: {
      // Step 3: discriminate and re-fit under the discriminated constraints.
      type = discriminate_curvature(surf.k, cfg.flat_kappa);
      switch (type) {
        case SurfaceType::Plane: {
          boundary = cfg.plane_boundary;
          SurfaceFit refit =
              wlm_fit_surface(points, covs, surf.pose, cfg, FitSurface::Plane);
          refit.iterations += surf.iterations;
          surf = refit;
          break;
        }
        case SurfaceType::CylindricParaboloid: {
          boundary = BoundaryType::Rect;
          Pose pose = surf.pose;
          Vector2d k = surf.k;
          if (std::abs(k.x()) > std::abs(k.y())) {
            pose = detail::swap_principal_axes(pose);
            k = Vector2d(k.y(), k.x());
          }
          detail::WlmModel model = detail::model_parab_cylindric();
          const auto res = detail::wlm_minimize(
              model, model.pack(Vector2d(0.0, k.y()), pose), points,
              covs.empty() ? nullptr : &covs, cfg);
          Vector3d a;
          Pose p2;
          model.unpack(res.params, &a, &p2);
          surf.iterations += res.iterations;
          surf.pose = p2;
          surf.k = model.curvatures(res.params);
          surf.converged = res.converged;
          surf.cov = res.cov;
          surf.chi2_trace = res.chi2_trace;
          surf.model = model;
          break;
        }
        case SurfaceType::CircularParaboloid: {
          boundary = BoundaryType::Circle;
          detail::WlmModel model = detail::model_parab_circular();
          const Pose start = detail::canonicalize_five_dof(surf.pose);
          const double k0 = 0.5 * (surf.k.x() + surf.k.y());
          const auto res = detail::wlm_minimize(
              model, model.pack(Vector2d(k0, k0), start), points,
              covs.empty() ? nullptr : &covs, cfg);
          Vector3d a;
          Pose p2;
          model.unpack(res.params, &a, &p2);
          surf.iterations += res.iterations;
          surf.pose = p2;
          surf.k = model.curvatures(res.params);
          surf.converged = res.converged;
          surf.cov = res.cov;
          surf.chi2_trace = res.chi2_trace;
          surf.model = model;
          break;
        }
        default: {
          boundary = BoundaryType::Ellipse;
          // canonical principal-axis order: k_x <= k_y
          if (surf.k.x() > surf.k.y()) {
            surf.pose = detail::swap_principal_axes(surf.pose);
            surf.k = Vector2d(surf.k.y(), surf.k.x());
            surf.params = surf.model.pack(surf.k, surf.pose);
          }
          break;
        }
      }
      break;
    }
    default:
      throw std::logic_error("fit_patch: unknown surface family");
  }

  // Steps 4-5: boundary fit with containment scaling.
  BoundaryFit bf = fit_boundary(points, type, boundary, surf.pose, cfg.gamma);
  detail::clamp_boundary_to_domain(type, surf.k, &bf.d);

  const bool reduced = five_dof(type, boundary);
  Pose pose = bf.pose;
  if (reduced) pose = detail::canonicalize_five_dof(pose);
  Patch patch(type, boundary, surf.k, bf.d, pose);
  patch.set_cov(detail::assemble_cov(type, boundary, surf.cov, bf.cov,
                                     surf.model.reduced_pose));

  FitResult out{patch};
  out.iterations = surf.iterations;
  out.converged = surf.converged;
  out.cov = patch.cov();
  out.chi2_trace = surf.chi2_trace;
  double ss = 0.0;
  for (const auto& q : points) {
    const double d = closest_point(q, patch).distance;
    ss += d * d;
  }
  out.residual = std::sqrt(ss / static_cast<double>(points.size()));
  return out;
}

}  // namespace patchmap
