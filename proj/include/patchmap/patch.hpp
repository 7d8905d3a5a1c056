#pragma once

// Bounded curved patch models: seven surface types paired with four boundary
// types (ten legal combinations). A patch is its intrinsic shape (curvatures
// and boundary parameters) plus an extrinsic pose; rotationally symmetric
// types use a reduced 5-DoF pose with r_z fixed at 0.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchmap/geometry.hpp"
#include "patchmap/rng.hpp"

namespace patchmap {

enum class SurfaceType : uint8_t {
  EllipticParaboloid,
  HyperbolicParaboloid,
  CylindricParaboloid,
  CircularParaboloid,
  Plane,
  Sphere,
  CircularCylinder,
};

enum class BoundaryType : uint8_t {
  Ellipse,
  Circle,
  Rect,       ///< axis-aligned rectangle, half-extents (d_x, d_y)
  ConvexQuad  ///< 4 vertex radii on fixed diagonal directions + skew angle
};

inline const char* to_string(SurfaceType s) {
  switch (s) {
    case SurfaceType::EllipticParaboloid: return "elliptic-paraboloid";
    case SurfaceType::HyperbolicParaboloid: return "hyperbolic-paraboloid";
    case SurfaceType::CylindricParaboloid: return "cylindric-paraboloid";
    case SurfaceType::CircularParaboloid: return "circular-paraboloid";
    case SurfaceType::Plane: return "plane";
    case SurfaceType::Sphere: return "sphere";
    case SurfaceType::CircularCylinder: return "circular-cylinder";
  }
  return "?";
}

inline const char* to_string(BoundaryType b) {
  switch (b) {
    case BoundaryType::Ellipse: return "ellipse";
    case BoundaryType::Circle: return "circle";
    case BoundaryType::Rect: return "axis-aligned-rectangle";
    case BoundaryType::ConvexQuad: return "convex-quad";
  }
  return "?";
}

/// Legal (surface, boundary) pairings.
inline bool legal_patch_combo(SurfaceType s, BoundaryType b) {
  switch (s) {
    case SurfaceType::EllipticParaboloid:
    case SurfaceType::HyperbolicParaboloid:
      return b == BoundaryType::Ellipse;
    case SurfaceType::CylindricParaboloid:
    case SurfaceType::CircularCylinder:
      return b == BoundaryType::Rect;
    case SurfaceType::CircularParaboloid:
    case SurfaceType::Sphere:
      return b == BoundaryType::Circle;
    case SurfaceType::Plane:
      return true;
  }
  return false;
}

/// Types whose surface is rotationally symmetric about local z; their pose is
/// reduced to 5 DoF (r_z = 0). Plane symmetry depends on the boundary.
inline bool five_dof(SurfaceType s, BoundaryType b) {
  return s == SurfaceType::CircularParaboloid || s == SurfaceType::Sphere ||
         (s == SurfaceType::Plane && b == BoundaryType::Circle);
}

inline int curvature_param_count(SurfaceType s) {
  switch (s) {
    case SurfaceType::EllipticParaboloid:
    case SurfaceType::HyperbolicParaboloid: return 2;
    case SurfaceType::Plane: return 0;
    default: return 1;
  }
}

inline int boundary_param_count(BoundaryType b) {
  switch (b) {
    case BoundaryType::Ellipse:
    case BoundaryType::Rect: return 2;
    case BoundaryType::Circle: return 1;
    case BoundaryType::ConvexQuad: return 5;
  }
  return 0;
}

/// Paraboloid implicit form in the local frame:
/// q^T diag(kx, ky, 0) q - 2 q_z.
inline double eval_implicit(const Vector3d& q_l, const Vector2d& k) {
  return k.x() * q_l.x() * q_l.x() + k.y() * q_l.y() * q_l.y() - 2.0 * q_l.z();
}

/// Paraboloid explicit form: (u_x, u_y, (kx u_x^2 + ky u_y^2) / 2).
inline Vector3d eval_explicit(const Vector2d& u, const Vector2d& k) {
  return Vector3d(u.x(), u.y(),
                  0.5 * (k.x() * u.x() * u.x() + k.y() * u.y() * u.y()));
}

struct ClosestPoint {
  Vector3d point = Vector3d::Zero();  ///< on the unbounded surface
  double distance = 0.0;              ///< meters
  bool exact = true;  ///< false when only the first-order estimate is returned
};

class Patch {
 public:
  Patch(SurfaceType surface, BoundaryType boundary, const Vector2d& k,
        std::vector<double> d, const Pose& pose,
        Eigen::MatrixXd cov = Eigen::MatrixXd())
      : surface_(surface), boundary_(boundary), k_(k), d_(std::move(d)),
        pose_(pose), cov_(std::move(cov)) {
    validate();
  }

  SurfaceType surface() const { return surface_; }
  BoundaryType boundary() const { return boundary_; }

  /// Canonical curvature 2-vector (kappa_x, kappa_y). Scalar-curvature types
  /// are expanded: circular paraboloid / sphere -> (k, k), cylindric
  /// paraboloid / circular cylinder -> (0, k), plane -> (0, 0).
  const Vector2d& k() const { return k_; }

  /// Boundary parameters, meters (skew angle of a convex quad in radians).
  const std::vector<double>& d() const { return d_; }

  const Pose& pose() const { return pose_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  void set_cov(Eigen::MatrixXd c) { cov_ = std::move(c); }

  bool is_five_dof() const { return five_dof(surface_, boundary_); }

  /// Total parameter DoF: curvatures + boundary + pose.
  int param_count() const {
    return curvature_param_count(surface_) + boundary_param_count(boundary_) +
           (is_five_dof() ? 2 : 3) + 3;
  }

  double kappa_min() const { return std::min(k_.x(), k_.y()); }
  double kappa_max() const { return std::max(k_.x(), k_.y()); }

  /// Local z axis (surface normal at the apex) in world frame.
  Vector3d z_axis() const { return rodrigues(pose_.r).col(2); }

  /// Convex-quad vertices in the local xy plane, counter-clockwise.
  std::array<Vector2d, 4> quad_vertices() const {
    std::array<Vector2d, 4> v;
    const double skew = d_[4];
    for (int j = 0; j < 4; ++j) {
      const double ang = skew + M_PI / 4.0 + j * M_PI / 2.0;
      v[j] = d_[j] * Vector2d(std::cos(ang), std::sin(ang));
    }
    return v;
  }

 private:
  void validate() const {
    if (!legal_patch_combo(surface_, boundary_)) {
      throw std::invalid_argument("Patch: illegal surface/boundary pairing");
    }
    const int nb = boundary_param_count(boundary_);
    if (static_cast<int>(d_.size()) != nb) {
      throw std::invalid_argument("Patch: wrong boundary parameter count");
    }
    const int nrad = boundary_ == BoundaryType::ConvexQuad ? 4 : nb;
    for (int i = 0; i < nrad; ++i) {
      if (!(d_[i] > 0)) throw std::invalid_argument("Patch: boundary size <= 0");
    }
    switch (surface_) {
      case SurfaceType::EllipticParaboloid:
        if (k_.x() * k_.y() <= 0) {
          throw std::invalid_argument("Patch: elliptic paraboloid needs same-sign curvatures");
        }
        break;
      case SurfaceType::HyperbolicParaboloid:
        if (k_.x() * k_.y() >= 0) {
          throw std::invalid_argument("Patch: hyperbolic paraboloid needs opposite-sign curvatures");
        }
        break;
      case SurfaceType::CylindricParaboloid:
        if (k_.x() != 0.0 || k_.y() == 0.0) {
          throw std::invalid_argument("Patch: cylindric paraboloid needs k = (0, kappa)");
        }
        break;
      case SurfaceType::CircularParaboloid:
        if (k_.x() != k_.y() || k_.x() == 0.0) {
          throw std::invalid_argument("Patch: circular paraboloid needs k = (kappa, kappa)");
        }
        break;
      case SurfaceType::Plane:
        if (k_.x() != 0.0 || k_.y() != 0.0) {
          throw std::invalid_argument("Patch: plane needs k = 0");
        }
        break;
      case SurfaceType::Sphere:
        if (k_.x() != k_.y() || k_.x() == 0.0) {
          throw std::invalid_argument("Patch: sphere needs k = (kappa, kappa)");
        }
        if (std::abs(k_.x()) * d_[0] > 1.0 + 1e-12) {
          throw std::invalid_argument("Patch: sphere requires |kappa| d_c <= 1");
        }
        break;
      case SurfaceType::CircularCylinder:
        if (k_.x() != 0.0 || k_.y() == 0.0) {
          throw std::invalid_argument("Patch: circular cylinder needs k = (0, kappa)");
        }
        if (std::abs(k_.y()) * d_[1] > 1.0 + 1e-12) {
          throw std::invalid_argument("Patch: cylinder requires |kappa| d_y <= 1");
        }
        break;
    }
    if (is_five_dof() && std::abs(pose_.r.z()) > 1e-9) {
      throw std::invalid_argument("Patch: 5-DoF type requires r_z = 0");
    }
    if (boundary_ == BoundaryType::ConvexQuad) {
      if (std::abs(d_[4]) >= M_PI / 4.0) {
        throw std::invalid_argument("Patch: quad skew must be in (-pi/4, pi/4)");
      }
      const auto v = quad_vertices();
      for (int j = 0; j < 4; ++j) {
        const Vector2d e1 = v[(j + 1) % 4] - v[j];
        const Vector2d e2 = v[(j + 2) % 4] - v[(j + 1) % 4];
        if (e1.x() * e2.y() - e1.y() * e2.x() <= 0) {
          throw std::invalid_argument("Patch: quad is not convex");
        }
      }
    }
    if (cov_.size() > 0 && (cov_.rows() != param_count() || cov_.cols() != param_count())) {
      throw std::invalid_argument("Patch: covariance size != parameter DoF");
    }
  }

  SurfaceType surface_;
  BoundaryType boundary_;
  Vector2d k_;
  std::vector<double> d_;
  Pose pose_;
  Eigen::MatrixXd cov_;
};

namespace detail {

/// All seven surfaces share the implicit template
///   f(q) = a_x x^2 + a_y y^2 + a_z z^2 - 2 z
/// with per-type coefficients. Paraboloids have a_z = 0; the sphere and the
/// circular cylinder (axis along local x) pick up a kappa z^2 term.
inline Vector3d quadric_coeffs(SurfaceType s, const Vector2d& k) {
  switch (s) {
    case SurfaceType::Sphere: return Vector3d(k.x(), k.y(), k.x());
    case SurfaceType::CircularCylinder: return Vector3d(0.0, k.y(), k.y());
    default: return Vector3d(k.x(), k.y(), 0.0);
  }
}

/// z of the explicit lower-cap form z = kappa rho^2 / (1 + sqrt(1 - kappa^2 rho^2)),
/// the kappa->0 limit of which is the paraboloid height kappa rho^2 / 2.
inline double cap_height(double kappa, double rho2) {
  const double s = std::sqrt(std::max(0.0, 1.0 - kappa * kappa * rho2));
  return kappa * rho2 / (1.0 + s);
}

}  // namespace detail

/// Implicit surface value in the local frame for any patch type.
inline double local_implicit(const Vector3d& q_l, const Patch& p) {
  const Vector3d a = detail::quadric_coeffs(p.surface(), p.k());
  return a.x() * q_l.x() * q_l.x() + a.y() * q_l.y() * q_l.y() +
         a.z() * q_l.z() * q_l.z() - 2.0 * q_l.z();
}

/// Explicit surface point in the local frame for any patch type.
inline Vector3d local_explicit(const Vector2d& u, const Patch& p) {
  switch (p.surface()) {
    case SurfaceType::Sphere:
      return Vector3d(u.x(), u.y(), detail::cap_height(p.k().x(), u.squaredNorm()));
    case SurfaceType::CircularCylinder:
      return Vector3d(u.x(), u.y(), detail::cap_height(p.k().y(), u.y() * u.y()));
    default:
      return eval_explicit(u, p.k());
  }
}

inline double world_implicit(const Vector3d& q_w, const Patch& p) {
  return local_implicit(xform_rev(q_w, p.pose()), p);
}

inline Vector3d world_explicit(const Vector2d& u, const Patch& p) {
  return xform_fwd(local_explicit(u, p), p.pose());
}

/// Projection of a world point onto the local xy plane.
inline Vector2d project_uv(const Vector3d& q_w, const Patch& p) {
  const Vector3d q_l = xform_rev(q_w, p.pose());
  return Vector2d(q_l.x(), q_l.y());
}

/// Signed containment value: <= 0 inside the boundary, 0 on it.
inline double boundary_contains(const Vector2d& u, const Patch& p) {
  const auto& d = p.d();
  switch (p.boundary()) {
    case BoundaryType::Ellipse:
      return u.x() * u.x() / (d[0] * d[0]) + u.y() * u.y() / (d[1] * d[1]) - 1.0;
    case BoundaryType::Circle:
      return u.squaredNorm() / (d[0] * d[0]) - 1.0;
    case BoundaryType::Rect:
      return std::max(std::abs(u.x()) / d[0], std::abs(u.y()) / d[1]) - 1.0;
    case BoundaryType::ConvexQuad: {
      const auto v = p.quad_vertices();
      double worst = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < 4; ++j) {
        const Vector2d e = v[(j + 1) % 4] - v[j];
        const Vector2d w = u - v[j];
        // negative of the left-of-edge cross product, normalized by edge length
        const double val = -(e.x() * w.y() - e.y() * w.x()) / e.norm();
        worst = std::max(worst, val);
      }
      return worst;
    }
  }
  return 0.0;
}

/// Area inside the projected boundary, m^2.
inline double patch_area(const Patch& p) {
  const auto& d = p.d();
  switch (p.boundary()) {
    case BoundaryType::Ellipse: return M_PI * d[0] * d[1];
    case BoundaryType::Circle: return M_PI * d[0] * d[0];
    case BoundaryType::Rect: return 4.0 * d[0] * d[1];
    case BoundaryType::ConvexQuad: {
      const auto v = p.quad_vertices();
      double twice = 0.0;
      for (int j = 0; j < 4; ++j) {
        const Vector2d& a = v[j];
        const Vector2d& b = v[(j + 1) % 4];
        twice += a.x() * b.y() - b.x() * a.y();
      }
      return 0.5 * std::abs(twice);
    }
  }
  return 0.0;
}

namespace detail {

/// Closest point on an unbounded paraboloid (kx, ky) to q, in local frame.
/// Lagrange stationarity (I + 2 mu diag(k,0)) p = q + 2 mu z reduces to a
/// scalar secular equation g(mu) = f(p(mu)) = 0; g is strictly decreasing on
/// the interval where both denominators are positive, which holds the
/// projection root. Poles with a vanishing numerator contribute ring/apex
/// candidates (e.g. a query on the axis of a circular paraboloid).
inline bool paraboloid_closest(const Vector3d& q, const Vector2d& k,
                               Vector3d* best, double* best_d) {
  const double kx = k.x(), ky = k.y();
  const auto p_of_mu = [&](double mu) {
    return Vector3d(q.x() / (1.0 + 2.0 * mu * kx), q.y() / (1.0 + 2.0 * mu * ky),
                    q.z() + 2.0 * mu);
  };
  const auto g = [&](double mu) {
    const Vector3d p = p_of_mu(mu);
    return kx * p.x() * p.x() + ky * p.y() * p.y() - 2.0 * p.z();
  };

  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (double kk : {kx, ky}) {
    if (kk > 0) lo = std::max(lo, -0.5 / kk);
    else if (kk < 0) hi = std::min(hi, -0.5 / kk);
  }

  bool found = false;
  const auto consider = [&](const Vector3d& p) {
    const double dd = (p - q).norm();
    if (!found || dd < *best_d) {
      *best = p;
      *best_d = dd;
      found = true;
    }
  };

  // Bracket the principal root: g -> +inf at the left end, -inf at the right.
  const double span = std::max({1.0, std::abs(q.z()), q.head<2>().norm()});
  double a, b;
  bool have_a = false, have_b = false;
  if (std::isfinite(lo)) {
    for (double eps = 1e-3 * span; eps > 1e-300; eps *= 1e-2) {
      if (g(lo + eps) > 0) { a = lo + eps; have_a = true; break; }
    }
  } else {
    for (double m = -span; m > -1e12 * span; m *= 4.0) {
      if (g(m) > 0) { a = m; have_a = true; break; }
    }
  }
  if (std::isfinite(hi)) {
    for (double eps = 1e-3 * span; eps > 1e-300; eps *= 1e-2) {
      if (g(hi - eps) < 0) { b = hi - eps; have_b = true; break; }
    }
  } else {
    for (double m = span; m < 1e12 * span; m *= 4.0) {
      if (g(m) < 0) { b = m; have_b = true; break; }
    }
  }
  if (have_a && have_b && a < b) {
    for (int it = 0; it < 200 && b - a > 1e-16 * (1.0 + std::abs(a)); ++it) {
      const double mid = 0.5 * (a + b);
      (g(mid) > 0 ? a : b) = mid;
    }
    consider(p_of_mu(0.5 * (a + b)));
  }

  // Pole candidates: numerator must vanish for the stationarity equation to
  // stay consistent; the blocked coordinate is then free on a ring.
  const auto pole = [&](int axis) {
    const double kk = axis == 0 ? kx : ky;
    if (kk == 0.0 || std::abs(q[axis]) > 1e-12) return;
    const double mu = -0.5 / kk;
    const int other = 1 - axis;
    const double ko = other == 0 ? kx : ky;
    const double den = 1.0 + 2.0 * mu * ko;
    double po;
    if (std::abs(den) > 1e-12) {
      po = q[other] / den;
    } else if (std::abs(q[other]) < 1e-12) {
      po = 0.0;  // doubly degenerate; handled by the free-coordinate solve below
    } else {
      return;
    }
    const double pz = q.z() + 2.0 * mu;
    const double rad2 = (2.0 * pz - ko * po * po) / kk;
    if (rad2 < 0) return;
    Vector3d p;
    p[axis] = std::sqrt(rad2);
    p[other] = po;
    p.z() = pz;
    consider(p);
  };
  pole(0);
  pole(1);
  return found;
}

}  // namespace detail

/// Closest point on the unbounded patch surface to a world point, and the
/// Euclidean distance to it. Planes, spheres and cylinders are closed form;
/// paraboloids solve the Lagrange stationarity conditions.
inline ClosestPoint closest_point(const Vector3d& q_w, const Patch& p) {
  const Vector3d q = xform_rev(q_w, p.pose());
  ClosestPoint out;
  Vector3d pl = Vector3d::Zero();
  switch (p.surface()) {
    case SurfaceType::Plane:
      pl = Vector3d(q.x(), q.y(), 0.0);
      break;
    case SurfaceType::Sphere: {
      const double kappa = p.k().x();
      const Vector3d c(0, 0, 1.0 / kappa);
      const double radius = 1.0 / std::abs(kappa);
      const Vector3d w = q - c;
      const double wn = w.norm();
      pl = wn < 1e-12 ? Vector3d::Zero() : Vector3d(c + w * (radius / wn));
      break;
    }
    case SurfaceType::CircularCylinder: {
      const double kappa = p.k().y();
      const Vector2d c(0, 1.0 / kappa);
      const double radius = 1.0 / std::abs(kappa);
      const Vector2d w(q.y() - c.x(), q.z() - c.y());
      const double wn = w.norm();
      if (wn < 1e-12) {
        pl = Vector3d(q.x(), 0.0, 0.0);
      } else {
        pl = Vector3d(q.x(), c.x() + w.x() * radius / wn, c.y() + w.y() * radius / wn);
      }
      break;
    }
    default: {
      double dist = 0.0;
      if (!detail::paraboloid_closest(q, p.k(), &pl, &dist)) {
        // First-order (Taubin) fallback.
        const Vector2d k = p.k();
        const double f = eval_implicit(q, k);
        const Vector3d grad(2 * k.x() * q.x(), 2 * k.y() * q.y(), -2.0);
        pl = q - grad * (f / grad.squaredNorm());
        out.exact = false;
      }
      break;
    }
  }
  out.point = xform_fwd(pl, p.pose());
  out.distance = (pl - q).norm();
  return out;
}

/// Draw n points on the bounded patch surface: u uniform inside the boundary
/// (rejection sampling), mapped through the explicit form, plus isotropic
/// Gaussian noise of the given sigma. Deterministic for a fixed rng state.
inline std::vector<Vector3d> sample_patch(const Patch& p, int n, double sigma,
                                          Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_patch: n < 1");
  double bx = 0, by = 0;
  switch (p.boundary()) {
    case BoundaryType::Ellipse:
    case BoundaryType::Rect: bx = p.d()[0]; by = p.d()[1]; break;
    case BoundaryType::Circle: bx = by = p.d()[0]; break;
    case BoundaryType::ConvexQuad: {
      for (const auto& v : p.quad_vertices()) {
        bx = std::max(bx, std::abs(v.x()));
        by = std::max(by, std::abs(v.y()));
      }
      break;
    }
  }
  std::vector<Vector3d> pts;
  pts.reserve(n);
  while (static_cast<int>(pts.size()) < n) {
    const Vector2d u(rng.uniform(-bx, bx), rng.uniform(-by, by));
    if (boundary_contains(u, p) > 0.0) continue;
    Vector3d q = world_explicit(u, p);
    if (sigma > 0.0) {
      q += sigma * Vector3d(rng.normal(), rng.normal(), rng.normal());
    }
    pts.push_back(q);
  }
  return pts;
}

}  // namespace patchmap
