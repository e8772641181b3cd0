#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "srdl/common.hpp"

namespace srdl {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n == 0.0) throw numeric_error("normalized: zero vector");
  return a * (1.0 / n);
}

struct Mat3 {
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

  static Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
  }

  // Rotation about the camera vertical (y) axis; object-to-camera for a
  // KITTI rotation_y yaw.
  static Mat3 rot_y(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat3 r;
    r.m[0][0] = c;
    r.m[0][2] = s;
    r.m[1][1] = 1.0;
    r.m[2][0] = -s;
    r.m[2][2] = c;
    return r;
  }

  Vec3 apply(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }

  Mat3 transpose() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }

  double det() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }
};

struct Mat34 {
  double m[3][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}};

  Vec3 apply_point(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z + m[0][3],
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z + m[1][3],
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z + m[2][3]};
  }

  Mat3 rotation() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j];
    return r;
  }

  Vec3 translation() const { return {m[0][3], m[1][3], m[2][3]}; }
};

enum class View { left, right };

// KITTI-style calibration: P2/P3 pixel projections from the rectified camera
// frame, R0_rect rectification, Tr_velo_to_cam rigid LIDAR-to-camera.
struct CameraCalib {
  Mat34 P_left;
  Mat34 P_right;
  Mat3 R0_rect = Mat3::identity();
  Mat34 Tr_velo_to_cam;

  const Mat34& P(View v) const { return v == View::left ? P_left : P_right; }

  void validate() const {
    for (const Mat34* p : {&P_left, &P_right}) {
      if (std::fabs(p->rotation().det()) < 1e-12)
        throw error("CameraCalib: projection matrix is rank deficient");
    }
    auto check_orthonormal = [](const Mat3& r, const char* name) {
      const Mat3 rt = r.transpose();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double v = 0.0;
          for (int k = 0; k < 3; ++k) v += rt.m[i][k] * r.m[k][j];
          const double want = i == j ? 1.0 : 0.0;
          if (std::fabs(v - want) > 1e-3)
            throw error(std::string("CameraCalib: ") + name + " rotation is not orthonormal");
        }
    };
    check_orthonormal(R0_rect, "R0_rect");
    check_orthonormal(Tr_velo_to_cam.rotation(), "Tr_velo_to_cam");
  }

  Vec3 velo_to_rect(const Vec3& p) const { return R0_rect.apply(Tr_velo_to_cam.apply_point(p)); }

  Vec3 rect_to_velo(const Vec3& p) const {
    const Vec3 cam = R0_rect.transpose().apply(p);
    const Mat3 rinv = Tr_velo_to_cam.rotation().transpose();
    return rinv.apply(cam - Tr_velo_to_cam.translation());
  }
};

// Oriented 3D box, KITTI camera convention: x right, y down, z forward;
// (x,y,z) is the BOTTOM face center, theta is the yaw about the y axis.
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double w = 1.0, h = 1.0, l = 1.0;
  double theta = 0.0;

  static Box3D make(double x, double y, double z, double w, double h, double l, double theta) {
    if (w <= 0.0 || h <= 0.0 || l <= 0.0)
      throw error(str_printf("Box3D: dimensions must be positive (w=%g h=%g l=%g)", w, h, l));
    Box3D b{x, y, z, w, h, l, normalize_angle(theta)};
    return b;
  }

  Vec3 bottom_center() const { return {x, y, z}; }
  Vec3 volumetric_center() const { return {x, y - h / 2.0, z}; }
  double volume() const { return w * h * l; }
};

// Half space n.p + d >= 0; the normal points toward the inside.
struct Plane {
  Vec3 n;
  double d = 0.0;
  double eval(const Vec3& p) const { return dot(n, p) + d; }
};

inline Plane plane_from_points(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& inside) {
  Vec3 n = normalized(cross(b - a, c - a));
  double d = -dot(n, a);
  if (n.x * inside.x + n.y * inside.y + n.z * inside.z + d < 0.0) {
    n = n * -1.0;
    d = -d;
  }
  return {n, d};
}

// Convex region from back-projecting a 2D box over a depth range, in the
// rectified camera frame.
struct Frustum {
  std::array<Plane, 6> planes;
  std::array<Vec3, 8> corners;  // near (umin,vmin),(umax,vmin),(umax,vmax),(umin,vmax), then far
};

// Intersection of two frustums: up to 12 half spaces plus the polytope
// corners. `empty` marks a void intersection; an empty region contains
// nothing.
struct FusedRegion {
  std::vector<Plane> planes;
  std::vector<Vec3> corners;
  bool empty = true;
};

struct Box2D {
  double u_min = 0.0, v_min = 0.0, u_max = 0.0, v_max = 0.0;

  void validate() const {
    if (!(u_min < u_max) || !(v_min < v_max))
      throw error(str_printf("Box2D: degenerate box (%g,%g,%g,%g)", u_min, v_min, u_max, v_max));
  }
  double height() const { return v_max - v_min; }
};

struct DepthRange {
  double z_near = 0.0, z_far = 0.0;

  void validate() const {
    if (!(z_near > 0.0) || !(z_near < z_far))
      throw error(str_printf("DepthRange: need 0 < z_near < z_far, got (%g,%g)", z_near, z_far));
  }
};

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

struct ProjectedPoints {
  std::vector<double> u, v, depth;
  std::vector<char> valid;  // false where depth <= 1e-6 m
};

inline constexpr double kMinProjectionDepth = 1e-6;

// Projects LIDAR-frame points through Tr_velo_to_cam, R0_rect and the view's
// P matrix. Depth is the rectified-camera z.
inline ProjectedPoints project_points(const CameraCalib& calib, View view, const std::vector<Vec3>& points_velo) {
  ProjectedPoints out;
  const std::size_t n = points_velo.size();
  out.u.resize(n);
  out.v.resize(n);
  out.depth.resize(n);
  out.valid.resize(n);
  const Mat34& P = calib.P(view);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 rect = calib.velo_to_rect(points_velo[i]);
    out.depth[i] = rect.z;
    if (rect.z <= kMinProjectionDepth) {
      out.valid[i] = 0;
      out.u[i] = out.v[i] = 0.0;
      continue;
    }
    const Vec3 h = P.apply_point(rect);
    if (h.z <= kMinProjectionDepth) {
      out.valid[i] = 0;
      out.u[i] = out.v[i] = 0.0;
      continue;
    }
    out.u[i] = h.x / h.z;
    out.v[i] = h.y / h.z;
    out.valid[i] = 1;
  }
  return out;
}

// Projects a single rectified-camera-frame point; returns (u, v).
inline std::optional<std::array<double, 2>> project_rect_point(const CameraCalib& calib, View view,
                                                               const Vec3& rect) {
  const Vec3 h = calib.P(view).apply_point(rect);
  if (h.z <= kMinProjectionDepth) return std::nullopt;
  return std::array<double, 2>{h.x / h.z, h.y / h.z};
}

// Analytic inverse of the pixel projection at a fixed rectified depth z:
// solves the two linear equations in (X, Y) left by the homogeneous divide.
inline Vec3 back_project(const CameraCalib& calib, View view, double u, double v, double z) {
  const Mat34& P = calib.P(view);
  // u*(p20 X + p21 Y + p22 z + p23) = p00 X + p01 Y + p02 z + p03, same for v
  const double a00 = P.m[0][0] - u * P.m[2][0];
  const double a01 = P.m[0][1] - u * P.m[2][1];
  const double b0 = u * (P.m[2][2] * z + P.m[2][3]) - (P.m[0][2] * z + P.m[0][3]);
  const double a10 = P.m[1][0] - v * P.m[2][0];
  const double a11 = P.m[1][1] - v * P.m[2][1];
  const double b1 = v * (P.m[2][2] * z + P.m[2][3]) - (P.m[1][2] * z + P.m[1][3]);
  const double det = a00 * a11 - a01 * a10;
  if (std::fabs(det) < 1e-14) throw numeric_error("back_project: singular projection");
  return {(b0 * a11 - b1 * a01) / det, (a00 * b1 - a10 * b0) / det, z};
}

// ---------------------------------------------------------------------------
// Frustums
// ---------------------------------------------------------------------------

inline Frustum frustum_from_box2d(const CameraCalib& calib, View view, const Box2D& box,
                                  const DepthRange& range) {
  box.validate();
  range.validate();
  const std::array<std::array<double, 2>, 4> px = {{{box.u_min, box.v_min},
                                                    {box.u_max, box.v_min},
                                                    {box.u_max, box.v_max},
                                                    {box.u_min, box.v_max}}};
  Frustum f;
  for (int i = 0; i < 4; ++i) {
    f.corners[static_cast<std::size_t>(i)] = back_project(calib, view, px[static_cast<std::size_t>(i)][0],
                                                          px[static_cast<std::size_t>(i)][1], range.z_near);
    f.corners[static_cast<std::size_t>(i + 4)] = back_project(calib, view, px[static_cast<std::size_t>(i)][0],
                                                              px[static_cast<std::size_t>(i)][1], range.z_far);
  }
  Vec3 centroid{0, 0, 0};
  for (const Vec3& c : f.corners) centroid = centroid + c * 0.125;

  f.planes[0] = plane_from_points(f.corners[0], f.corners[1], f.corners[2], centroid);  // near
  f.planes[1] = plane_from_points(f.corners[4], f.corners[6], f.corners[5], centroid);  // far
  for (int i = 0; i < 4; ++i) {  // side faces between pixel corners i and i+1
    const int j = (i + 1) % 4;
    f.planes[static_cast<std::size_t>(2 + i)] =
        plane_from_points(f.corners[static_cast<std::size_t>(i)], f.corners[static_cast<std::size_t>(j)],
                          f.corners[static_cast<std::size_t>(4 + i)], centroid);
  }
  for (const Vec3& c : f.corners)
    for (const Plane& p : f.planes)
      if (p.eval(c) < -1e-6) throw numeric_error("frustum_from_box2d: corner violates a face plane");
  return f;
}

namespace detail_geom {

inline bool plane_close(const Plane& a, const Plane& b) {
  return dot(a.n, b.n) > 1.0 - 1e-9 && std::fabs(a.d - b.d) < 1e-9;
}

// Vertices of the polytope cut out by a set of half spaces, by enumerating
// plane triples. Assumes a bounded region at desk scale.
inline std::vector<Vec3> polytope_vertices(const std::vector<Plane>& planes) {
  std::vector<Vec3> verts;
  const std::size_t n = planes.size();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      for (std::size_t c = b + 1; c < n; ++c) {
        Mat3 m;
        m.m[0][0] = planes[a].n.x, m.m[0][1] = planes[a].n.y, m.m[0][2] = planes[a].n.z;
        m.m[1][0] = planes[b].n.x, m.m[1][1] = planes[b].n.y, m.m[1][2] = planes[b].n.z;
        m.m[2][0] = planes[c].n.x, m.m[2][1] = planes[c].n.y, m.m[2][2] = planes[c].n.z;
        const double det = m.det();
        if (std::fabs(det) < 1e-10) continue;
        const Vec3 rhs{-planes[a].d, -planes[b].d, -planes[c].d};
        // Cramer
        Mat3 mx = m, my = m, mz = m;
        mx.m[0][0] = rhs.x, mx.m[1][0] = rhs.y, mx.m[2][0] = rhs.z;
        my.m[0][1] = rhs.x, my.m[1][1] = rhs.y, my.m[2][1] = rhs.z;
        mz.m[0][2] = rhs.x, mz.m[1][2] = rhs.y, mz.m[2][2] = rhs.z;
        const Vec3 v{mx.det() / det, my.det() / det, mz.det() / det};
        bool inside = true;
        for (const Plane& p : planes) {
          if (p.eval(v) < -1e-7) {
            inside = false;
            break;
          }
        }
        if (!inside) continue;
        bool dup = false;
        for (const Vec3& u : verts) {
          if (norm(u - v) < 1e-7) {
            dup = true;
            break;
          }
        }
        if (!dup) verts.push_back(v);
      }
  return verts;
}

}  // namespace detail_geom

// Plane-set union of the two frustums. An empty intersection is reported,
// not thrown.
inline FusedRegion intersect_frustums(const Frustum& left, const Frustum& right) {
  FusedRegion region;
  for (const Plane& p : left.planes) region.planes.push_back(p);
  for (const Plane& p : right.planes) {
    bool dup = false;
    for (const Plane& q : region.planes) dup = dup || detail_geom::plane_close(p, q);
    if (!dup) region.planes.push_back(p);
  }
  region.corners = detail_geom::polytope_vertices(region.planes);
  region.empty = region.corners.size() < 4;
  if (region.empty) region.corners.clear();
  return region;
}

inline constexpr double kRegionBoundaryTol = 1e-9;

inline std::vector<char> points_in_region(const std::vector<Vec3>& points, const std::vector<Plane>& planes,
                                          bool empty = false) {
  std::vector<char> mask(points.size(), 0);
  if (empty) return mask;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool inside = true;
    for (const Plane& p : planes) {
      if (p.eval(points[i]) < -kRegionBoundaryTol) {
        inside = false;
        break;
      }
    }
    mask[i] = inside ? 1 : 0;
  }
  return mask;
}

inline std::vector<char> points_in_region(const std::vector<Vec3>& points, const Frustum& f) {
  return points_in_region(points, std::vector<Plane>(f.planes.begin(), f.planes.end()));
}

inline std::vector<char> points_in_region(const std::vector<Vec3>& points, const FusedRegion& r) {
  return points_in_region(points, r.planes, r.empty);
}

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

// Canonical corner order: bottom face counter-clockwise viewed from above,
// starting at object-frame (+l/2, +w/2); corners 4..7 are the top face in
// matching order (corner i+4 sits above corner i).
inline std::array<Vec3, 8> box_corners(const Box3D& b) {
  const Mat3 rot = Mat3::rot_y(b.theta);
  const double hl = b.l / 2.0, hw = b.w / 2.0;
  const std::array<std::array<double, 2>, 4> foot = {{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec3, 8> out;
  const Vec3 c = b.bottom_center();
  for (int i = 0; i < 4; ++i) {
    const Vec3 bottom{foot[static_cast<std::size_t>(i)][0], 0.0, foot[static_cast<std::size_t>(i)][1]};
    const Vec3 top{foot[static_cast<std::size_t>(i)][0], -b.h, foot[static_cast<std::size_t>(i)][1]};
    out[static_cast<std::size_t>(i)] = c + rot.apply(bottom);
    out[static_cast<std::size_t>(i + 4)] = c + rot.apply(top);
  }
  return out;
}

// Rotates into the box frame, then an axis-aligned half-extent test.
// Boundaries are inside (closed box).
inline std::vector<char> points_in_box3d(const std::vector<Vec3>& points, const Box3D& b) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  std::vector<char> mask(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double dx = points[i].x - b.x;
    const double dz = points[i].z - b.z;
    const double lx = c * dx - s * dz;   // along length
    const double lz = s * dx + c * dz;   // along width
    const bool in_plan = std::fabs(lx) <= b.l / 2.0 && std::fabs(lz) <= b.w / 2.0;
    const bool in_height = points[i].y <= b.y && points[i].y >= b.y - b.h;
    mask[i] = (in_plan && in_height) ? 1 : 0;
  }
  return mask;
}

// Adds xi to each dimension; center and yaw stay put. Negative xi shrinks.
inline Box3D resize_box(const Box3D& b, double xi) {
  if (b.w + xi <= 0.0 || b.h + xi <= 0.0 || b.l + xi <= 0.0)
    throw error(str_printf("resize_box: xi=%g makes dimensions non-positive (w=%g h=%g l=%g)", xi, b.w, b.h, b.l));
  Box3D out = b;
  out.w += xi;
  out.h += xi;
  out.l += xi;
  return out;
}

// ---------------------------------------------------------------------------
// Rotated IoU (bird's eye view + 3D)
// ---------------------------------------------------------------------------

namespace detail_geom {

struct P2 {
  double x = 0.0, z = 0.0;
};

inline double shoelace(const std::vector<P2>& poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const P2& p = poly[i];
    const P2& q = poly[(i + 1) % n];
    a += p.x * q.z - q.x * p.z;
  }
  return 0.5 * a;
}

inline constexpr double kClipTol = 1e-9;

// Sutherland-Hodgman: clip a convex subject polygon by a convex CCW clip
// polygon. Points within kClipTol of a clip edge count as inside.
inline std::vector<P2> clip_convex(std::vector<P2> subject, const std::vector<P2>& clip) {
  for (std::size_t e = 0; e < clip.size() && subject.size() >= 3; ++e) {
    const P2 a = clip[e];
    const P2 b = clip[(e + 1) % clip.size()];
    const double ex = b.x - a.x, ez = b.z - a.z;
    std::vector<P2> out;
    out.reserve(subject.size() + 1);
    const std::size_t n = subject.size();
    for (std::size_t i = 0; i < n; ++i) {
      const P2 p = subject[i];
      const P2 q = subject[(i + 1) % n];
      const double dp = ex * (p.z - a.z) - ez * (p.x - a.x);  // >0: left of edge, interior for CCW clip
      const double dq = ex * (q.z - a.z) - ez * (q.x - a.x);
      const bool pin = dp >= -kClipTol;
      const bool qin = dq >= -kClipTol;
      if (pin) out.push_back(p);
      if (pin != qin) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.z + t * (q.z - p.z)});
      }
    }
    subject = std::move(out);
  }
  if (subject.size() < 3) subject.clear();
  return subject;
}

inline std::vector<P2> footprint_ccw(const Box3D& b) {
  const auto corners = box_corners(b);
  std::vector<P2> poly(4);
  for (int i = 0; i < 4; ++i) poly[static_cast<std::size_t>(i)] = {corners[static_cast<std::size_t>(i)].x,
                                                                   corners[static_cast<std::size_t>(i)].z};
  if (shoelace(poly) < 0.0) std::swap(poly[1], poly[3]);
  return poly;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const std::vector<P2> pa = footprint_ccw(a);
  const std::vector<P2> pb = footprint_ccw(b);
  const std::vector<P2> inter = clip_convex(pa, pb);
  double area = inter.empty() ? 0.0 : std::fabs(shoelace(inter));
  // the intersection of convex sets cannot exceed either operand
  area = std::min({area, a.w * a.l, b.w * b.l});
  return std::max(area, 0.0);
}

// Deterministic argument order so iou(a,b) == iou(b,a) bitwise.
inline bool box_less(const Box3D& a, const Box3D& b) {
  const double ka[7] = {a.x, a.y, a.z, a.w, a.h, a.l, a.theta};
  const double kb[7] = {b.x, b.y, b.z, b.w, b.h, b.l, b.theta};
  for (int i = 0; i < 7; ++i) {
    if (ka[i] < kb[i]) return true;
    if (ka[i] > kb[i]) return false;
  }
  return false;
}

}  // namespace detail_geom

inline double iou_bev(const Box3D& a_in, const Box3D& b_in) {
  const bool flip = detail_geom::box_less(b_in, a_in);
  const Box3D& a = flip ? b_in : a_in;
  const Box3D& b = flip ? a_in : b_in;
  const double inter = detail_geom::bev_intersection_area(a, b);
  const double uni = a.w * a.l + b.w * b.l - inter;
  if (uni <= 0.0) return 0.0;
  return std::min(std::max(inter / uni, 0.0), 1.0);
}

inline double iou_3d(const Box3D& a_in, const Box3D& b_in) {
  const bool flip = detail_geom::box_less(b_in, a_in);
  const Box3D& a = flip ? b_in : a_in;
  const Box3D& b = flip ? a_in : b_in;
  const double inter_area = detail_geom::bev_intersection_area(a, b);
  // y points down: the box occupies [y-h, y]
  const double y_lo = std::max(a.y - a.h, b.y - b.h);
  const double y_hi = std::min(a.y, b.y);
  const double overlap = std::max(0.0, y_hi - y_lo);
  const double inter = inter_area * overlap;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::min(std::max(inter / uni, 0.0), 1.0);
}

// ---------------------------------------------------------------------------
// Polytope volume (frustums and fused regions)
// ---------------------------------------------------------------------------

// Exact volume of a convex polytope given as half spaces plus its vertex
// set: each face polygon is fanned into tetrahedra against the centroid.
inline double polytope_volume(const std::vector<Plane>& planes_in, const std::vector<Vec3>& verts) {
  if (verts.size() < 4) return 0.0;
  std::vector<Plane> planes;
  for (const Plane& p : planes_in) {
    bool dup = false;
    for (const Plane& q : planes) dup = dup || detail_geom::plane_close(p, q);
    if (!dup) planes.push_back(p);
  }
  Vec3 centroid{0, 0, 0};
  for (const Vec3& v : verts) centroid = centroid + v * (1.0 / static_cast<double>(verts.size()));

  double volume = 0.0;
  for (const Plane& p : planes) {
    std::vector<Vec3> face;
    for (const Vec3& v : verts)
      if (std::fabs(p.eval(v)) < 1e-6) face.push_back(v);
    if (face.size() < 3) continue;
    // order face vertices around their centroid within the plane
    Vec3 fc{0, 0, 0};
    for (const Vec3& v : face) fc = fc + v * (1.0 / static_cast<double>(face.size()));
    const Vec3 ref = normalized(face[0] - fc);
    const Vec3 axis = p.n;
    const Vec3 ref2 = cross(axis, ref);
    std::vector<std::pair<double, Vec3>> ordered;
    for (const Vec3& v : face) {
      const Vec3 d = v - fc;
      ordered.emplace_back(std::atan2(dot(d, ref2), dot(d, ref)), v);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      const Vec3& v0 = ordered[i].second;
      const Vec3& v1 = ordered[(i + 1) % ordered.size()].second;
      volume += std::fabs(dot(v0 - centroid, cross(v1 - centroid, fc - centroid))) / 6.0;
    }
  }
  return volume;
}

inline double frustum_volume(const Frustum& f) {
  return polytope_volume(std::vector<Plane>(f.planes.begin(), f.planes.end()),
                         std::vector<Vec3>(f.corners.begin(), f.corners.end()));
}

inline double region_volume(const FusedRegion& r) {
  if (r.empty) return 0.0;
  return polytope_volume(r.planes, r.corners);
}

// ---------------------------------------------------------------------------
// Yaw-aligned box fitting (used by the inference pipeline)
// ---------------------------------------------------------------------------

namespace detail_geom {

// Andrew monotone chain; returns hull in CCW order.
inline std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end(), [](const P2& a, const P2& b) {
    return a.x < b.x || (a.x == b.x && a.z < b.z);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const P2& a, const P2& b) { return a.x == b.x && a.z == b.z; }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<P2> hull(2 * n);
  std::size_t k = 0;
  auto cross2 = [](const P2& o, const P2& a, const P2& b) {
    return (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x);
  };
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace detail_geom

// Fits the minimum-volume yaw-aligned box around camera-frame points:
// rotating calipers over the BEV hull picks the yaw, the vertical extent is
// yaw independent.
inline Box3D fit_yaw_aligned_box(const std::vector<Vec3>& points) {
  if (points.size() < 3) throw error("fit_yaw_aligned_box: need at least 3 points");
  std::vector<detail_geom::P2> flat(points.size());
  double y_min = points[0].y, y_max = points[0].y;
  for (std::size_t i = 0; i < points.size(); ++i) {
    flat[i] = {points[i].x, points[i].z};
    y_min = std::min(y_min, points[i].y);
    y_max = std::max(y_max, points[i].y);
  }
  const std::vector<detail_geom::P2> hull = detail_geom::convex_hull(flat);

  double best_area = std::numeric_limits<double>::infinity();
  double best_yaw = 0.0, best_cx = 0.0, best_cz = 0.0, best_el = 1e-6, best_ew = 1e-6;
  const std::size_t n = hull.size();
  auto consider = [&](double yaw) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    double lmin = 1e300, lmax = -1e300, wmin = 1e300, wmax = -1e300;
    for (const auto& p : hull.empty() ? flat : hull) {
      // rotate into the candidate frame (inverse of rot_y on the xz plane)
      const double lx = c * p.x - s * p.z;
      const double lz = s * p.x + c * p.z;
      lmin = std::min(lmin, lx);
      lmax = std::max(lmax, lx);
      wmin = std::min(wmin, lz);
      wmax = std::max(wmax, lz);
    }
    const double el = std::max(lmax - lmin, 1e-6);
    const double ew = std::max(wmax - wmin, 1e-6);
    if (el * ew < best_area - 1e-15) {
      best_area = el * ew;
      best_yaw = yaw;
      best_el = el;
      best_ew = ew;
      const double mx = (lmin + lmax) / 2.0, mz = (wmin + wmax) / 2.0;
      // rotate the local center back to the camera frame
      best_cx = c * mx + s * mz;
      best_cz = -s * mx + c * mz;
    }
  };
  if (n >= 3) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = hull[i];
      const auto& b = hull[(i + 1) % n];
      consider(std::atan2(-(b.z - a.z), b.x - a.x));
    }
  } else {
    consider(0.0);
  }
  return Box3D::make(best_cx, y_max, best_cz, best_ew, std::max(y_max - y_min, 1e-6), best_el, best_yaw);
}

}  // namespace srdl
