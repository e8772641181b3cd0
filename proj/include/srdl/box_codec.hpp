#pragma once

#include <array>
#include <vector>

#include "srdl/geometry.hpp"

namespace srdl {

// Regression parameterizations of a box against a proposal. Geometry part
// sizes: axis-aligned 6, eight corners 24, four corners + two heights 10,
// three points + two heights 11. Orientation is coded separately as
// (cos theta, sin theta).
enum class BoxScheme { axis_aligned, corners8, corners4_heights2, points3_heights2 };

inline int scheme_dim(BoxScheme s) {
  switch (s) {
    case BoxScheme::axis_aligned: return 6;
    case BoxScheme::corners8: return 24;
    case BoxScheme::corners4_heights2: return 10;
    case BoxScheme::points3_heights2: return 11;
  }
  throw error("scheme_dim: bad scheme");
}

inline const char* scheme_name(BoxScheme s) {
  switch (s) {
    case BoxScheme::axis_aligned: return "axis_aligned";
    case BoxScheme::corners8: return "corners8";
    case BoxScheme::corners4_heights2: return "corners4_heights2";
    case BoxScheme::points3_heights2: return "points3_heights2";
  }
  throw error("scheme_name: bad scheme");
}

inline BoxScheme scheme_from_name(const std::string& name) {
  for (BoxScheme s : {BoxScheme::axis_aligned, BoxScheme::corners8, BoxScheme::corners4_heights2,
                      BoxScheme::points3_heights2})
    if (name == scheme_name(s)) return s;
  throw config_error("unknown box encoding scheme: " + name);
}

struct EncodedBox {
  BoxScheme scheme = BoxScheme::points3_heights2;
  std::vector<double> values;
  double cos_theta = 1.0;
  double sin_theta = 0.0;
};

inline std::array<double, 2> encode_orientation(double theta) {
  return {std::cos(theta), std::sin(theta)};
}

// Normalizes the pair onto the unit circle before atan2.
inline double decode_orientation(double cos_t, double sin_t) {
  const double n = std::hypot(cos_t, sin_t);
  if (n <= 1e-6) throw error("decode_orientation: near-zero (cos, sin) pair");
  return std::atan2(sin_t / n, cos_t / n);
}

namespace detail_codec {

// Proposal-local frame used for every positional offset: planar components
// along the proposal's length/width axes divided by the BEV diagonal,
// vertical component along up (-y) divided by the proposal height.
struct ProposalFrame {
  Vec3 len_axis, wid_axis;
  double diag = 0.0;
  double height = 0.0;

  explicit ProposalFrame(const Box3D& p) {
    if (p.w <= 0.0 || p.h <= 0.0 || p.l <= 0.0) throw error("encode: degenerate proposal box");
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    len_axis = {c, 0.0, -s};
    wid_axis = {s, 0.0, c};
    diag = std::sqrt(p.l * p.l + p.w * p.w);
    height = p.h;
  }

  // offset triplet (along_length, along_width, along_up), normalized
  std::array<double, 3> offset(const Vec3& gt_pt, const Vec3& prop_pt) const {
    const Vec3 v = gt_pt - prop_pt;
    return {dot(v, len_axis) / diag, dot(v, wid_axis) / diag, -v.y / height};
  }

  Vec3 reconstruct(const Vec3& prop_pt, double d_len, double d_wid, double d_up) const {
    return prop_pt + len_axis * (d_len * diag) + wid_axis * (d_wid * diag) + Vec3{0.0, -d_up * height, 0.0};
  }
};

}  // namespace detail_codec

inline EncodedBox encode(const Box3D& gt, const Box3D& proposal, BoxScheme scheme);
inline Box3D decode(const EncodedBox& enc, const Box3D& proposal);

// Residual groups of the 11-D scheme; all four vanish on true encodings.
struct ConstraintResiduals {
  double width = 0.0;        // two redundant width estimates disagreeing
  double length = 0.0;       // same for length
  double height = 0.0;       // corner-diagonal vs height-pair estimate
  double half_height = 0.0;  // center sits at half height along the diagonal
  double max() const { return std::max({width, length, height, half_height}); }
};

inline ConstraintResiduals constraint_residuals(const EncodedBox& enc);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

inline EncodedBox encode(const Box3D& gt, const Box3D& proposal, BoxScheme scheme) {
  const detail_codec::ProposalFrame frame(proposal);
  EncodedBox out;
  out.scheme = scheme;
  const auto orient = encode_orientation(gt.theta);
  out.cos_theta = orient[0];
  out.sin_theta = orient[1];

  const auto gc = box_corners(gt);
  const auto pc = box_corners(proposal);
  auto push_offset = [&](const Vec3& g, const Vec3& p) {
    const auto o = frame.offset(g, p);
    out.values.push_back(o[0]);
    out.values.push_back(o[1]);
    out.values.push_back(o[2]);
  };
  // up-positive offsets between corresponding faces, so identity encodes to 0
  const double dh1 = (proposal.y - gt.y) / proposal.h;
  const double dh2 = ((proposal.y - proposal.h) - (gt.y - gt.h)) / proposal.h;

  switch (scheme) {
    case BoxScheme::axis_aligned: {
      const auto o = frame.offset(gt.bottom_center(), proposal.bottom_center());
      out.values = {o[0], o[1], o[2], (gt.l - proposal.l) / frame.diag, (gt.w - proposal.w) / frame.diag,
                    (gt.h - proposal.h) / frame.height};
      break;
    }
    case BoxScheme::corners8: {
      for (int i = 0; i < 8; ++i) push_offset(gc[static_cast<std::size_t>(i)], pc[static_cast<std::size_t>(i)]);
      break;
    }
    case BoxScheme::corners4_heights2: {
      for (int i = 0; i < 4; ++i) {
        const auto o = frame.offset(gc[static_cast<std::size_t>(i)], pc[static_cast<std::size_t>(i)]);
        out.values.push_back(o[0]);
        out.values.push_back(o[1]);
      }
      out.values.push_back(dh1);
      out.values.push_back(dh2);
      break;
    }
    case BoxScheme::points3_heights2: {
      // three points on the cube diagonal: bottom corner 0, the volumetric
      // center, and the opposite top corner (above footprint corner 2)
      push_offset(gc[0], pc[0]);
      push_offset(gt.volumetric_center(), proposal.volumetric_center());
      push_offset(gc[6], pc[6]);
      out.values.push_back(dh1);
      out.values.push_back(dh2);
      break;
    }
  }
  if (static_cast<int>(out.values.size()) != scheme_dim(scheme))
    throw error("encode: internal dimension mismatch");
  for (double v : out.values)
    if (!std::isfinite(v)) throw numeric_error("encode: non-finite encoding value");
  return out;
}

namespace detail_codec {

// Footprint sign pattern of the canonical corner order: corner i sits at
// (sign_l * l/2, sign_w * w/2) in the box frame.
inline constexpr std::array<std::array<double, 2>, 4> kFootSign = {{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};

struct DecodedPoints {
  std::vector<Vec3> pts;  // reconstructed gt points, camera frame
};

}  // namespace detail_codec

inline Box3D decode(const EncodedBox& enc, const Box3D& proposal) {
  if (static_cast<int>(enc.values.size()) != scheme_dim(enc.scheme))
    throw shape_error(str_printf("decode: %zu values for scheme %s (want %d)", enc.values.size(),
                                 scheme_name(enc.scheme), scheme_dim(enc.scheme)));
  const detail_codec::ProposalFrame frame(proposal);
  const double theta = decode_orientation(enc.cos_theta, enc.sin_theta);
  const auto pc = box_corners(proposal);
  const std::vector<double>& v = enc.values;

  // gt-frame axes for extracting dimensions from reconstructed points
  const double c = std::cos(theta), s = std::sin(theta);
  const Vec3 g_len{c, 0.0, -s};
  const Vec3 g_wid{s, 0.0, c};

  auto rec = [&](const Vec3& prop_pt, int base) {
    return frame.reconstruct(prop_pt, v[static_cast<std::size_t>(base)], v[static_cast<std::size_t>(base + 1)],
                             v[static_cast<std::size_t>(base + 2)]);
  };

  Box3D out = proposal;
  switch (enc.scheme) {
    case BoxScheme::axis_aligned: {
      const Vec3 center = frame.reconstruct(proposal.bottom_center(), v[0], v[1], v[2]);
      return Box3D::make(center.x, center.y, center.z, proposal.w + v[4] * frame.diag,
                         proposal.h + v[5] * frame.height, proposal.l + v[3] * frame.diag, theta);
    }
    case BoxScheme::corners8: {
      std::array<Vec3, 8> g;
      for (int i = 0; i < 8; ++i) g[static_cast<std::size_t>(i)] = rec(pc[static_cast<std::size_t>(i)], 3 * i);
      // sign-weighted projections: the center terms cancel, each corner
      // contributes a half extent, so the sums equal 4l and 4w
      double lsum = 0.0, wsum = 0.0;
      for (int i = 0; i < 8; ++i) {
        const auto sign = detail_codec::kFootSign[static_cast<std::size_t>(i % 4)];
        lsum += sign[0] * dot(g[static_cast<std::size_t>(i)], g_len);
        wsum += sign[1] * dot(g[static_cast<std::size_t>(i)], g_wid);
      }
      double y_bot = 0.0, y_top = 0.0;
      Vec3 planar{0, 0, 0};
      for (int i = 0; i < 4; ++i) y_bot += g[static_cast<std::size_t>(i)].y / 4.0;
      for (int i = 4; i < 8; ++i) y_top += g[static_cast<std::size_t>(i)].y / 4.0;
      for (int i = 0; i < 8; ++i) planar = planar + g[static_cast<std::size_t>(i)] * 0.125;
      return Box3D::make(planar.x, y_bot, planar.z, wsum / 4.0, y_bot - y_top, lsum / 4.0, theta);
    }
    case BoxScheme::corners4_heights2: {
      std::array<Vec3, 4> g;
      for (int i = 0; i < 4; ++i) {
        const Vec3 p = pc[static_cast<std::size_t>(i)];
        g[static_cast<std::size_t>(i)] =
            p + frame.len_axis * (v[static_cast<std::size_t>(2 * i)] * frame.diag) +
            frame.wid_axis * (v[static_cast<std::size_t>(2 * i + 1)] * frame.diag);
      }
      double lsum = 0.0, wsum = 0.0;
      Vec3 planar{0, 0, 0};
      for (int i = 0; i < 4; ++i) {
        const auto sign = detail_codec::kFootSign[static_cast<std::size_t>(i)];
        lsum += sign[0] * dot(g[static_cast<std::size_t>(i)], g_len);
        wsum += sign[1] * dot(g[static_cast<std::size_t>(i)], g_wid);
        planar = planar + g[static_cast<std::size_t>(i)] * 0.25;
      }
      const double dh1 = v[8], dh2 = v[9];
      const double y = proposal.y - dh1 * proposal.h;
      const double h = proposal.h + (dh2 - dh1) * proposal.h;
      return Box3D::make(planar.x, y, planar.z, wsum / 2.0, h, lsum / 2.0, theta);
    }
    case BoxScheme::points3_heights2: {
      const Vec3 g1 = rec(pc[0], 0);
      const Vec3 g2 = rec(proposal.volumetric_center(), 3);
      const Vec3 g3 = rec(pc[6], 6);
      const double dh1 = v[9], dh2 = v[10];

      // heights: three redundant estimates (face pair, corner diagonal, center)
      const double h_faces = proposal.h + (dh2 - dh1) * proposal.h;
      const double h_diag = g1.y - g3.y;
      const double h_center = 2.0 * (g1.y - g2.y);
      const double h = (h_faces + h_diag + h_center) / 3.0;

      // bottom-face y from the height channel and from the corner, averaged
      const double y = ((proposal.y - dh1 * proposal.h) + g1.y) / 2.0;

      // planar center: midpoint of the diagonal and the center point agree
      const Vec3 mid = (g1 + g3) * 0.5;
      const double cx = (mid.x + g2.x) / 2.0;
      const double cz = (mid.z + g2.z) / 2.0;

      // dimensions from the diagonal (c1 at (+l/2,+w/2), c3 above (-l/2,-w/2))
      const Vec3 d13 = g1 - g3;
      const double l_diag = dot(d13, g_len);
      const double w_diag = dot(d13, g_wid);
      // center-based estimates double the half offsets
      const Vec3 d12 = g1 - g2;
      const double l_center = 2.0 * dot(d12, g_len);
      const double w_center = 2.0 * dot(d12, g_wid);
      const double l = (l_diag + l_center) / 2.0;
      const double w = (w_diag + w_center) / 2.0;
      return Box3D::make(cx, y, cz, w, h, l, theta);
    }
  }
  return out;  // unreachable
}

inline ConstraintResiduals constraint_residuals(const EncodedBox& enc) {
  if (enc.scheme != BoxScheme::points3_heights2)
    throw error(std::string("constraint_residuals: scheme must be points3_heights2, got ") +
                scheme_name(enc.scheme));
  if (static_cast<int>(enc.values.size()) != 11)
    throw shape_error("constraint_residuals: expected 11 values");
  const std::vector<double>& v = enc.values;
  // layout: c1 (len, wid, up), c2, c3, dh1, dh2
  const double l1 = v[0], w1 = v[1], u1 = v[2];
  const double l2 = v[3], w2 = v[4], u2 = v[5];
  const double l3 = v[6], w3 = v[7], u3 = v[8];
  const double dh1 = v[9], dh2 = v[10];

  ConstraintResiduals r;
  // two estimates per planar dimension: endpoint spread vs summed half spans
  r.width = std::fabs(std::fabs(w1 - w3) - (std::fabs(w2 - w1) + std::fabs(w3 - w2)));
  r.length = std::fabs(std::fabs(l1 - l3) - (std::fabs(l2 - l1) + std::fabs(l3 - l2)));
  r.height = std::fabs(std::fabs(u3 - u1) - std::fabs(dh2 - dh1));
  const double half = 0.5 * std::fabs(dh2 - dh1);
  r.half_height = std::max(std::fabs(std::fabs(u2 - u1) - half), std::fabs(std::fabs(u3 - u2) - half));
  return r;
}

}  // namespace srdl
