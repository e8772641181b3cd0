#pragma once

#include <string>
#include <vector>

#include "srdl/kitti_io.hpp"

namespace srdl {

// Desk-scale synthetic scenes: one or more car-sized boxes with uniform
// interior points, uniform clutter around them, and stereo 2D proposals
// obtained by projecting the (optionally padded) boxes with pixel jitter.

struct SynthConfig {
  int points_per_scene = 200;
  double clutter_ratio = 0.22;   // fraction of points drawn as background structure
  double jitter_px = 6.0;        // per-side uniform pixel jitter on proposals
  double depth_pad = 0.5;        // slack added to the proposal depth range, meters
  double proposal_pad_m = 0.5;   // proposal slack mirroring loose 2D detections
  int objects_per_scene = 1;
  // clutter composition: a box-shaped decoy cluster behind the object and a
  // planar wall patch, with the remainder uniform. The decoys keep the
  // segmentation task from collapsing into a pure density threshold.
  double decoy_box_share = 0.1;   // share of clutter drawn inside a decoy box
  double decoy_wall_share = 0.4;  // share of clutter drawn on a wall patch

  void validate() const {
    if (points_per_scene < 8) throw config_error("SynthConfig: points_per_scene too small");
    if (clutter_ratio < 0.0 || clutter_ratio >= 1.0)
      throw config_error("SynthConfig: clutter_ratio must be in [0,1)");
    if (jitter_px < 0.0) throw config_error("SynthConfig: jitter_px must be non-negative");
    if (depth_pad < 0.0) throw config_error("SynthConfig: depth_pad must be non-negative");
    if (objects_per_scene < 1) throw config_error("SynthConfig: need at least one object");
    if (decoy_box_share < 0.0 || decoy_wall_share < 0.0 || decoy_box_share + decoy_wall_share > 1.0)
      throw config_error("SynthConfig: decoy shares must be non-negative and sum to at most 1");
  }
};

// KITTI-like pinhole rig, identity rectification, axis-permutation LIDAR
// extrinsics.
inline CameraCalib synthetic_calib() {
  CameraCalib c;
  const double fx = 721.5, fy = 721.5, cx = 608.0, cy = 185.0, baseline = 0.54;
  for (Mat34* p : {&c.P_left, &c.P_right}) {
    p->m[0][0] = fx;
    p->m[0][2] = cx;
    p->m[1][1] = fy;
    p->m[1][2] = cy;
    p->m[2][2] = 1.0;
  }
  c.P_right.m[0][3] = -fx * baseline;
  c.R0_rect = Mat3::identity();
  c.Tr_velo_to_cam.m[0][1] = -1.0;
  c.Tr_velo_to_cam.m[1][2] = -1.0;
  c.Tr_velo_to_cam.m[2][0] = 1.0;
  c.Tr_velo_to_cam.m[0][3] = 0.03;
  c.Tr_velo_to_cam.m[1][3] = -0.07;
  c.Tr_velo_to_cam.m[2][3] = 0.27;
  c.validate();
  return c;
}

struct SyntheticScene {
  SceneSample sample;
  std::vector<int> point_labels;  // exact containment against the GT boxes
  // where each point was drawn from, for diagnostics and tests
  enum Source { kObject = 0, kDecoyBox = 1, kWall = 2, kUniform = 3 };
  std::vector<int> point_source;
};

namespace detail_synth {

inline Vec3 sample_in_box(Rng& rng, const Box3D& b) {
  const Mat3 rot = Mat3::rot_y(b.theta);
  const Vec3 local{rng.uniform(-b.l / 2, b.l / 2), rng.uniform(-b.h, 0.0), rng.uniform(-b.w / 2, b.w / 2)};
  return b.bottom_center() + rot.apply(local);
}

inline Box2D project_box_bbox(const CameraCalib& calib, View view, const Box3D& box) {
  const auto corners = box_corners(box);
  double umin = 1e300, vmin = 1e300, umax = -1e300, vmax = -1e300;
  for (const Vec3& c : corners) {
    const auto px = project_rect_point(calib, view, c);
    if (!px) throw numeric_error("project_box_bbox: box corner behind the camera");
    umin = std::min(umin, (*px)[0]);
    umax = std::max(umax, (*px)[0]);
    vmin = std::min(vmin, (*px)[1]);
    vmax = std::max(vmax, (*px)[1]);
  }
  return {umin, vmin, umax, vmax};
}

inline Box2D jitter_box(Rng& rng, const Box2D& b, double jitter) {
  if (jitter <= 0.0) return b;
  Box2D out{b.u_min + rng.uniform(-jitter, jitter), b.v_min + rng.uniform(-jitter, jitter),
            b.u_max + rng.uniform(-jitter, jitter), b.v_max + rng.uniform(-jitter, jitter)};
  if (out.u_max <= out.u_min) out.u_max = out.u_min + 1.0;
  if (out.v_max <= out.v_min) out.v_max = out.v_min + 1.0;
  return out;
}

}  // namespace detail_synth

inline std::vector<SyntheticScene> gen_synthetic(std::uint64_t seed, int n_scenes, const SynthConfig& cfg) {
  cfg.validate();
  if (n_scenes < 1) throw config_error("gen_synthetic: need at least one scene");
  Rng rng(seed);
  const CameraCalib calib = synthetic_calib();

  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n_scenes));
  for (int si = 0; si < n_scenes; ++si) {
    SyntheticScene scene;
    scene.sample.frame = si;
    scene.sample.calib = calib;

    std::vector<Box3D> boxes;
    for (int oi = 0; oi < cfg.objects_per_scene; ++oi) {
      const double w = rng.uniform(1.5, 1.8);
      const double h = rng.uniform(1.35, 1.65);
      const double l = rng.uniform(3.5, 4.3);
      const double z = rng.uniform(10.0, 24.0);
      const double x = rng.uniform(-4.0, 4.0);
      const double y = rng.uniform(1.3, 1.8);
      boxes.push_back(Box3D::make(x, y, z, w, h, l, rng.uniform(-kPi, kPi)));
    }

    // object points inside the boxes; clutter split between a decoy box
    // behind the object, a wall patch, and uniform background
    const int clutter = static_cast<int>(std::lround(cfg.points_per_scene * cfg.clutter_ratio));
    const int object_pts = cfg.points_per_scene - clutter;
    const int decoy_box_pts = static_cast<int>(std::lround(clutter * cfg.decoy_box_share));
    const int wall_pts = static_cast<int>(std::lround(clutter * cfg.decoy_wall_share));
    const int uniform_pts = clutter - decoy_box_pts - wall_pts;

    const Box3D& anchor = boxes[0];
    Box3D decoy = anchor;
    decoy.x += rng.uniform(-2.0, 2.0);
    decoy.z += rng.uniform(3.5, 7.0);
    decoy.theta = normalize_angle(anchor.theta + rng.uniform(-0.7, 0.7));
    if (decoy_box_pts > 0 && object_pts > 0) {
      // shrink the decoy so its point density matches the object cluster
      const double scale = std::max(0.3, std::cbrt(static_cast<double>(decoy_box_pts) / object_pts));
      decoy.w = std::max(0.4, decoy.w * scale);
      decoy.h = std::max(0.4, decoy.h * scale);
      decoy.l = std::max(0.4, decoy.l * scale);
    }

    // vertical wall patch: a thin dense slab with a random heading; its
    // density matches the object so only the neighborhood shape tells them
    // apart
    const double wall_yaw = rng.uniform(-kPi, kPi);
    const Vec3 wall_center{rng.uniform(-5.0, 5.0), rng.uniform(0.4, 1.2), rng.uniform(9.0, 26.0)};
    const Mat3 wall_rot = Mat3::rot_y(wall_yaw);

    std::vector<Vec3> cam_points;
    cam_points.reserve(static_cast<std::size_t>(cfg.points_per_scene));
    for (int i = 0; i < object_pts; ++i) {
      const Box3D& b = boxes[static_cast<std::size_t>(i) % boxes.size()];
      cam_points.push_back(detail_synth::sample_in_box(rng, b));
      scene.point_source.push_back(SyntheticScene::kObject);
    }
    for (int i = 0; i < decoy_box_pts; ++i) {
      cam_points.push_back(detail_synth::sample_in_box(rng, decoy));
      scene.point_source.push_back(SyntheticScene::kDecoyBox);
    }
    for (int i = 0; i < wall_pts; ++i) {
      const Vec3 local{rng.uniform(-1.1, 1.1), rng.uniform(-0.6, 0.6), rng.uniform(-0.03, 0.03)};
      cam_points.push_back(wall_center + wall_rot.apply(local));
      scene.point_source.push_back(SyntheticScene::kWall);
    }
    for (int i = 0; i < uniform_pts; ++i) {
      cam_points.push_back({rng.uniform(-7.0, 7.0), rng.uniform(-0.5, 1.9), rng.uniform(6.0, 28.0)});
      scene.point_source.push_back(SyntheticScene::kUniform);
    }

    // store as an f32-quantized velodyne cloud, then re-derive exact labels
    // from the quantized coordinates
    scene.sample.cloud.reserve(cam_points.size());
    for (const Vec3& p : cam_points) {
      const Vec3 velo = calib.rect_to_velo(p);
      PointXYZR pt;
      pt.x = static_cast<float>(velo.x);
      pt.y = static_cast<float>(velo.y);
      pt.z = static_cast<float>(velo.z);
      pt.reflectance = static_cast<float>(rng.uniform(0.0, 1.0));
      scene.sample.cloud.push_back(pt);
    }
    scene.point_labels.assign(scene.sample.cloud.size(), 0);
    std::vector<Vec3> quantized(scene.sample.cloud.size());
    for (std::size_t i = 0; i < quantized.size(); ++i)
      quantized[i] = calib.velo_to_rect(scene.sample.cloud[i].xyz());
    for (const Box3D& b : boxes) {
      const auto mask = points_in_box3d(quantized, b);
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) scene.point_labels[i] = 1;
    }

    // ground-truth labels and stereo proposals per object
    for (const Box3D& b : boxes) {
      const Box2D bbox_left = detail_synth::project_box_bbox(calib, View::left, b);
      scene.sample.labels.push_back(LabelRecord::from_box("Car", b, bbox_left));

      const Box3D padded = cfg.proposal_pad_m != 0.0 ? resize_box(b, cfg.proposal_pad_m) : b;
      StereoProposal prop;
      prop.frame = si;
      prop.left = detail_synth::jitter_box(rng, detail_synth::project_box_bbox(calib, View::left, padded),
                                           cfg.jitter_px);
      prop.right = detail_synth::jitter_box(rng, detail_synth::project_box_bbox(calib, View::right, padded),
                                            cfg.jitter_px);
      double z_lo = 1e300, z_hi = -1e300;
      for (const Vec3& c : box_corners(padded)) {
        z_lo = std::min(z_lo, c.z);
        z_hi = std::max(z_hi, c.z);
      }
      prop.depth = {std::max(0.5, z_lo - cfg.depth_pad), z_hi + cfg.depth_pad};
      prop.score = rng.uniform(0.5, 1.0);
      scene.sample.proposals.push_back(prop);
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace srdl
