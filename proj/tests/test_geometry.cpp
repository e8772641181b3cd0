#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <srdl/geometry.hpp>

using namespace srdl;

namespace {

// Pinhole test rig: fx = fy = 700, principal point (600, 180), right camera
// shifted by a 0.54 m baseline, velodyne frame = KITTI axis permutation.
CameraCalib test_calib() {
  CameraCalib c;
  const double fx = 700.0, fy = 700.0, cx = 600.0, cy = 180.0, baseline = 0.54;
  for (Mat34* p : {&c.P_left, &c.P_right}) {
    p->m[0][0] = fx;
    p->m[0][2] = cx;
    p->m[1][1] = fy;
    p->m[1][2] = cy;
    p->m[2][2] = 1.0;
  }
  c.P_right.m[0][3] = -fx * baseline;
  c.R0_rect = Mat3::identity();
  // x_cam = -y_velo, y_cam = -z_velo, z_cam = x_velo
  c.Tr_velo_to_cam.m[0][1] = -1.0;
  c.Tr_velo_to_cam.m[1][2] = -1.0;
  c.Tr_velo_to_cam.m[2][0] = 1.0;
  c.Tr_velo_to_cam.m[0][3] = 0.02;
  c.Tr_velo_to_cam.m[1][3] = -0.05;
  c.Tr_velo_to_cam.m[2][3] = 0.1;
  c.validate();
  return c;
}

Box3D random_box(Rng& rng) {
  return Box3D::make(rng.uniform(-3, 3), rng.uniform(-1, 2), rng.uniform(5, 15), rng.uniform(0.8, 2.5),
                     rng.uniform(0.8, 2.2), rng.uniform(1.5, 4.5), rng.uniform(-kPi, kPi));
}

double mc_iou_3d(const Box3D& a, const Box3D& b, Rng& rng, int samples) {
  // sample in the union AABB, classify against both boxes
  auto ca = box_corners(a);
  auto cb = box_corners(b);
  Vec3 lo = ca[0], hi = ca[0];
  for (const auto& arr : {ca, cb})
    for (const Vec3& v : arr) {
      lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
      hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
    }
  int in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    const bool ia = points_in_box3d({p}, a)[0];
    const bool ib = points_in_box3d({p}, b)[0];
    in_a += ia;
    in_b += ib;
    in_both += ia && ib;
  }
  const int uni = in_a + in_b - in_both;
  return uni == 0 ? 0.0 : static_cast<double>(in_both) / static_cast<double>(uni);
}

double mc_iou_bev(const Box3D& a, const Box3D& b, Rng& rng, int samples) {
  Box3D a2 = a, b2 = b;  // flatten to a common slab so BEV reduces to 3D
  a2.y = b2.y = 0.0;
  a2.h = b2.h = 1.0;
  return mc_iou_3d(a2, b2, rng, samples);
}

}  // namespace

TEST_CASE("project_points: on-axis point hits the principal point") {
  CameraCalib c = test_calib();
  // rect point (0,0,10) corresponds to velo point solving velo_to_rect
  const Vec3 velo = c.rect_to_velo({0, 0, 10});
  auto pr = project_points(c, View::left, {velo});
  REQUIRE(pr.valid[0] == 1);
  CHECK(pr.u[0] == doctest::Approx(600.0).epsilon(1e-9));
  CHECK(pr.v[0] == doctest::Approx(180.0).epsilon(1e-9));
  CHECK(pr.depth[0] == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("project_points: translating along the camera ray fixes the pixel") {
  CameraCalib c = test_calib();
  const Vec3 rect{1.5, -0.3, 8.0};
  auto p1 = project_points(c, View::left, {c.rect_to_velo(rect)});
  auto p2 = project_points(c, View::left, {c.rect_to_velo(rect * 2.5)});
  CHECK(p1.u[0] == doctest::Approx(p2.u[0]).epsilon(1e-9));
  CHECK(p1.v[0] == doctest::Approx(p2.v[0]).epsilon(1e-9));
}

TEST_CASE("project_points: points behind the camera are flagged invalid") {
  CameraCalib c = test_calib();
  auto pr = project_points(c, View::left, {c.rect_to_velo({0, 0, -5})});
  CHECK(pr.valid[0] == 0);
}

TEST_CASE("back_project inverts projection at the returned depth") {
  CameraCalib c = test_calib();
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 rect{rng.uniform(-6, 6), rng.uniform(-2, 2), rng.uniform(1, 40)};
    for (View view : {View::left, View::right}) {
      auto pr = project_points(c, view, {c.rect_to_velo(rect)});
      REQUIRE(pr.valid[0] == 1);
      const Vec3 rec = back_project(c, view, pr.u[0], pr.v[0], pr.depth[0]);
      CHECK(norm(rec - rect) < 1e-9);
    }
  }
}

TEST_CASE("frustum corners reproject into the 2D box") {
  CameraCalib c = test_calib();
  const Box2D box{500, 120, 700, 260};
  const Frustum f = frustum_from_box2d(c, View::right, box, {4.0, 30.0});
  for (const Vec3& corner : f.corners) {
    auto px = project_rect_point(c, View::right, corner);
    REQUIRE(px.has_value());
    CHECK((*px)[0] > box.u_min - 0.5);
    CHECK((*px)[0] < box.u_max + 0.5);
    CHECK((*px)[1] > box.v_min - 0.5);
    CHECK((*px)[1] < box.v_max + 0.5);
  }
}

TEST_CASE("shrinking the 2D box shrinks the frustum") {
  CameraCalib c = test_calib();
  const Frustum big = frustum_from_box2d(c, View::left, {500, 120, 700, 260}, {4.0, 30.0});
  const Frustum small = frustum_from_box2d(c, View::left, {530, 140, 670, 240}, {6.0, 25.0});
  Rng rng(3);
  std::vector<Vec3> pts;
  for (int i = 0; i < 5000; ++i)
    pts.push_back({rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(0.5, 40)});
  auto in_small = points_in_region(pts, small);
  auto in_big = points_in_region(pts, big);
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (in_small[i]) CHECK(in_big[i]);
}

TEST_CASE("frustum volume matches the truncated pyramid formula") {
  CameraCalib c = test_calib();
  // centered square box: cross-section at depth z is (w_px*z/f) x (h_px*z/f)
  const double w_px = 140.0, h_px = 90.0, f = 700.0;
  const Box2D box{600 - w_px / 2, 180 - h_px / 2, 600 + w_px / 2, 180 + h_px / 2};
  const double z0 = 5.0, z1 = 20.0;
  const Frustum fr = frustum_from_box2d(c, View::left, box, {z0, z1});
  auto area = [&](double z) { return (w_px * z / f) * (h_px * z / f); };
  const double a0 = area(z0), a1 = area(z1);
  const double expected = (a0 + a1 + std::sqrt(a0 * a1)) * (z1 - z0) / 3.0;
  CHECK(frustum_volume(fr) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("degenerate 2D box or depth range is rejected") {
  CameraCalib c = test_calib();
  CHECK_THROWS_AS(frustum_from_box2d(c, View::left, {700, 120, 500, 260}, {4.0, 30.0}), error);
  CHECK_THROWS_AS(frustum_from_box2d(c, View::left, {500, 120, 700, 260}, {30.0, 4.0}), error);
  CHECK_THROWS_AS(frustum_from_box2d(c, View::left, {500, 120, 700, 260}, {4.0, 4.0}), error);
}

TEST_CASE("intersect_frustums idempotence: same containment on random points") {
  CameraCalib c = test_calib();
  const Frustum f = frustum_from_box2d(c, View::left, {520, 130, 680, 250}, {5.0, 25.0});
  const FusedRegion r = intersect_frustums(f, f);
  REQUIRE_FALSE(r.empty);
  Rng rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 10000; ++i)
    pts.push_back({rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(0.5, 40)});
  auto mf = points_in_region(pts, f);
  auto mr = points_in_region(pts, r);
  CHECK(mf == mr);
}

TEST_CASE("disjoint depth ranges produce an empty region") {
  CameraCalib c = test_calib();
  const Frustum a = frustum_from_box2d(c, View::left, {520, 130, 680, 250}, {5.0, 10.0});
  const Frustum b = frustum_from_box2d(c, View::right, {520, 130, 680, 250}, {20.0, 30.0});
  const FusedRegion r = intersect_frustums(a, b);
  CHECK(r.empty);
  CHECK(points_in_region({{0, 0, 7.0}}, r)[0] == 0);
}

TEST_CASE("fused region volume: at most either parent, matches rejection sampling") {
  CameraCalib c = test_calib();
  const Frustum left = frustum_from_box2d(c, View::left, {520, 130, 680, 250}, {6.0, 22.0});
  const Frustum right = frustum_from_box2d(c, View::right, {505, 134, 660, 255}, {7.0, 24.0});
  const FusedRegion r = intersect_frustums(left, right);
  REQUIRE_FALSE(r.empty);
  const double vol = region_volume(r);
  CHECK(vol <= std::min(frustum_volume(left), frustum_volume(right)) + 1e-9);

  // rejection-sampling oracle over the corner AABB
  Vec3 lo = r.corners[0], hi = r.corners[0];
  for (const Vec3& v : r.corners) {
    lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
    hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
  }
  Rng rng(7);
  const int samples = 1000000;
  int inside = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    bool in = true;
    for (const Plane& pl : r.planes) in = in && pl.eval(p) >= -kRegionBoundaryTol;
    inside += in;
  }
  const double aabb = (hi.x - lo.x) * (hi.y - lo.y) * (hi.z - lo.z);
  const double mc = aabb * static_cast<double>(inside) / samples;
  CHECK(std::fabs(vol - mc) / vol < 0.02);
}

TEST_CASE("points_in_region agrees with brute-force plane evaluation") {
  CameraCalib c = test_calib();
  const Frustum f = frustum_from_box2d(c, View::left, {520, 130, 680, 250}, {5.0, 25.0});
  // stored corners are inside
  auto corner_mask = points_in_region(std::vector<Vec3>(f.corners.begin(), f.corners.end()), f);
  for (char m : corner_mask) CHECK(m == 1);
  // beyond z_far is outside
  CHECK(points_in_region({{0.0, 0.0, 26.0}}, f)[0] == 0);

  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p{rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(0.5, 40)};
    bool brute = true;
    for (const Plane& pl : f.planes) brute = brute && pl.eval(p) >= -kRegionBoundaryTol;
    CHECK(points_in_region({p}, f)[0] == (brute ? 1 : 0));
  }
}

TEST_CASE("points_in_box3d basics") {
  const Box3D b = Box3D::make(1.0, 2.0, 10.0, 1.6, 1.5, 3.9, 0.7);
  CHECK(points_in_box3d({b.volumetric_center()}, b)[0] == 1);

  // theta = 0 reduces to an axis-aligned test
  const Box3D ax = Box3D::make(0, 0, 0, 2.0, 2.0, 4.0, 0.0);
  CHECK(points_in_box3d({{1.9, -0.5, 0.9}}, ax)[0] == 1);
  CHECK(points_in_box3d({{2.1, -0.5, 0.9}}, ax)[0] == 0);
  CHECK(points_in_box3d({{1.9, -0.5, 1.1}}, ax)[0] == 0);
  CHECK(points_in_box3d({{1.9, 0.5, 0.9}}, ax)[0] == 0);   // below the bottom face
  CHECK(points_in_box3d({{1.9, -2.1, 0.9}}, ax)[0] == 0);  // above the top face
  // boundary is inside
  CHECK(points_in_box3d({{2.0, 0.0, 1.0}}, ax)[0] == 1);
}

TEST_CASE("points_in_box3d agrees with the corner-hull half-plane oracle") {
  const Box3D b = Box3D::make(0.5, 1.0, 8.0, 1.8, 1.4, 4.2, kPi / 4.0);
  const auto corners = box_corners(b);
  // oracle: inside iff within all 6 half spaces of the corner hull
  Vec3 centroid{0, 0, 0};
  for (const Vec3& c : corners) centroid = centroid + c * 0.125;
  std::vector<Plane> hull = {
      plane_from_points(corners[0], corners[1], corners[2], centroid),
      plane_from_points(corners[4], corners[6], corners[5], centroid),
      plane_from_points(corners[0], corners[1], corners[5], centroid),
      plane_from_points(corners[1], corners[2], corners[6], centroid),
      plane_from_points(corners[2], corners[3], corners[7], centroid),
      plane_from_points(corners[3], corners[0], corners[4], centroid),
  };
  Rng rng(13);
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p{rng.uniform(-3, 4), rng.uniform(-2, 3), rng.uniform(4, 12)};
    bool inside_hull = true;
    for (const Plane& pl : hull) inside_hull = inside_hull && pl.eval(p) >= -1e-9;
    mismatches += (points_in_box3d({p}, b)[0] == 1) != inside_hull;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("resize_box") {
  const Box3D b = Box3D::make(1, 2, 3, 1.6, 1.5, 3.9, 0.3);
  const Box3D same = resize_box(b, 0.0);
  CHECK(same.w == b.w);
  CHECK(same.h == b.h);
  CHECK(same.l == b.l);

  const Box3D shrunk = resize_box(b, -0.5);
  CHECK(shrunk.w == doctest::Approx(1.1).epsilon(1e-12));
  CHECK(shrunk.h == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(shrunk.l == doctest::Approx(3.4).epsilon(1e-12));
  CHECK(shrunk.x == b.x);
  CHECK(shrunk.theta == b.theta);

  const Box3D unit = Box3D::make(0, 0, 0, 1, 1, 1, 0);
  CHECK_THROWS_AS(resize_box(unit, -2.0), error);
}

TEST_CASE("growing a box keeps every contained point (mask superset)") {
  Rng rng(17);
  const Box3D b = random_box(rng);
  std::vector<Vec3> pts;
  for (int i = 0; i < 3000; ++i)
    pts.push_back({rng.uniform(-6, 6), rng.uniform(-3, 4), rng.uniform(2, 18)});
  auto base = points_in_box3d(pts, b);
  auto grown = points_in_box3d(pts, resize_box(b, 0.35));
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (base[i]) CHECK(grown[i]);
}

TEST_CASE("box_corners canonical order") {
  // unit cube with its volumetric center at the origin: bottom center (0, 0.5, 0)
  const Box3D cube = Box3D::make(0, 0.5, 0, 1, 1, 1, 0);
  const auto c = box_corners(cube);
  for (const Vec3& v : c) {
    CHECK(std::fabs(std::fabs(v.x) - 0.5) < 1e-12);
    CHECK(std::fabs(std::fabs(v.y) - 0.5) < 1e-12);
    CHECK(std::fabs(std::fabs(v.z) - 0.5) < 1e-12);
  }
  CHECK(c[0].x == doctest::Approx(0.5));
  CHECK(c[0].z == doctest::Approx(0.5));
  CHECK(c[0].y == doctest::Approx(0.5));
  CHECK(c[4].y == doctest::Approx(-0.5));

  // quarter turn permutes the footprint corners by one position
  const Box3D rot = Box3D::make(0, 0.5, 0, 1, 1, 1, kPi / 2.0);
  const auto cr = box_corners(rot);
  for (int i = 0; i < 4; ++i) {
    const Vec3 want = c[static_cast<std::size_t>((i + 3) % 4)];
    CHECK(norm(cr[static_cast<std::size_t>(i)] - want) < 1e-12);
  }

  // bottom-corner centroid equals the bottom center exactly
  Rng rng(19);
  for (int t = 0; t < 50; ++t) {
    const Box3D b = random_box(rng);
    const auto cc = box_corners(b);
    Vec3 mean{0, 0, 0};
    for (int i = 0; i < 4; ++i) mean = mean + cc[static_cast<std::size_t>(i)] * 0.25;
    CHECK(norm(mean - b.bottom_center()) < 1e-9);
  }
}

TEST_CASE("iou_bev analytic cases") {
  const Box3D a = Box3D::make(0, 0, 0, 1, 1, 1, 0);
  CHECK(iou_bev(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  // unit squares offset by 0.5 along one axis: 0.5 / 1.5
  Box3D b = a;
  b.x += 0.5;
  CHECK(iou_bev(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  Box3D far_box = a;
  far_box.x += 10.0;
  CHECK(iou_bev(a, far_box) == 0.0);
}

TEST_CASE("iou_3d analytic cases") {
  const Box3D a = Box3D::make(0, 0, 0, 1, 1, 1, 0);
  CHECK(iou_3d(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  Box3D b = a;
  b.x += 0.5;
  CHECK(iou_3d(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  // disjoint vertical ranges
  Box3D up = a;
  up.y -= 2.0;
  CHECK(iou_3d(a, up) == 0.0);
}

TEST_CASE("iou vs Monte-Carlo oracle on random rotated pairs") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    // nudge b toward a so overlaps actually occur
    b.x = a.x + rng.uniform(-1.5, 1.5);
    b.y = a.y + rng.uniform(-0.8, 0.8);
    b.z = a.z + rng.uniform(-1.5, 1.5);
    const double got3 = iou_3d(a, b);
    const double want3 = mc_iou_3d(a, b, rng, 200000);
    CHECK(std::fabs(got3 - want3) <= 0.005);
    const double gotb = iou_bev(a, b);
    const double wantb = mc_iou_bev(a, b, rng, 200000);
    CHECK(std::fabs(gotb - wantb) <= 0.005);
  }
}

TEST_CASE("iou symmetry holds bitwise and self-iou is 1") {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const Box3D a = random_box(rng);
    const Box3D b = random_box(rng);
    CHECK(iou_bev(a, b) == iou_bev(b, a));
    CHECK(iou_3d(a, b) == iou_3d(b, a));
    CHECK(std::fabs(iou_3d(a, a) - 1.0) < 1e-9);
  }
}

TEST_CASE("iou is invariant under joint rigid motion") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Box3D a = random_box(rng);
    Box3D b = a;
    b.x += rng.uniform(-1, 1);
    b.z += rng.uniform(-1, 1);
    b.theta = normalize_angle(b.theta + rng.uniform(-0.5, 0.5));
    const double base = iou_3d(a, b);

    const double yaw = rng.uniform(-kPi, kPi);
    const Mat3 rot = Mat3::rot_y(yaw);
    const Vec3 shift{rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(-5, 5)};
    auto move = [&](Box3D box) {
      const Vec3 c = rot.apply(box.bottom_center()) + shift;
      return Box3D::make(c.x, c.y, c.z, box.w, box.h, box.l, normalize_angle(box.theta + yaw));
    };
    CHECK(std::fabs(iou_3d(move(a), move(b)) - base) < 1e-9);
  }
}

TEST_CASE("clip area is non-negative and bounded by both rectangles") {
  Rng rng(37);
  for (int trial = 0; trial < 300; ++trial) {
    Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    b.x = a.x + rng.uniform(-2, 2);
    b.z = a.z + rng.uniform(-2, 2);
    const double inter = detail_geom::bev_intersection_area(a, b);
    CHECK(inter >= 0.0);
    CHECK(inter <= std::min(a.w * a.l, b.w * b.l) + 1e-12);
  }
}

TEST_CASE("fit_yaw_aligned_box recovers a sampled box") {
  Rng rng(41);
  const Box3D b = Box3D::make(1.0, 1.5, 12.0, 1.6, 1.5, 3.9, 0.6);
  std::vector<Vec3> pts;
  const Mat3 rot = Mat3::rot_y(b.theta);
  for (int i = 0; i < 4000; ++i) {
    const Vec3 local{rng.uniform(-b.l / 2, b.l / 2), rng.uniform(-b.h, 0.0), rng.uniform(-b.w / 2, b.w / 2)};
    pts.push_back(b.bottom_center() + rot.apply(local));
  }
  const Box3D fit = fit_yaw_aligned_box(pts);
  CHECK(iou_3d(fit, b) > 0.9);
}

TEST_CASE("calibration validation rejects broken matrices") {
  CameraCalib c = test_calib();
  c.R0_rect.m[0][0] = 2.0;
  CHECK_THROWS_AS(c.validate(), error);

  CameraCalib c2 = test_calib();
  for (int j = 0; j < 4; ++j) c2.P_left.m[2][j] = 0.0;
  CHECK_THROWS_AS(c2.validate(), error);
}
