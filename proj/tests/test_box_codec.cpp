#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <srdl/box_codec.hpp>

using namespace srdl;

namespace {

const std::array<BoxScheme, 4> kAllSchemes = {BoxScheme::axis_aligned, BoxScheme::corners8,
                                              BoxScheme::corners4_heights2, BoxScheme::points3_heights2};

Box3D random_box(Rng& rng) {
  return Box3D::make(rng.uniform(-4, 4), rng.uniform(-1, 2.5), rng.uniform(4, 30), rng.uniform(0.6, 2.4),
                     rng.uniform(0.9, 2.2), rng.uniform(1.2, 5.0), rng.uniform(-kPi, kPi));
}

bool boxes_close(const Box3D& a, const Box3D& b, double tol) {
  return std::fabs(a.x - b.x) < tol && std::fabs(a.y - b.y) < tol && std::fabs(a.z - b.z) < tol &&
         std::fabs(a.w - b.w) < tol && std::fabs(a.h - b.h) < tol && std::fabs(a.l - b.l) < tol &&
         angle_distance(a.theta, b.theta) < tol;
}

}  // namespace

TEST_CASE("dimension counts match the scheme table") {
  CHECK(scheme_dim(BoxScheme::axis_aligned) == 6);
  CHECK(scheme_dim(BoxScheme::corners8) == 24);
  CHECK(scheme_dim(BoxScheme::corners4_heights2) == 10);
  CHECK(scheme_dim(BoxScheme::points3_heights2) == 11);
}

TEST_CASE("encoding a box against itself gives the zero vector") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Box3D b = random_box(rng);
    for (BoxScheme s : kAllSchemes) {
      const EncodedBox e = encode(b, b, s);
      for (double v : e.values) CHECK(std::fabs(v) < 1e-12);
      CHECK(e.cos_theta == doctest::Approx(std::cos(b.theta)).epsilon(1e-15));
    }
  }
}

TEST_CASE("zero vector decodes to the proposal itself") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Box3D p = random_box(rng);
    for (BoxScheme s : kAllSchemes) {
      EncodedBox e;
      e.scheme = s;
      e.values.assign(static_cast<std::size_t>(scheme_dim(s)), 0.0);
      const auto orient = encode_orientation(p.theta);
      e.cos_theta = orient[0];
      e.sin_theta = orient[1];
      CHECK(boxes_close(decode(e, p), p, 1e-9));
    }
  }
}

TEST_CASE("pure planar translation by one diagonal length") {
  const Box3D p = Box3D::make(0, 1, 10, 1.6, 1.5, 3.9, 0.0);
  const double d = std::sqrt(p.l * p.l + p.w * p.w);
  Box3D gt = p;
  gt.x += d;  // along the proposal length axis at theta = 0
  for (BoxScheme s : kAllSchemes) {
    const EncodedBox e = encode(gt, p, s);
    // every point offset triplet is (1, 0, 0); heights are zero
    const int triplets = s == BoxScheme::axis_aligned ? 1 : (s == BoxScheme::corners8 ? 8 : 0);
    if (s == BoxScheme::corners4_heights2) {
      for (int i = 0; i < 4; ++i) {
        CHECK(e.values[static_cast<std::size_t>(2 * i)] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::fabs(e.values[static_cast<std::size_t>(2 * i + 1)]) < 1e-12);
      }
      CHECK(std::fabs(e.values[8]) < 1e-12);
      CHECK(std::fabs(e.values[9]) < 1e-12);
    } else if (s == BoxScheme::points3_heights2) {
      for (int i = 0; i < 3; ++i) {
        CHECK(e.values[static_cast<std::size_t>(3 * i)] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::fabs(e.values[static_cast<std::size_t>(3 * i + 1)]) < 1e-12);
        CHECK(std::fabs(e.values[static_cast<std::size_t>(3 * i + 2)]) < 1e-12);
      }
      CHECK(std::fabs(e.values[9]) < 1e-12);
      CHECK(std::fabs(e.values[10]) < 1e-12);
    } else {
      for (int i = 0; i < triplets; ++i) {
        CHECK(e.values[static_cast<std::size_t>(3 * i)] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::fabs(e.values[static_cast<std::size_t>(3 * i + 1)]) < 1e-12);
        CHECK(std::fabs(e.values[static_cast<std::size_t>(3 * i + 2)]) < 1e-12);
      }
      if (s == BoxScheme::axis_aligned)
        for (int i = 3; i < 6; ++i) CHECK(std::fabs(e.values[static_cast<std::size_t>(i)]) < 1e-12);
    }
  }
}

TEST_CASE("corners8 values equal per-corner differences of box_corners") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Box3D gt = random_box(rng);
    const Box3D p = random_box(rng);
    const EncodedBox e = encode(gt, p, BoxScheme::corners8);
    const auto gc = box_corners(gt);
    const auto pcs = box_corners(p);
    const double d = std::sqrt(p.l * p.l + p.w * p.w);
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    const Vec3 len{c, 0, -s}, wid{s, 0, c};
    for (int i = 0; i < 8; ++i) {
      const Vec3 diff = gc[static_cast<std::size_t>(i)] - pcs[static_cast<std::size_t>(i)];
      CHECK(e.values[static_cast<std::size_t>(3 * i)] == doctest::Approx(dot(diff, len) / d).epsilon(1e-12));
      CHECK(e.values[static_cast<std::size_t>(3 * i + 1)] == doctest::Approx(dot(diff, wid) / d).epsilon(1e-12));
      CHECK(e.values[static_cast<std::size_t>(3 * i + 2)] == doctest::Approx(-diff.y / p.h).epsilon(1e-12));
    }
  }
}

TEST_CASE("decode(encode(gt, p)) round-trips 1000 random pairs per scheme") {
  Rng rng(4);
  for (BoxScheme s : kAllSchemes) {
    for (int trial = 0; trial < 1000; ++trial) {
      const Box3D gt = random_box(rng);
      const Box3D p = random_box(rng);
      const Box3D back = decode(encode(gt, p, s), p);
      CHECK(boxes_close(back, gt, 1e-9));
    }
  }
}

TEST_CASE("decode rejects a wrong-length vector") {
  const Box3D p = Box3D::make(0, 0, 5, 1, 1, 2, 0);
  EncodedBox e;
  e.scheme = BoxScheme::points3_heights2;
  e.values.assign(10, 0.0);
  CHECK_THROWS_AS(decode(e, p), shape_error);
}

TEST_CASE("orientation coding") {
  const auto z = encode_orientation(0.0);
  CHECK(z[0] == 1.0);
  CHECK(z[1] == 0.0);
  CHECK(decode_orientation(z[0], z[1]) == 0.0);

  CHECK(decode_orientation(0.0, 1.0) == doctest::Approx(kPi / 2).epsilon(1e-15));

  // wrap continuity near the branch cut
  const auto a = encode_orientation(kPi - 1e-9);
  const auto b = encode_orientation(-kPi + 1e-9);
  CHECK(angle_distance(decode_orientation(a[0], a[1]), decode_orientation(b[0], b[1])) < 1e-8);

  // round trip for many random angles
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double theta = rng.uniform(-kPi, kPi);
    const auto enc = encode_orientation(theta);
    CHECK(angle_distance(decode_orientation(enc[0], enc[1]), theta) < 1e-12);
  }

  // the decoder normalizes non-unit pairs
  CHECK(decode_orientation(3.0, 0.0) == 0.0);
  CHECK_THROWS_AS(decode_orientation(1e-9, -1e-9), error);
}

TEST_CASE("constraint residuals vanish on true encodings") {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const EncodedBox e = encode(random_box(rng), random_box(rng), BoxScheme::points3_heights2);
    CHECK(constraint_residuals(e).max() <= 1e-9);
  }
}

TEST_CASE("perturbing dh2 shifts the height residual by exactly that much") {
  // gt taller than the proposal so dh2 - dh1 > 0
  const Box3D p = Box3D::make(0, 1, 10, 1.5, 1.2, 3.5, 0.4);
  const Box3D gt = Box3D::make(0.3, 1.1, 10.5, 1.7, 1.8, 3.8, 0.6);
  EncodedBox e = encode(gt, p, BoxScheme::points3_heights2);
  REQUIRE(e.values[10] - e.values[9] > 0.0);
  e.values[10] += 0.1;
  const auto r = constraint_residuals(e);
  CHECK(r.height == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("zero vector has zero residuals") {
  EncodedBox e;
  e.scheme = BoxScheme::points3_heights2;
  e.values.assign(11, 0.0);
  CHECK(constraint_residuals(e).max() == 0.0);
}

TEST_CASE("constraint_residuals rejects other schemes") {
  EncodedBox e;
  e.scheme = BoxScheme::corners8;
  e.values.assign(24, 0.0);
  CHECK_THROWS_AS(constraint_residuals(e), error);
}

TEST_CASE("translation equivariance: moving gt and proposal together") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Box3D gt = random_box(rng);
    const Box3D p = random_box(rng);
    const Vec3 shift{rng.uniform(-8, 8), rng.uniform(-3, 3), rng.uniform(-8, 8)};
    for (BoxScheme s : kAllSchemes) {
      const EncodedBox base = encode(gt, p, s);
      Box3D gt2 = gt, p2 = p;
      gt2.x += shift.x;
      gt2.y += shift.y;
      gt2.z += shift.z;
      p2.x += shift.x;
      p2.y += shift.y;
      p2.z += shift.z;
      const EncodedBox moved = encode(gt2, p2, s);
      for (std::size_t i = 0; i < base.values.size(); ++i)
        CHECK(std::fabs(base.values[i] - moved.values[i]) < 1e-12);
    }
  }
}

TEST_CASE("scale covariance: uniform scaling cancels in the normalization") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Box3D gt = random_box(rng);
    const Box3D p = random_box(rng);
    const double s = rng.uniform(0.3, 4.0);
    auto scale = [&](const Box3D& b) {
      return Box3D::make(b.x * s, b.y * s, b.z * s, b.w * s, b.h * s, b.l * s, b.theta);
    };
    for (BoxScheme sch : kAllSchemes) {
      const EncodedBox base = encode(gt, p, sch);
      const EncodedBox scaled = encode(scale(gt), scale(p), sch);
      for (std::size_t i = 0; i < base.values.size(); ++i)
        CHECK(std::fabs(base.values[i] - scaled.values[i]) < 1e-10);
    }
  }
}

TEST_CASE("degenerate proposal is rejected") {
  const Box3D gt = Box3D::make(0, 0, 5, 1, 1, 2, 0);
  Box3D p = gt;
  p.w = 0.0;
  CHECK_THROWS_AS(encode(gt, p, BoxScheme::axis_aligned), error);
}
