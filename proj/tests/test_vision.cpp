#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_utils.hpp"
#include "vimo/errors.hpp"
#include "vimo/vision.hpp"

using namespace vimo;

namespace {

CameraModel simpleCam() {
  CameraModel cam;
  cam.fx = cam.fy = 400.0;
  cam.cx = cam.cy = 320.0;
  cam.width = cam.height = 640;
  return cam;
}

}  // namespace

TEST_CASE("project pinhole basics") {
  const auto cam = simpleCam();
  SUBCASE("optical axis hits the principal point") {
    const auto uv = project(cam, Quat::Identity(), Vec3::Zero(), Vec3(0, 0, 1));
    REQUIRE(uv.has_value());
    CHECK((*uv - Vec2(320, 320)).norm() < 1e-12);
  }
  SUBCASE("u = fx x / z + cx") {
    const auto uv = project(cam, Quat::Identity(), Vec3::Zero(), Vec3(0.1, 0, 1));
    REQUIRE(uv.has_value());
    CHECK((*uv - Vec2(360, 320)).norm() < 1e-12);
  }
  SUBCASE("behind camera is rejected") {
    CHECK_FALSE(project(cam, Quat::Identity(), Vec3::Zero(), Vec3(0, 0, -1)).has_value());
    CHECK_FALSE(project(cam, Quat::Identity(), Vec3::Zero(), Vec3(0, 0, 0)).has_value());
  }
  SUBCASE("doubling fx doubles u - cx") {
    auto cam2 = cam;
    cam2.fx *= 2.0;
    const auto uv = project(cam, Quat::Identity(), Vec3::Zero(), Vec3(0.3, -0.2, 2.0));
    const auto uv2 = project(cam2, Quat::Identity(), Vec3::Zero(), Vec3(0.3, -0.2, 2.0));
    REQUIRE(uv.has_value());
    REQUIRE(uv2.has_value());
    CHECK(uv2->x() - cam2.cx == doctest::Approx(2.0 * (uv->x() - cam.cx)).epsilon(1e-12));
  }
}

TEST_CASE("project/unproject ray round trip") {
  auto rng = testutil::makeRng(41);
  auto cam = simpleCam();
  cam.R_BC = quatExp(Vec3(0.1, -0.2, 0.3)).toRotationMatrix();
  cam.p_BC = Vec3(0.05, -0.02, 0.01);
  for (int i = 0; i < 200; ++i) {
    const Quat q = testutil::randomQuat(rng);
    const Vec3 p = testutil::randomVec3(rng, 3.0);
    // Landmark in front of the camera.
    const double depth = testutil::uniform(rng, 0.5, 10.0);
    const Vec3 ray_c(testutil::uniform(rng, -0.6, 0.6), testutil::uniform(rng, -0.6, 0.6), 1.0);
    const Vec3 l_b = cam.R_BC * (depth * ray_c) + cam.p_BC;
    const Vec3 l_w = q.toRotationMatrix() * l_b + p;

    const auto uv = project(cam, q, p, l_w);
    REQUIRE(uv.has_value());
    // Reconstruct the ray from the pixel and check the landmark lies on it.
    const Vec3 dir_c((uv->x() - cam.cx) / cam.fx, (uv->y() - cam.cy) / cam.fy, 1.0);
    const Vec3 center = p + q.toRotationMatrix() * cam.p_BC;
    const Vec3 dir_w = (q.toRotationMatrix() * cam.R_BC * dir_c).normalized();
    const Vec3 to_lm = l_w - center;
    const double dist = (to_lm - to_lm.dot(dir_w) * dir_w).norm();
    CHECK(dist < 1e-9);
  }
}

TEST_CASE("reprojection residual") {
  const auto cam = simpleCam();
  SUBCASE("zero for a generated observation") {
    auto rng = testutil::makeRng(42);
    for (int i = 0; i < 50; ++i) {
      const Quat q = testutil::randomQuat(rng);
      const Vec3 p = testutil::randomVec3(rng, 2.0);
      const Vec3 l_b(testutil::uniform(rng, -1, 1), testutil::uniform(rng, -1, 1),
                     testutil::uniform(rng, 1.0, 8.0));
      const Vec3 l_w = q.toRotationMatrix() * l_b + p;
      const auto uv = project(cam, q, p, l_w);
      REQUIRE(uv.has_value());
      FeatureObservation obs;
      obs.uv = *uv;
      const auto r = reprojectionResidual(obs, cam, q, p, l_w);
      REQUIRE(r.has_value());
      CHECK(r->norm() < 1e-12);
    }
  }
  SUBCASE("lateral shift linearization") {
    FeatureObservation obs;
    obs.uv = *project(cam, Quat::Identity(), Vec3::Zero(), Vec3(0, 0, 1));
    const auto r =
        reprojectionResidual(obs, cam, Quat::Identity(), Vec3::Zero(), Vec3(0.01, 0, 1));
    REQUIRE(r.has_value());
    CHECK(r->x() == doctest::Approx(4.0).epsilon(0.01));
    CHECK(std::abs(r->y()) < 1e-12);
  }
}

TEST_CASE("reprojection Jacobians match finite differences") {
  auto rng = testutil::makeRng(43);
  auto cam = simpleCam();
  cam.R_BC = quatExp(Vec3(0.2, 0.1, -0.3)).toRotationMatrix();
  cam.p_BC = Vec3(0.1, 0.0, -0.05);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Quat q = testutil::randomQuat(rng);
    const Vec3 p = testutil::randomVec3(rng, 2.0);
    const Vec3 l_b(testutil::uniform(rng, -1, 1), testutil::uniform(rng, -1, 1),
                   testutil::uniform(rng, 1.0, 8.0));
    const Vec3 l_w = q.toRotationMatrix() * (cam.R_BC * l_b + cam.p_BC) + p;

    const auto jac = reprojectionJacobians(cam, q, p, l_w);
    REQUIRE(jac.has_value());

    auto res = [&](const Quat& qq, const Vec3& pp, const Vec3& ll) {
      return *project(cam, qq, pp, ll);
    };

    Eigen::Matrix<double, 2, 6> fd_pose;
    Eigen::Matrix<double, 2, 3> fd_lm;
    for (int c = 0; c < 3; ++c) {
      Vec3 d = Vec3::Zero();
      d(c) = h;
      fd_pose.col(c) = (res(q, p + d, l_w) - res(q, p - d, l_w)) / (2.0 * h);
      fd_pose.col(3 + c) = (res((q * quatExp(d)).normalized(), p, l_w) -
                            res((q * quatExp(-d)).normalized(), p, l_w)) /
                           (2.0 * h);
      fd_lm.col(c) = (res(q, p, l_w + d) - res(q, p, l_w - d)) / (2.0 * h);
    }
    CHECK(testutil::jacobianRelError(jac->J_pose, fd_pose) < 1e-5);
    CHECK(testutil::jacobianRelError(jac->J_landmark, fd_lm) < 1e-5);
  }
}

TEST_CASE("triangulate") {
  const auto cam = simpleCam();
  SUBCASE("two noise-free views") {
    const Vec3 l_w(0.5, -0.3, 4.0);
    TriangulationView v0{cam, Quat::Identity(), Vec3::Zero(), Vec2::Zero()};
    TriangulationView v1{cam, Quat::Identity(), Vec3(0.5, 0, 0), Vec2::Zero()};
    v0.uv = *project(cam, v0.q_wb, v0.p_w, l_w);
    v1.uv = *project(cam, v1.q_wb, v1.p_w, l_w);
    std::vector<TriangulationView> views = {v0, v1};
    const auto result = triangulate(views);
    CHECK_FALSE(result.low_quality);
    CHECK((result.point - l_w).norm() < 1e-6);
    CHECK(result.max_reprojection_px < 1e-6);
  }
  SUBCASE("identical poses have no baseline") {
    TriangulationView v{cam, Quat::Identity(), Vec3::Zero(), Vec2(320, 320)};
    std::vector<TriangulationView> views = {v, v};
    CHECK_THROWS_AS(triangulate(views), ValidationError);
  }
  SUBCASE("point on the line of collinear centers is degenerate") {
    const Vec3 l_w(0, 0, 5.0);
    // Centers along the optical axis, point straight ahead: all rays coincide.
    TriangulationView v0{cam, Quat::Identity(), Vec3(0, 0, 0), Vec2::Zero()};
    TriangulationView v1{cam, Quat::Identity(), Vec3(0, 0, 1.0), Vec2::Zero()};
    TriangulationView v2{cam, Quat::Identity(), Vec3(0, 0, 2.0), Vec2::Zero()};
    v0.uv = *project(cam, v0.q_wb, v0.p_w, l_w);
    v1.uv = *project(cam, v1.q_wb, v1.p_w, l_w);
    v2.uv = *project(cam, v2.q_wb, v2.p_w, l_w);
    std::vector<TriangulationView> views = {v0, v1, v2};
    const auto result = triangulate(views);
    CHECK(result.low_quality);
  }
  SUBCASE("single view is rejected") {
    TriangulationView v{cam, Quat::Identity(), Vec3::Zero(), Vec2(320, 320)};
    std::vector<TriangulationView> views = {v};
    CHECK_THROWS_AS(triangulate(views), ValidationError);
  }
}
