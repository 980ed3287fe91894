#include "vimo/vision.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "vimo/errors.hpp"

namespace vimo {

namespace {
constexpr double kMinDepth = 1e-6;
}

Vec3 worldToCamera(const CameraModel& cam, const Quat& q_wb, const Vec3& p_w, const Vec3& l_w) {
  const Vec3 l_b = q_wb.toRotationMatrix().transpose() * (l_w - p_w);
  return cam.R_BC.transpose() * (l_b - cam.p_BC);
}

std::optional<Vec2> project(const CameraModel& cam, const Quat& q_wb, const Vec3& p_w,
                            const Vec3& l_w) {
  const Vec3 l_c = worldToCamera(cam, q_wb, p_w, l_w);
  if (l_c.z() <= kMinDepth) return std::nullopt;
  return Vec2(cam.fx * l_c.x() / l_c.z() + cam.cx, cam.fy * l_c.y() / l_c.z() + cam.cy);
}

std::optional<Vec2> reprojectionResidual(const FeatureObservation& obs, const CameraModel& cam,
                                         const Quat& q_wb, const Vec3& p_w, const Vec3& l_w) {
  const auto uv = project(cam, q_wb, p_w, l_w);
  if (!uv) return std::nullopt;
  return Vec2(*uv - obs.uv);
}

std::optional<ReprojectionJacobians> reprojectionJacobians(const CameraModel& cam,
                                                           const Quat& q_wb, const Vec3& p_w,
                                                           const Vec3& l_w) {
  const Mat3 r_wb = q_wb.toRotationMatrix();
  const Vec3 l_b = r_wb.transpose() * (l_w - p_w);
  const Vec3 l_c = cam.R_BC.transpose() * (l_b - cam.p_BC);
  if (l_c.z() <= kMinDepth) return std::nullopt;

  Eigen::Matrix<double, 2, 3> d_uv;  // d(u,v)/d(l_c)
  const double iz = 1.0 / l_c.z();
  d_uv << cam.fx * iz, 0.0, -cam.fx * l_c.x() * iz * iz, 0.0, cam.fy * iz,
      -cam.fy * l_c.y() * iz * iz;

  const Mat3 r_cb = cam.R_BC.transpose();
  ReprojectionJacobians out;
  out.J_pose.leftCols<3>() = d_uv * (-r_cb * r_wb.transpose());
  out.J_pose.rightCols<3>() = d_uv * (r_cb * skew(l_b));
  out.J_landmark = d_uv * (r_cb * r_wb.transpose());
  return out;
}

TriangulationResult triangulate(std::span<const TriangulationView> views, double min_baseline,
                                double max_reproj_px) {
  if (views.size() < 2) {
    throw ValidationError("triangulate: need at least two views");
  }

  std::vector<Vec3> centers, dirs;
  centers.reserve(views.size());
  dirs.reserve(views.size());
  double max_baseline = 0.0;
  for (const auto& v : views) {
    const Mat3 r_wb = v.q_wb.toRotationMatrix();
    const Vec3 c = v.p_w + r_wb * v.cam.p_BC;
    const Vec3 ray_c((v.uv.x() - v.cam.cx) / v.cam.fx, (v.uv.y() - v.cam.cy) / v.cam.fy, 1.0);
    centers.push_back(c);
    dirs.push_back((r_wb * v.cam.R_BC * ray_c).normalized());
    for (const auto& c0 : centers) {
      max_baseline = std::max(max_baseline, (c - c0).norm());
    }
  }
  if (max_baseline < min_baseline) {
    throw ValidationError("triangulate: insufficient baseline (" + std::to_string(max_baseline) +
                          " m)");
  }

  // Point minimizing the sum of squared distances to all rays.
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (size_t i = 0; i < dirs.size(); ++i) {
    const Mat3 proj = Mat3::Identity() - dirs[i] * dirs[i].transpose();
    a += proj;
    b += proj * centers[i];
  }

  TriangulationResult out;
  Eigen::SelfAdjointEigenSolver<Mat3> es(a);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmin < 1e-9 * lmax) {
    out.low_quality = true;
    Mat3 damped = a + (1e-9 * lmax) * Mat3::Identity();
    out.point = damped.ldlt().solve(b);
  } else {
    out.point = a.ldlt().solve(b);
  }

  for (const auto& v : views) {
    const auto uv = project(v.cam, v.q_wb, v.p_w, out.point);
    if (!uv) {
      out.low_quality = true;
      out.max_reprojection_px = std::numeric_limits<double>::infinity();
      break;
    }
    out.max_reprojection_px = std::max(out.max_reprojection_px, (*uv - v.uv).norm());
  }
  if (out.max_reprojection_px > max_reproj_px) {
    out.low_quality = true;
  }
  return out;
}

}  // namespace vimo
