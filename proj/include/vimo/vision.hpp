#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vimo/so3.hpp"

namespace vimo {

/// Pinhole camera, zero distortion. T_BC = (R_BC, p_BC) is the camera pose in
/// the body frame: p_B = R_BC * p_C + p_BC.
struct CameraModel {
  double fx = 380.0, fy = 380.0;
  double cx = 320.0, cy = 240.0;
  int width = 640, height = 480;
  Mat3 R_BC = Mat3::Identity();
  Vec3 p_BC = Vec3::Zero();
};

enum class LandmarkStatus { kActive, kMarginalized, kDropped };

struct Landmark {
  long id = -1;
  Vec3 l_w = Vec3::Zero();
  LandmarkStatus status = LandmarkStatus::kActive;
};

struct FeatureObservation {
  long frame_id = -1;
  long landmark_id = -1;
  Vec2 uv = Vec2::Zero();
  double sigma_px = 1.0;
};

/// One feature-track row as ingested from (or written to) tracks.csv.
struct TrackObservation {
  long frame_id = -1;
  double t = 0.0;
  long landmark_id = -1;
  Vec2 uv = Vec2::Zero();
};

/// World point to camera frame for the body pose (q_WB, p_W).
Vec3 worldToCamera(const CameraModel& cam, const Quat& q_wb, const Vec3& p_w, const Vec3& l_w);

/// Pixel projection; nullopt when the point is behind the camera
/// (depth <= 1e-6 m), signalling the factor should be dropped.
std::optional<Vec2> project(const CameraModel& cam, const Quat& q_wb, const Vec3& p_w,
                            const Vec3& l_w);

/// h(l) - z in pixels; nullopt when behind the camera.
std::optional<Vec2> reprojectionResidual(const FeatureObservation& obs, const CameraModel& cam,
                                         const Quat& q_wb, const Vec3& p_w, const Vec3& l_w);

struct ReprojectionJacobians {
  Eigen::Matrix<double, 2, 6> J_pose;  // columns [dp, dtheta]
  Eigen::Matrix<double, 2, 3> J_landmark;
};

std::optional<ReprojectionJacobians> reprojectionJacobians(const CameraModel& cam,
                                                           const Quat& q_wb, const Vec3& p_w,
                                                           const Vec3& l_w);

struct TriangulationView {
  CameraModel cam;
  Quat q_wb = Quat::Identity();
  Vec3 p_w = Vec3::Zero();
  Vec2 uv = Vec2::Zero();
};

struct TriangulationResult {
  Vec3 point = Vec3::Zero();
  double max_reprojection_px = 0.0;
  bool low_quality = false;
};

/// Linear midpoint triangulation over >= 2 views. Throws ValidationError when
/// fewer than two views are given or the camera-center baseline is below
/// min_baseline. Flags low_quality on near-degenerate ray geometry or when
/// the reprojection error exceeds max_reproj_px in any view.
TriangulationResult triangulate(std::span<const TriangulationView> views,
                                double min_baseline = 0.01, double max_reproj_px = 5.0);

}  // namespace vimo
