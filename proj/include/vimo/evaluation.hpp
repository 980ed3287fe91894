#pragma once

#include <span>
#include <vector>

#include "vimo/so3.hpp"

namespace vimo {

struct StampedPose {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();  // carried through trajectory files, unused by metrics
};

/// Timestamped pose sequence, strictly increasing timestamps.
using Trajectory = std::vector<StampedPose>;

enum class AlignMode { kSim3, kSe3 };

struct AlignmentResult {
  double scale = 1.0;  // exactly 1 in se3 mode
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  AlignMode mode = AlignMode::kSim3;
};

/// Nearest-timestamp matching, each pose used at most once, |dt| <= max_dt.
/// Throws ValidationError when no pair matches.
std::vector<std::pair<int, int>> associate(const Trajectory& a, const Trajectory& b, double max_dt);

/// Closed-form least-squares similarity (or rigid) transform minimizing
/// |ref - (s R est + t)|^2 over the associated position pairs.
/// Throws ValidationError on fewer than 3 pairs or a degenerate configuration.
AlignmentResult umeyamaAlign(const Trajectory& est, const Trajectory& ref,
                             std::span<const std::pair<int, int>> pairs, AlignMode mode);

struct AteResult {
  double rmse_trans_m = 0.0;
  double rmse_rot_deg = 0.0;  // geodesic angle RMSE
  int pairs = 0;
  AlignmentResult alignment;
};

AteResult ate(const Trajectory& est, const Trajectory& ref, AlignMode mode, double max_dt = 0.02);

struct RpeYawStats {
  double segment_length_m = 0.0;
  double mean_deg = 0.0;
  double median_deg = 0.0;
  double rmse_deg = 0.0;
  int count = 0;
};

/// Relative yaw error over fixed path-length segments of the reference.
/// Throws ValidationError when a segment exceeds the total path length.
std::vector<RpeYawStats> rpeYaw(const Trajectory& est, const Trajectory& ref,
                                std::span<const double> segment_lengths, double max_dt = 0.02);

/// Heading of the body x axis projected onto the world horizontal plane.
double yawOf(const Quat& q);

/// |wrap(yaw_est(T) - yaw_est(0)) - wrap(yaw_ref(T) - yaw_ref(0))| in degrees;
/// insensitive to the initial alignment of est.
double finalRelativeYawErrorDeg(const Trajectory& est, const Trajectory& ref, double max_dt = 0.02);

double wrapAngle(double a);  // to (-pi, pi]

}  // namespace vimo
