#pragma once

#include <span>
#include <vector>

#include "vimo/so3.hpp"

namespace vimo {

struct MagSample {
  double t = 0.0;
  Vec3 m = Vec3::Zero();  // body frame, normalized field units
};

/// Soft-iron inverse A (symmetric positive definite) and hard-iron offset h.
/// Corrected measurement: m_tilde = A * (m_hat - h), on the unit sphere.
struct MagCalibration {
  Mat3 A = Mat3::Identity();
  Vec3 h = Vec3::Zero();

  static MagCalibration identity() { return {}; }
};

struct MagNoiseParams {
  double sigma_m = 0.01;  // normalized field units
};

/// Earth field direction in the ENU world frame, unit norm.
struct WorldField {
  Vec3 m_w = Vec3(0.0, 0.5, -std::sqrt(3.0) / 2.0);  // inclination 60 deg, declination 0

  /// ENU field direction from inclination/declination in degrees.
  static WorldField fromAngles(double inclination_deg, double declination_deg);
};

MagSample applyCalibration(const MagSample& raw, const MagCalibration& cal);

struct EllipsoidFitReport {
  MagCalibration cal;
  double rms_radius_error = 0.0;  // of corrected samples vs unit sphere
  int octants_covered = 0;
};

/// Algebraic quadric least squares constrained to an ellipsoid, decomposed
/// into symmetric A and center h with the sphere radius folded into A.
/// Throws ValidationError on too few samples (< 100), insufficient octant
/// coverage (< 6 of 8), or a non-elliptic quadric.
EllipsoidFitReport fitEllipsoidDetailed(std::span<const MagSample> samples);
MagCalibration fitEllipsoid(std::span<const MagSample> samples);

/// Sphere fit: A = I/r, h = fitted center. Throws ValidationError on too few
/// samples (< 50) or degenerate direction spread.
EllipsoidFitReport fitHardIronDetailed(std::span<const MagSample> samples);
MagCalibration fitHardIron(std::span<const MagSample> samples);

/// Relative-orientation residual for a magnetometer sample at t_j in
/// (t_k, t_k+1]: e = R_BW^k R_WB^k1 m_k1 - R(gamma_kj) m_j.
/// gamma_kj must already include any bias correction.
Vec3 magResidual(const Quat& gamma_kj, const Quat& q_wb_k, const Quat& q_wb_k1, const Vec3& m_j,
                 const Vec3& m_k1);

struct MagJacobians {
  Mat3 J_theta_k;   // w.r.t. right perturbation of q_wb_k
  Mat3 J_theta_k1;  // w.r.t. right perturbation of q_wb_k1
  Mat3 J_bg;        // through gamma_kj's stored bias Jacobian
};

/// Analytic Jacobians of the residual above. gamma_kj is the uncorrected
/// checkpoint; the correction Exp(dtheta_dbg * dbg) is applied internally
/// and must match how the caller builds the corrected gamma.
MagJacobians magResidualJacobians(const Quat& gamma_kj, const Mat3& dtheta_dbg, const Vec3& dbg,
                                  const Quat& q_wb_k, const Quat& q_wb_k1, const Vec3& m_j,
                                  const Vec3& m_k1);

/// Information matrix: both samples in the residual carry independent noise.
Mat3 magWeight(const MagNoiseParams& noise);

/// ENU alignment from mean accelerometer (gravity reaction, points up) and
/// mean magnetometer vectors, both in body frame. Throws ValidationError when
/// the two directions are within 5 degrees of (anti-)parallel.
Quat initialAlignment(const Vec3& accel_mean, const Vec3& mag_mean);

/// Gravity-only variant for magnetometer-free runs: up from the accelerometer,
/// yaw chosen so the body heading projects onto the world x axis.
Quat initialAlignmentGravityOnly(const Vec3& accel_mean);

}  // namespace vimo
