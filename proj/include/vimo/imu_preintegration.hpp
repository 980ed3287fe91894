#pragma once

#include <vector>

#include "vimo/so3.hpp"

namespace vimo {

struct ImuSample {
  double t = 0.0;  // seconds
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2, body frame (specific force)
};

/// Continuous-time noise densities plus the nominal sample rate.
struct ImuNoiseParams {
  double sigma_g = 1.7e-4;   // rad/s/sqrt(Hz)
  double sigma_a = 2.0e-3;   // m/s^2/sqrt(Hz)
  double sigma_bg = 2.0e-5;  // rad/s^2/sqrt(Hz)
  double sigma_ba = 3.0e-4;  // m/s^3/sqrt(Hz)
  double rate = 200.0;       // Hz
};

struct SystemState {
  double t = 0.0;
  Vec3 p = Vec3::Zero();         // world frame, m
  Quat q = Quat::Identity();     // q_WB
  Vec3 v = Vec3::Zero();         // world frame, m/s
  Vec3 bg = Vec3::Zero();        // rad/s
  Vec3 ba = Vec3::Zero();        // m/s^2
};

/// Intermediate orientation gamma_k^j at an IMU sample time, kept so
/// magnetometer factors can transport measurements to the frame at t_k.
struct GammaCheckpoint {
  double t = 0.0;
  Quat gamma = Quat::Identity();
  Mat3 dtheta_dbg = Mat3::Zero();
};

struct BiasCorrectedTerms {
  Vec3 alpha = Vec3::Zero();
  Vec3 beta = Vec3::Zero();
  Quat gamma = Quat::Identity();
  bool repropagation_required = false;
};

/// Accumulates body-frame relative motion between two frame times.
/// Error-state order is [d_alpha, d_beta, d_theta, d_bg, d_ba].
class ImuPreintegration {
 public:
  static constexpr int kStateDim = 15;

  ImuPreintegration(const Vec3& bg_lin, const Vec3& ba_lin, const ImuNoiseParams& noise,
                    double reprop_bg_threshold = 0.01, double reprop_ba_threshold = 0.1);

  /// Midpoint step over [s0.t, s1.t]. Throws ValidationError if s1.t <= s0.t
  /// or if s0 does not continue the previously integrated stream.
  void integrate(const ImuSample& s0, const ImuSample& s1);

  /// Re-run the accumulated sample stream with new linearization biases.
  void repropagate(const Vec3& bg_lin, const Vec3& ba_lin);

  /// First-order corrected terms; flags repropagation when the bias change
  /// exceeds the configured thresholds.
  BiasCorrectedTerms biasCorrected(const Vec3& bg, const Vec3& ba) const;

  const Vec3& alpha() const { return alpha_; }
  const Vec3& beta() const { return beta_; }
  const Quat& gamma() const { return gamma_; }
  const Eigen::Matrix<double, 15, 15>& cov() const { return cov_; }
  /// Columns [d/d_bg, d/d_ba] of the accumulated error-state transition.
  Eigen::Matrix<double, 15, 6> biasJacobian() const { return jac_.block<15, 6>(0, 9); }
  Mat3 dAlphaDbg() const { return jac_.block<3, 3>(0, 9); }
  Mat3 dAlphaDba() const { return jac_.block<3, 3>(0, 12); }
  Mat3 dBetaDbg() const { return jac_.block<3, 3>(3, 9); }
  Mat3 dBetaDba() const { return jac_.block<3, 3>(3, 12); }
  Mat3 dThetaDbg() const { return jac_.block<3, 3>(6, 9); }
  const Vec3& bgLin() const { return bg_lin_; }
  const Vec3& baLin() const { return ba_lin_; }
  double dtTotal() const { return dt_total_; }
  const std::vector<GammaCheckpoint>& gammaCheckpoints() const { return checkpoints_; }
  const std::vector<ImuSample>& samples() const { return samples_; }
  const ImuNoiseParams& noise() const { return noise_; }
  double repropBgThreshold() const { return reprop_bg_; }
  double repropBaThreshold() const { return reprop_ba_; }

  /// Information matrix cov()^-1 with a tiny diagonal floor for short streams.
  /// Cached; invalidated by integrate/repropagate.
  const Eigen::Matrix<double, 15, 15>& information() const;

 private:
  void reset();
  void step(const ImuSample& s0, const ImuSample& s1);

  Vec3 bg_lin_, ba_lin_;
  ImuNoiseParams noise_;
  double reprop_bg_, reprop_ba_;

  Vec3 alpha_ = Vec3::Zero();
  Vec3 beta_ = Vec3::Zero();
  Quat gamma_ = Quat::Identity();
  Eigen::Matrix<double, 15, 15> cov_ = Eigen::Matrix<double, 15, 15>::Zero();
  Eigen::Matrix<double, 15, 15> jac_ = Eigen::Matrix<double, 15, 15>::Identity();
  double dt_total_ = 0.0;
  std::vector<GammaCheckpoint> checkpoints_;
  std::vector<ImuSample> samples_;
  mutable Eigen::Matrix<double, 15, 15> info_cache_;
  mutable bool info_valid_ = false;
};

/// Propagate x_k through the preintegrated terms (biases copied forward).
SystemState predictState(const ImuPreintegration& pre, const SystemState& x_k, const Vec3& g_w);

/// Inertial residual, rows [r_p, r_v, r_theta, r_bg, r_ba] matching the
/// covariance ordering. Uses bias-corrected alpha/beta/gamma at x_k's biases.
Eigen::Matrix<double, 15, 1> inertialResidual(const ImuPreintegration& pre, const SystemState& x_k,
                                              const SystemState& x_k1, const Vec3& g_w);

struct InertialJacobians {
  // Columns per state: [dp, dtheta, dv, dbg, dba].
  Eigen::Matrix<double, 15, 15> J_k;
  Eigen::Matrix<double, 15, 15> J_k1;
};

InertialJacobians inertialJacobians(const ImuPreintegration& pre, const SystemState& x_k,
                                    const SystemState& x_k1, const Vec3& g_w);

}  // namespace vimo
