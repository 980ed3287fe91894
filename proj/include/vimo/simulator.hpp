#pragma once

#include <cstdint>
#include <vector>

#include "vimo/evaluation.hpp"
#include "vimo/imu_preintegration.hpp"
#include "vimo/magnetometer.hpp"
#include "vimo/vision.hpp"

namespace vimo {

enum class TrajectoryKind { kCircle, kLissajous, kStationary };

/// Analytic trajectory with closed-form derivatives. The optional stationary
/// prefix and C2 ramp warp time so runs can start at rest; with both zero the
/// model is the pure parametric curve from t = 0.
struct TrajectoryModel {
  TrajectoryKind kind = TrajectoryKind::kCircle;
  double duration = 60.0;

  double radius = 5.0;  // circle radius / stationary offset, m
  double rate = 0.1;    // circle angular rate, rad/s

  Vec3 amplitudes = Vec3(4.0, 3.0, 1.0);   // lissajous, m
  Vec3 freqs = Vec3(0.10, 0.13, 0.07);     // lissajous, rad/s
  double phase = 1.5707963267948966;       // lissajous y phase

  bool yaw_tangent = true;   // heading follows the path tangent
  double spin_rate = 0.0;    // extra yaw rate, rad/s
  double tilt_amplitude = 0.0;  // roll/pitch oscillation, rad
  double tilt_rate = 0.0;       // rad/s

  double stationary_prefix = 0.0;  // s
  double ramp = 0.0;               // s
};

struct TrajectorySample {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();  // q_WB
  Vec3 v = Vec3::Zero();      // world
  Vec3 a = Vec3::Zero();      // world
  Vec3 omega_b = Vec3::Zero();
};

struct EnvModel {
  Vec3 g_w = Vec3(0.0, 0.0, -9.80665);
  WorldField field;
};

/// Camera looking along body +x: z_C = x_B, x_C = -y_B, y_C = -z_B.
Mat3 forwardLookingRbc();

struct SimConfig {
  SimConfig() { camera.R_BC = forwardLookingRbc(); }

  double imu_rate = 200.0;
  double mag_rate = 200.0;  // synchronized 9-axis sampling
  double cam_rate = 15.0;

  // Generating noise densities; zero means noise-free.
  double sigma_g = 0.0;   // rad/s/sqrt(Hz)
  double sigma_a = 0.0;   // m/s^2/sqrt(Hz)
  double sigma_bg = 0.0;  // rad/s^2/sqrt(Hz), bias random walk
  double sigma_ba = 0.0;  // m/s^3/sqrt(Hz)
  Vec3 init_bg = Vec3::Zero();
  Vec3 init_ba = Vec3::Zero();

  double sigma_m = 0.0;   // normalized field units
  double sigma_px = 0.0;  // pixels

  Mat3 soft_iron = Mat3::Identity();
  Vec3 hard_iron = Vec3::Zero();

  int landmark_count = 300;
  double tube_radius_min = 2.0;
  double tube_radius_max = 6.0;
  int max_obs_per_frame = 60;

  CameraModel camera;
  uint64_t seed = 42;
};

/// Throws ValidationError for t outside [0, duration].
TrajectorySample groundTruth(const TrajectoryModel& model, double t);

std::vector<ImuSample> genImu(const TrajectoryModel& model, const EnvModel& env,
                              const SimConfig& cfg);

/// Raw (distorted) magnetometer stream: m_hat = S R' m_w + h + noise.
std::vector<MagSample> genMag(const TrajectoryModel& model, const EnvModel& env,
                              const SimConfig& cfg);

std::vector<Vec3> genLandmarks(const TrajectoryModel& model, const SimConfig& cfg);

std::vector<TrackObservation> genFeatureTracks(const TrajectoryModel& model, const EnvModel& env,
                                               const SimConfig& cfg,
                                               std::span<const Vec3> landmarks);

/// Ground-truth trajectory sampled at the camera rate.
Trajectory genGroundTruth(const TrajectoryModel& model, const SimConfig& cfg);

struct SimulatedData {
  std::vector<ImuSample> imu;
  std::vector<MagSample> mag;
  std::vector<TrackObservation> tracks;
  std::vector<Vec3> landmarks;
  Trajectory groundtruth;
};

SimulatedData simulate(const TrajectoryModel& model, const EnvModel& env, const SimConfig& cfg);

}  // namespace vimo
