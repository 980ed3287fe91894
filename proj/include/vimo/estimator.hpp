#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vimo/evaluation.hpp"
#include "vimo/imu_preintegration.hpp"
#include "vimo/magnetometer.hpp"
#include "vimo/marginalization.hpp"
#include "vimo/vision.hpp"

namespace vimo {

struct OptimizerConfig {
  int max_iterations = 8;
  double lm_initial_lambda = 1e-6;
  double lm_lambda_min = 1e-9;
  double lm_lambda_max = 1e4;
  double huber_threshold_px = 2.0;
  double convergence_tol = 1e-6;  // relative cost decrease
  double step_tol = 1e-8;        // max-norm of an accepted update
  int window_keyframes = 7;       // M_kf
  int window_recent = 3;          // M_recent
  int mag_stride = 1;
  double reprop_bg_threshold = 0.01;  // rad/s
  double reprop_ba_threshold = 0.1;   // m/s^2
  double keyframe_overlap = 0.6;
  double keyframe_translation_m = 0.3;
  double sigma_px = 1.0;
  double triangulation_min_baseline_m = 0.01;
  double triangulation_max_reproj_px = 5.0;
  // Bootstrap prior: position + yaw fix the gauge; velocity and biases make
  // the window well posed before any landmarks are triangulated.
  double prior_sigma_p = 1e-3;
  double prior_sigma_yaw = 1e-3;
  double prior_sigma_v = 0.1;
  double prior_sigma_bg = 0.01;
  double prior_sigma_ba = 0.1;
};

struct EstimatorSettings {
  OptimizerConfig opt;
  ImuNoiseParams imu_noise;
  MagNoiseParams mag_noise;
  Vec3 gravity = Vec3(0.0, 0.0, -9.80665);
  CameraModel camera;
  bool use_mag = false;
};

/// Marginalization prior over a prefix of the window states: residual
/// r(x) = r0 + J0 * boxminus(x, lin_states), information identity.
struct MarginalizationPrior {
  MatX J0;
  VecX r0;
  MatX H0;  // cached J0' J0
  std::vector<SystemState> lin_states;

  bool empty() const { return J0.rows() == 0; }
  int numStates() const { return static_cast<int>(lin_states.size()); }
  void setFactor(MatX j0, VecX r0_in) {
    J0 = std::move(j0);
    r0 = std::move(r0_in);
    H0 = J0.transpose() * J0;
  }
};

Eigen::Matrix<double, 15, 1> stateBoxminus(const SystemState& x, const SystemState& anchor);
SystemState stateBoxplus(const SystemState& x, const Eigen::Matrix<double, 15, 1>& delta);

struct Frame {
  long frame_id = -1;
  SystemState state;
  bool is_keyframe = false;
  std::shared_ptr<ImuPreintegration> preint;  // from the previous window state
  std::vector<MagSample> mag;                 // calibrated samples in (t_prev, t]
  // Last magnetometer measurement of the interval transported to the frame
  // time with the preintegrated rotation (they rarely coincide exactly).
  Vec3 mag_target = Vec3::Zero();
  std::vector<long> track_ids;                // ext landmark ids observed here
};

struct OptimizeStats {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
};

/// Keyframe-based sliding-window estimator minimizing reprojection, inertial,
/// magnetometer, and marginalization-prior residuals with on-manifold LM.
class Estimator {
 public:
  explicit Estimator(EstimatorSettings settings);

  /// Installs the bootstrap state plus the gauge/bootstrap prior.
  void addFirstFrame(const SystemState& x0, long frame_id,
                     std::span<const TrackObservation> tracks);

  /// imu_segment must span [t_prev, t] exactly (endpoints interpolated by the
  /// caller, see sliceImuSegment). mag_segment holds calibrated samples in
  /// (t_prev, t]. Throws ValidationError on timestamp regression.
  void addFrame(double t, long frame_id, std::span<const ImuSample> imu_segment,
                std::span<const MagSample> mag_segment,
                std::span<const TrackObservation> tracks);

  OptimizeStats optimize();

  /// Applies the two-case policy while the window exceeds its capacity.
  void marginalize();

  const std::deque<Frame>& frames() const { return frames_; }
  const MarginalizationPrior& prior() const { return prior_; }
  const EstimatorSettings& settings() const { return settings_; }
  size_t numActiveLandmarks() const;
  std::optional<Vec3> landmarkPosition(long ext_id) const;
  double totalCost() const;

 private:
  struct LandmarkEntry {
    long ext_id = -1;
    Vec3 p_w = Vec3::Zero();
    bool active = false;
    struct Obs {
      long frame_id;
      Vec2 uv;
    };
    std::vector<Obs> obs;
  };

  struct LandmarkSystem {
    long internal_id;
    Mat3 Hll;
    Vec3 gl;
    std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>> coupling;  // pose block only
  };

  struct Assembly {
    MatX H;
    VecX g;
    double cost = 0.0;
    std::vector<LandmarkSystem> lms;
  };

  void attachTracks(Frame& frame, std::span<const TrackObservation> tracks);
  bool decideKeyframe(const Frame& frame) const;
  void tryTriangulate();
  void repropagateIfNeeded();
  std::unordered_map<long, int> frameIndexById() const;

  std::vector<SystemState> currentStates() const;
  /// Active landmark positions sorted by internal id.
  std::vector<std::pair<long, Vec3>> activeLandmarkPositions() const;
  /// Cost of the window factors at candidate states/landmark positions; the
  /// factor layout (preintegrations, observations) comes from the members.
  double evaluateCost(std::span<const SystemState> states,
                      std::span<const std::pair<long, Vec3>> lm_positions) const;
  Assembly assemble() const;
  void removeLandmarkObs(long frame_id);
  void eraseLandmark(long internal_id);
  void refreshMagTarget(Frame& frame) const;
  void marginalizeOldest();
  /// Case (a) for a frame in the middle of the window: its visual
  /// measurements are dropped, the two adjacent preintegrations are merged
  /// over the union of their samples, and the prior (when it spans the state)
  /// absorbs it by Schur complement.
  void dropFrameMergeImu(int j);

  EstimatorSettings settings_;
  std::deque<Frame> frames_;
  MarginalizationPrior prior_;
  std::map<long, LandmarkEntry> landmarks_;        // internal id -> entry
  std::unordered_map<long, long> ext_to_internal_;  // open entries only
  long next_internal_id_ = 0;
  double lambda_ = 1e-6;
};

/// Samples covering [t0, t1] with linearly interpolated endpoint samples.
/// Throws ValidationError when the stream does not cover the interval.
std::vector<ImuSample> sliceImuSegment(std::span<const ImuSample> imu, double t0, double t1);

struct InitializationParams {
  double window_s = 1.0;
  double search_horizon_s = 5.0;
  double gyro_std_threshold = 0.02;   // rad/s
  double accel_std_threshold = 0.08;  // m/s^2
};

struct InitializationResult {
  SystemState x0;
  bool stationary_found = false;
  std::string note;
};

/// Stationary-segment bootstrap: gyro mean becomes the initial gyro bias and
/// the accel/mag means feed the ENU alignment. Falls back to the first
/// window_s of data with a warning note when nothing stationary is found.
InitializationResult initializeFromSensors(std::span<const ImuSample> imu,
                                           std::span<const MagSample> mag_calibrated, bool use_mag,
                                           double state_time, const InitializationParams& params);

struct SequenceInput {
  std::vector<ImuSample> imu;
  std::vector<MagSample> mag;  // raw, calibrated internally when use_mag
  std::vector<TrackObservation> tracks;
  CameraModel camera;
  std::optional<MagCalibration> magcal;
};

struct RunSummary {
  int frames = 0;
  int keyframes = 0;
  long lm_iterations = 0;
  double optimize_seconds = 0.0;
  std::vector<std::string> warnings;
};

/// Streams frames through the estimator and returns the per-frame trajectory.
Trajectory runSequence(const SequenceInput& input, const EstimatorSettings& settings,
                       RunSummary* summary = nullptr);

}  // namespace vimo
