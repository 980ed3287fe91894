#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vimo/estimator.hpp"
#include "vimo/evaluation.hpp"
#include "vimo/simulator.hpp"

namespace vimo {

/// Flat `key = value` configuration with # comments. Getter errors cite the
/// file name and key.
class KeyValues {
 public:
  static KeyValues fromFile(const std::filesystem::path& path);
  static KeyValues fromString(const std::string& text, const std::string& name);

  bool has(const std::string& key) const;
  double getDouble(const std::string& key) const;
  double getDouble(const std::string& key, double fallback) const;
  long getInt(const std::string& key) const;
  long getInt(const std::string& key, long fallback) const;
  std::string getString(const std::string& key) const;
  std::string getString(const std::string& key, const std::string& fallback) const;
  Vec3 getVec3(const std::string& key) const;
  Vec3 getVec3(const std::string& key, const Vec3& fallback) const;
  Mat3 getMat3(const std::string& key, const Mat3& fallback) const;  // 9 row-major numbers
  Eigen::Vector4d getVec4(const std::string& key, const Eigen::Vector4d& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::vector<double> numbers(const std::string& key, size_t count) const;
  std::map<std::string, std::string> values_;
  std::string name_;
};

/// Write-temp-then-rename; the target never holds partial content.
void writeFileAtomic(const std::filesystem::path& path, const std::string& content);

// CSV readers validate column counts, reject NaN/Inf, and check timestamp
// ordering; errors cite file, row, and column. Writers emit a header row and
// lossless %.17g numbers.
std::vector<ImuSample> readImuCsv(const std::filesystem::path& path);
void writeImuCsv(const std::filesystem::path& path, std::span<const ImuSample> samples);

std::vector<MagSample> readMagCsv(const std::filesystem::path& path);
void writeMagCsv(const std::filesystem::path& path, std::span<const MagSample> samples);

std::vector<TrackObservation> readTracksCsv(const std::filesystem::path& path);
void writeTracksCsv(const std::filesystem::path& path, std::span<const TrackObservation> rows);

Trajectory readTrajectoryCsv(const std::filesystem::path& path);
void writeTrajectoryCsv(const std::filesystem::path& path, const Trajectory& traj);

CameraModel readCameraConfig(const std::filesystem::path& path);
void writeCameraConfig(const std::filesystem::path& path, const CameraModel& cam);

/// 12-number record: 9 for A (row-major), 3 for h. The reader enforces the
/// symmetric positive-definite invariant on A.
MagCalibration readMagCalConfig(const std::filesystem::path& path);
void writeMagCalConfig(const std::filesystem::path& path, const MagCalibration& cal);

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<MagSample> mag;  // raw
  bool has_mag = false;
  std::vector<TrackObservation> tracks;
  CameraModel camera;
  std::optional<MagCalibration> magcal;
  Trajectory groundtruth;
  bool has_groundtruth = false;
};

Dataset loadDataset(const std::filesystem::path& dir);
void writeDataset(const std::filesystem::path& dir, const SimulatedData& data,
                  const CameraModel& camera);

struct SimSetup {
  TrajectoryModel model;
  EnvModel env;
  SimConfig cfg;
};

SimSetup parseSimConfig(const KeyValues& kv);

struct RunConfig {
  EstimatorSettings settings;
  std::string mode = "vio";  // "vio" | "vio_mag"
};

RunConfig parseRunConfig(const KeyValues& kv);

/// Named numeric column of a headered CSV file.
std::vector<double> readCsvColumn(const std::filesystem::path& path, const std::string& column,
                                  std::vector<double>* time_column = nullptr);

}  // namespace vimo
