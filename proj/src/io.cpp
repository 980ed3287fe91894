#include "vimo/io.hpp"

#include <Eigen/Dense>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vimo/errors.hpp"

namespace vimo {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parseNumber(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  if (t.empty()) {
    throw ValidationError(where + ": empty numeric field");
  }
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) {
    throw ValidationError(where + ": not a number '" + t + "'");
  }
  if (!std::isfinite(v)) {
    throw ValidationError(where + ": non-finite value '" + t + "'");
  }
  return v;
}

std::vector<std::string> splitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool looksNumeric(const std::string& field) {
  const std::string t = trim(field);
  if (t.empty()) return false;
  char* end = nullptr;
  std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Generic row reader: header optional, fixed column count, located errors.
std::vector<std::vector<double>> readNumericCsv(const fs::path& path,
                                                const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open " + path.string());
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = splitCsvLine(stripped);
    if (line_no == 1 && !fields.empty() && !looksNumeric(fields[0])) {
      continue;  // header row
    }
    if (fields.size() != columns.size()) {
      throw ValidationError(path.filename().string() + ":" + std::to_string(line_no) +
                            ": expected " + std::to_string(columns.size()) + " columns, got " +
                            std::to_string(fields.size()));
    }
    std::vector<double> row(fields.size());
    for (size_t c = 0; c < fields.size(); ++c) {
      row[c] = parseNumber(fields[c], path.filename().string() + ":" + std::to_string(line_no) +
                                          ": column " + std::to_string(c + 1) + " (" + columns[c] +
                                          ")");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void checkIncreasing(const fs::path& path, const std::vector<std::vector<double>>& rows,
                     bool strict) {
  for (size_t i = 1; i < rows.size(); ++i) {
    const bool bad = strict ? !(rows[i][0] > rows[i - 1][0]) : rows[i][0] < rows[i - 1][0];
    if (bad) {
      throw ValidationError(path.filename().string() + ": rows are not sorted by t near t = " +
                            fmt(rows[i][0]));
    }
  }
}

}  // namespace

KeyValues KeyValues::fromFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config file " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return fromString(ss.str(), path.filename().string());
}

KeyValues KeyValues::fromString(const std::string& text, const std::string& name) {
  KeyValues kv;
  kv.name_ = name;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(name + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError(name + ":" + std::to_string(line_no) + ": empty key");
    }
    kv.values_[key] = value;
  }
  return kv;
}

bool KeyValues::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KeyValues::getString(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ValidationError(name_ + ": missing key '" + key + "'");
  }
  return it->second;
}

std::string KeyValues::getString(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::getDouble(const std::string& key) const {
  return parseNumber(getString(key), name_ + ": key '" + key + "'");
}

double KeyValues::getDouble(const std::string& key, double fallback) const {
  return has(key) ? getDouble(key) : fallback;
}

long KeyValues::getInt(const std::string& key) const {
  const double v = getDouble(key);
  const long i = std::lround(v);
  if (std::abs(v - static_cast<double>(i)) > 1e-9) {
    throw ValidationError(name_ + ": key '" + key + "' is not an integer");
  }
  return i;
}

long KeyValues::getInt(const std::string& key, long fallback) const {
  return has(key) ? getInt(key) : fallback;
}

std::vector<double> KeyValues::numbers(const std::string& key, size_t count) const {
  std::istringstream in(getString(key));
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    out.push_back(parseNumber(tok, name_ + ": key '" + key + "'"));
  }
  if (out.size() != count) {
    throw ValidationError(name_ + ": key '" + key + "' needs " + std::to_string(count) +
                          " numbers, got " + std::to_string(out.size()));
  }
  return out;
}

Vec3 KeyValues::getVec3(const std::string& key) const {
  const auto v = numbers(key, 3);
  return Vec3(v[0], v[1], v[2]);
}

Vec3 KeyValues::getVec3(const std::string& key, const Vec3& fallback) const {
  return has(key) ? getVec3(key) : fallback;
}

Mat3 KeyValues::getMat3(const std::string& key, const Mat3& fallback) const {
  if (!has(key)) return fallback;
  const auto v = numbers(key, 9);
  Mat3 m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return m;
}

Eigen::Vector4d KeyValues::getVec4(const std::string& key,
                                   const Eigen::Vector4d& fallback) const {
  if (!has(key)) return fallback;
  const auto v = numbers(key, 4);
  return Eigen::Vector4d(v[0], v[1], v[2], v[3]);
}

void writeFileAtomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ValidationError("cannot write " + tmp.string());
    }
    out << content;
    if (!out) {
      throw ValidationError("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::vector<ImuSample> readImuCsv(const fs::path& path) {
  const auto rows = readNumericCsv(path, {"t", "gx", "gy", "gz", "ax", "ay", "az"});
  checkIncreasing(path, rows, /*strict=*/true);
  std::vector<ImuSample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  }
  return out;
}

void writeImuCsv(const fs::path& path, std::span<const ImuSample> samples) {
  std::string s = "t,gx,gy,gz,ax,ay,az\n";
  for (const auto& m : samples) {
    s += fmt(m.t) + ',' + fmt(m.gyro.x()) + ',' + fmt(m.gyro.y()) + ',' + fmt(m.gyro.z()) + ',' +
         fmt(m.accel.x()) + ',' + fmt(m.accel.y()) + ',' + fmt(m.accel.z()) + '\n';
  }
  writeFileAtomic(path, s);
}

std::vector<MagSample> readMagCsv(const fs::path& path) {
  const auto rows = readNumericCsv(path, {"t", "mx", "my", "mz"});
  checkIncreasing(path, rows, /*strict=*/true);
  std::vector<MagSample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({r[0], Vec3(r[1], r[2], r[3])});
  }
  return out;
}

void writeMagCsv(const fs::path& path, std::span<const MagSample> samples) {
  std::string s = "t,mx,my,mz\n";
  for (const auto& m : samples) {
    s += fmt(m.t) + ',' + fmt(m.m.x()) + ',' + fmt(m.m.y()) + ',' + fmt(m.m.z()) + '\n';
  }
  writeFileAtomic(path, s);
}

std::vector<TrackObservation> readTracksCsv(const fs::path& path) {
  const auto rows = readNumericCsv(path, {"frame_id", "t", "landmark_id", "u", "v"});
  checkIncreasing(path, rows, /*strict=*/false);
  std::vector<TrackObservation> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    TrackObservation tr;
    tr.frame_id = std::lround(r[0]);
    tr.t = r[1];
    tr.landmark_id = std::lround(r[2]);
    tr.uv = Vec2(r[3], r[4]);
    out.push_back(tr);
  }
  return out;
}

void writeTracksCsv(const fs::path& path, std::span<const TrackObservation> rows) {
  std::string s = "frame_id,t,landmark_id,u,v\n";
  for (const auto& r : rows) {
    s += std::to_string(r.frame_id) + ',' + fmt(r.t) + ',' + std::to_string(r.landmark_id) + ',' +
         fmt(r.uv.x()) + ',' + fmt(r.uv.y()) + '\n';
  }
  writeFileAtomic(path, s);
}

Trajectory readTrajectoryCsv(const fs::path& path) {
  const auto rows =
      readNumericCsv(path, {"t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"});
  checkIncreasing(path, rows, /*strict=*/true);
  Trajectory out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    StampedPose p;
    p.t = r[0];
    p.p = Vec3(r[1], r[2], r[3]);
    p.q = canonical(Quat(r[4], r[5], r[6], r[7]));
    p.v = Vec3(r[8], r[9], r[10]);
    out.push_back(p);
  }
  return out;
}

void writeTrajectoryCsv(const fs::path& path, const Trajectory& traj) {
  std::string s = "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz\n";
  for (const auto& p : traj) {
    const Quat q = canonical(p.q);
    s += fmt(p.t) + ',' + fmt(p.p.x()) + ',' + fmt(p.p.y()) + ',' + fmt(p.p.z()) + ',' +
         fmt(q.w()) + ',' + fmt(q.x()) + ',' + fmt(q.y()) + ',' + fmt(q.z()) + ',' + fmt(p.v.x()) +
         ',' + fmt(p.v.y()) + ',' + fmt(p.v.z()) + '\n';
  }
  writeFileAtomic(path, s);
}

CameraModel readCameraConfig(const fs::path& path) {
  const auto kv = KeyValues::fromFile(path);
  CameraModel cam;
  cam.fx = kv.getDouble("fx");
  cam.fy = kv.getDouble("fy");
  cam.cx = kv.getDouble("cx");
  cam.cy = kv.getDouble("cy");
  cam.width = static_cast<int>(kv.getInt("width"));
  cam.height = static_cast<int>(kv.getInt("height"));
  if (cam.fx <= 0.0 || cam.fy <= 0.0) {
    throw ValidationError(path.filename().string() + ": focal lengths must be positive");
  }
  if (cam.cx < 0 || cam.cx > cam.width || cam.cy < 0 || cam.cy > cam.height) {
    throw ValidationError(path.filename().string() + ": principal point outside the image");
  }
  const Eigen::Vector4d q = kv.getVec4("T_BC_q", Eigen::Vector4d(1, 0, 0, 0));
  const Quat q_bc = canonical(Quat(q(0), q(1), q(2), q(3)));
  cam.R_BC = q_bc.toRotationMatrix();
  cam.p_BC = kv.getVec3("T_BC_t", Vec3::Zero());
  return cam;
}

void writeCameraConfig(const fs::path& path, const CameraModel& cam) {
  const Quat q = canonical(Quat(cam.R_BC));
  std::string s;
  s += "# pinhole camera, T_BC is the camera pose in the body frame\n";
  s += "fx = " + fmt(cam.fx) + "\nfy = " + fmt(cam.fy) + "\n";
  s += "cx = " + fmt(cam.cx) + "\ncy = " + fmt(cam.cy) + "\n";
  s += "width = " + std::to_string(cam.width) + "\nheight = " + std::to_string(cam.height) + "\n";
  s += "T_BC_q = " + fmt(q.w()) + ' ' + fmt(q.x()) + ' ' + fmt(q.y()) + ' ' + fmt(q.z()) + "\n";
  s += "T_BC_t = " + fmt(cam.p_BC.x()) + ' ' + fmt(cam.p_BC.y()) + ' ' + fmt(cam.p_BC.z()) + "\n";
  writeFileAtomic(path, s);
}

MagCalibration readMagCalConfig(const fs::path& path) {
  const auto kv = KeyValues::fromFile(path);
  MagCalibration cal;
  cal.A = kv.getMat3("A", Mat3::Identity());
  cal.h = kv.getVec3("h", Vec3::Zero());
  if ((cal.A - cal.A.transpose()).cwiseAbs().maxCoeff() > 1e-6) {
    throw ValidationError(path.filename().string() + ": A is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cal.A);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw ValidationError(path.filename().string() + ": A is not positive definite");
  }
  return cal;
}

void writeMagCalConfig(const fs::path& path, const MagCalibration& cal) {
  std::string s = "# soft-iron inverse A (row-major) and hard-iron offset h\n";
  s += "A =";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s += ' ' + fmt(cal.A(r, c));
  }
  s += "\nh = " + fmt(cal.h.x()) + ' ' + fmt(cal.h.y()) + ' ' + fmt(cal.h.z()) + "\n";
  writeFileAtomic(path, s);
}

Dataset loadDataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw ValidationError("dataset directory not found: " + dir.string());
  }
  Dataset ds;
  ds.imu = readImuCsv(dir / "imu.csv");
  ds.tracks = readTracksCsv(dir / "tracks.csv");
  ds.camera = readCameraConfig(dir / "camera.cfg");
  if (fs::exists(dir / "mag.csv")) {
    ds.mag = readMagCsv(dir / "mag.csv");
    ds.has_mag = true;
  }
  if (fs::exists(dir / "magcal.cfg")) {
    ds.magcal = readMagCalConfig(dir / "magcal.cfg");
  }
  if (fs::exists(dir / "groundtruth.csv")) {
    ds.groundtruth = readTrajectoryCsv(dir / "groundtruth.csv");
    ds.has_groundtruth = true;
  }
  return ds;
}

void writeDataset(const fs::path& dir, const SimulatedData& data, const CameraModel& camera) {
  fs::create_directories(dir);
  writeImuCsv(dir / "imu.csv", data.imu);
  writeMagCsv(dir / "mag.csv", data.mag);
  writeTracksCsv(dir / "tracks.csv", data.tracks);
  writeCameraConfig(dir / "camera.cfg", camera);
  writeTrajectoryCsv(dir / "groundtruth.csv", data.groundtruth);
}

SimSetup parseSimConfig(const KeyValues& kv) {
  SimSetup s;
  const std::string kind = kv.getString("trajectory", "circle");
  if (kind == "circle") {
    s.model.kind = TrajectoryKind::kCircle;
  } else if (kind == "lissajous") {
    s.model.kind = TrajectoryKind::kLissajous;
  } else if (kind == "stationary") {
    s.model.kind = TrajectoryKind::kStationary;
  } else {
    throw ValidationError("sim config: unknown trajectory '" + kind + "'");
  }
  s.model.duration = kv.getDouble("duration", 60.0);
  s.model.radius = kv.getDouble("radius", 5.0);
  s.model.rate = kv.getDouble("rate", 0.1);
  s.model.amplitudes = kv.getVec3("amplitudes", s.model.amplitudes);
  s.model.freqs = kv.getVec3("freqs", s.model.freqs);
  s.model.phase = kv.getDouble("phase", s.model.phase);
  s.model.yaw_tangent = kv.getInt("yaw_tangent", 1) != 0;
  s.model.spin_rate = kv.getDouble("spin_rate", 0.0);
  s.model.tilt_amplitude = kv.getDouble("tilt_amplitude", 0.0);
  s.model.tilt_rate = kv.getDouble("tilt_rate", 0.0);
  s.model.stationary_prefix = kv.getDouble("stationary_prefix", 0.0);
  s.model.ramp = kv.getDouble("ramp", 0.0);
  if (s.model.duration <= 0.0) {
    throw ValidationError("sim config: duration must be positive");
  }

  s.env.g_w = kv.getVec3("gravity", Vec3(0, 0, -9.80665));
  s.env.field = WorldField::fromAngles(kv.getDouble("inclination_deg", 60.0),
                                       kv.getDouble("declination_deg", 0.0));

  s.cfg.imu_rate = kv.getDouble("imu_rate", 200.0);
  s.cfg.mag_rate = kv.getDouble("mag_rate", s.cfg.imu_rate);
  s.cfg.cam_rate = kv.getDouble("cam_rate", 15.0);
  if (s.cfg.imu_rate <= 0 || s.cfg.mag_rate <= 0 || s.cfg.cam_rate <= 0) {
    throw ValidationError("sim config: rates must be positive");
  }
  if (s.cfg.cam_rate > s.cfg.imu_rate) {
    throw ValidationError("sim config: cam_rate must not exceed imu_rate");
  }
  s.cfg.sigma_g = kv.getDouble("sigma_g", 0.0);
  s.cfg.sigma_a = kv.getDouble("sigma_a", 0.0);
  s.cfg.sigma_bg = kv.getDouble("sigma_bg", 0.0);
  s.cfg.sigma_ba = kv.getDouble("sigma_ba", 0.0);
  s.cfg.init_bg = kv.getVec3("init_bg", Vec3::Zero());
  s.cfg.init_ba = kv.getVec3("init_ba", Vec3::Zero());
  s.cfg.sigma_m = kv.getDouble("sigma_m", 0.0);
  s.cfg.sigma_px = kv.getDouble("sigma_px", 0.0);
  s.cfg.soft_iron = kv.getMat3("soft_iron", Mat3::Identity());
  s.cfg.hard_iron = kv.getVec3("hard_iron", Vec3::Zero());
  if ((s.cfg.soft_iron - s.cfg.soft_iron.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw ValidationError("sim config: soft_iron must be symmetric");
  }
  s.cfg.landmark_count = static_cast<int>(kv.getInt("landmark_count", 300));
  s.cfg.tube_radius_min = kv.getDouble("tube_radius_min", 2.0);
  s.cfg.tube_radius_max = kv.getDouble("tube_radius_max", 6.0);
  s.cfg.max_obs_per_frame = static_cast<int>(kv.getInt("max_obs_per_frame", 60));
  s.cfg.seed = static_cast<uint64_t>(kv.getInt("seed", 42));

  s.cfg.camera.fx = kv.getDouble("fx", 380.0);
  s.cfg.camera.fy = kv.getDouble("fy", 380.0);
  s.cfg.camera.cx = kv.getDouble("cx", 320.0);
  s.cfg.camera.cy = kv.getDouble("cy", 240.0);
  s.cfg.camera.width = static_cast<int>(kv.getInt("width", 640));
  s.cfg.camera.height = static_cast<int>(kv.getInt("height", 480));
  const Eigen::Vector4d q_default = [] {
    const Quat q = canonical(Quat(forwardLookingRbc()));
    return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
  }();
  const Eigen::Vector4d q = kv.getVec4("T_BC_q", q_default);
  s.cfg.camera.R_BC = canonical(Quat(q(0), q(1), q(2), q(3))).toRotationMatrix();
  s.cfg.camera.p_BC = kv.getVec3("T_BC_t", Vec3::Zero());
  return s;
}

RunConfig parseRunConfig(const KeyValues& kv) {
  RunConfig rc;
  rc.mode = kv.getString("mode", "vio");
  if (rc.mode != "vio" && rc.mode != "vio_mag") {
    throw ValidationError("run config: mode must be 'vio' or 'vio_mag'");
  }
  rc.settings.use_mag = rc.mode == "vio_mag";

  auto& o = rc.settings.opt;
  o.max_iterations = static_cast<int>(kv.getInt("max_iterations", o.max_iterations));
  o.lm_initial_lambda = kv.getDouble("lm_initial_lambda", o.lm_initial_lambda);
  o.lm_lambda_min = kv.getDouble("lm_lambda_min", o.lm_lambda_min);
  o.lm_lambda_max = kv.getDouble("lm_lambda_max", o.lm_lambda_max);
  o.huber_threshold_px = kv.getDouble("huber_threshold_px", o.huber_threshold_px);
  o.convergence_tol = kv.getDouble("convergence_tol", o.convergence_tol);
  o.window_keyframes = static_cast<int>(kv.getInt("window_keyframes", o.window_keyframes));
  o.window_recent = static_cast<int>(kv.getInt("window_recent", o.window_recent));
  o.mag_stride = static_cast<int>(kv.getInt("mag_stride", o.mag_stride));
  o.reprop_bg_threshold = kv.getDouble("reprop_bg_threshold", o.reprop_bg_threshold);
  o.reprop_ba_threshold = kv.getDouble("reprop_ba_threshold", o.reprop_ba_threshold);
  o.keyframe_overlap = kv.getDouble("keyframe_overlap", o.keyframe_overlap);
  o.keyframe_translation_m = kv.getDouble("keyframe_translation_m", o.keyframe_translation_m);
  o.sigma_px = kv.getDouble("sigma_px", o.sigma_px);
  o.prior_sigma_p = kv.getDouble("prior_sigma_p", o.prior_sigma_p);
  o.prior_sigma_yaw = kv.getDouble("prior_sigma_yaw", o.prior_sigma_yaw);
  o.prior_sigma_v = kv.getDouble("prior_sigma_v", o.prior_sigma_v);
  o.prior_sigma_bg = kv.getDouble("prior_sigma_bg", o.prior_sigma_bg);
  o.prior_sigma_ba = kv.getDouble("prior_sigma_ba", o.prior_sigma_ba);
  if (o.window_keyframes < 2) {
    throw ValidationError("run config: window_keyframes must be at least 2");
  }
  if (o.max_iterations <= 0 || o.convergence_tol <= 0 || o.sigma_px <= 0) {
    throw ValidationError("run config: optimizer parameters must be positive");
  }

  auto& n = rc.settings.imu_noise;
  n.sigma_g = kv.getDouble("sigma_g", n.sigma_g);
  n.sigma_a = kv.getDouble("sigma_a", n.sigma_a);
  n.sigma_bg = kv.getDouble("sigma_bg", n.sigma_bg);
  n.sigma_ba = kv.getDouble("sigma_ba", n.sigma_ba);
  n.rate = kv.getDouble("imu_rate", n.rate);
  if (n.sigma_g <= 0 || n.sigma_a <= 0 || n.sigma_bg <= 0 || n.sigma_ba <= 0 || n.rate <= 0) {
    throw ValidationError("run config: IMU noise parameters must be strictly positive");
  }
  rc.settings.mag_noise.sigma_m = kv.getDouble("sigma_m", rc.settings.mag_noise.sigma_m);
  if (rc.settings.mag_noise.sigma_m <= 0) {
    throw ValidationError("run config: sigma_m must be strictly positive");
  }
  rc.settings.gravity = kv.getVec3("gravity", rc.settings.gravity);
  return rc;
}

std::vector<double> readCsvColumn(const fs::path& path, const std::string& column,
                                  std::vector<double>* time_column) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ValidationError(path.filename().string() + ": empty file");
  }
  const auto header = splitCsvLine(trim(line));
  int col = -1, tcol = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == column) col = static_cast<int>(i);
    if (trim(header[i]) == "t") tcol = static_cast<int>(i);
  }
  if (col < 0) {
    throw ValidationError(path.filename().string() + ": no column named '" + column + "'");
  }
  std::vector<double> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = splitCsvLine(stripped);
    if (static_cast<int>(fields.size()) <= std::max(col, tcol)) {
      throw ValidationError(path.filename().string() + ":" + std::to_string(line_no) +
                            ": too few columns");
    }
    out.push_back(parseNumber(fields[col], path.filename().string() + ":" +
                                               std::to_string(line_no) + ": column '" + column +
                                               "'"));
    if (time_column != nullptr && tcol >= 0) {
      time_column->push_back(parseNumber(fields[tcol], path.filename().string() + ":" +
                                                           std::to_string(line_no) +
                                                           ": column 't'"));
    }
  }
  return out;
}

}  // namespace vimo
