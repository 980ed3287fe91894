#include "vimo/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vimo/errors.hpp"

namespace vimo {

namespace {

struct TimeWarp {
  double s = 0.0;       // warped time
  double sdot = 0.0;    // ds/dt
  double sddot = 0.0;   // d2s/dt2
};

TimeWarp timeWarp(const TrajectoryModel& m, double t) {
  const double t0 = m.stationary_prefix;
  if (t0 > 0.0 && t <= t0) {
    return {0.0, 0.0, 0.0};
  }
  if (m.ramp > 0.0 && t < t0 + m.ramp) {
    const double u = (t - t0) / m.ramp;
    TimeWarp w;
    w.s = m.ramp * (u * u * u - 0.5 * u * u * u * u);
    w.sdot = 3.0 * u * u - 2.0 * u * u * u;
    w.sddot = (6.0 * u - 6.0 * u * u) / m.ramp;
    return w;
  }
  const double offset = m.ramp > 0.0 ? 0.5 * m.ramp : 0.0;
  return {offset + (t - t0 - m.ramp), 1.0, 0.0};
}

struct CurvePoint {
  Vec3 p, dp, ddp;  // value and derivatives w.r.t. warped time s
};

CurvePoint curve(const TrajectoryModel& m, double s) {
  CurvePoint c;
  switch (m.kind) {
    case TrajectoryKind::kCircle: {
      const double th = m.rate * s;
      const double r = m.radius;
      c.p = Vec3(r * std::cos(th), r * std::sin(th), 0.0);
      c.dp = Vec3(-r * m.rate * std::sin(th), r * m.rate * std::cos(th), 0.0);
      c.ddp = Vec3(-r * m.rate * m.rate * std::cos(th), -r * m.rate * m.rate * std::sin(th), 0.0);
      break;
    }
    case TrajectoryKind::kLissajous: {
      const Vec3 ph(0.0, m.phase, 0.0);
      for (int i = 0; i < 3; ++i) {
        const double arg = m.freqs(i) * s + ph(i);
        c.p(i) = m.amplitudes(i) * std::sin(arg);
        c.dp(i) = m.amplitudes(i) * m.freqs(i) * std::cos(arg);
        c.ddp(i) = -m.amplitudes(i) * m.freqs(i) * m.freqs(i) * std::sin(arg);
      }
      break;
    }
    case TrajectoryKind::kStationary: {
      c.p.setZero();
      c.dp.setZero();
      c.ddp.setZero();
      break;
    }
  }
  return c;
}

struct EulerAngles {
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  double droll = 0.0, dpitch = 0.0, dyaw = 0.0;  // time derivatives
};

EulerAngles orientationProfile(const TrajectoryModel& m, const CurvePoint& c, const TimeWarp& w) {
  EulerAngles e;
  if (m.yaw_tangent && m.kind != TrajectoryKind::kStationary) {
    // Heading of the ds-velocity; defined even while sdot = 0.
    const double hx = c.dp.x(), hy = c.dp.y();
    const double h2 = hx * hx + hy * hy;
    if (h2 > 1e-12) {
      e.yaw = std::atan2(hy, hx);
      const double dyaw_ds = (hx * c.ddp.y() - hy * c.ddp.x()) / h2;
      e.dyaw = dyaw_ds * w.sdot;
    }
  }
  e.yaw += m.spin_rate * w.s;
  e.dyaw += m.spin_rate * w.sdot;
  if (m.tilt_amplitude != 0.0) {
    const double ar = m.tilt_rate;
    e.roll = m.tilt_amplitude * std::sin(ar * w.s);
    e.droll = m.tilt_amplitude * ar * std::cos(ar * w.s) * w.sdot;
    e.pitch = m.tilt_amplitude * std::sin(0.7 * ar * w.s + 0.5) - m.tilt_amplitude * std::sin(0.5);
    e.dpitch = m.tilt_amplitude * 0.7 * ar * std::cos(0.7 * ar * w.s + 0.5) * w.sdot;
  }
  return e;
}

Mat3 rotZ(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}
Mat3 rotY(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}
Mat3 rotX(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

}  // namespace

Mat3 forwardLookingRbc() {
  Mat3 r;
  r.col(0) = Vec3(0, -1, 0);   // camera x (right) in body
  r.col(1) = Vec3(0, 0, -1);   // camera y (down) in body
  r.col(2) = Vec3(1, 0, 0);    // camera z (forward) in body
  return r;
}

TrajectorySample groundTruth(const TrajectoryModel& model, double t) {
  if (t < -1e-12 || t > model.duration + 1e-12) {
    throw ValidationError("groundTruth: t = " + std::to_string(t) + " outside [0, " +
                          std::to_string(model.duration) + "]");
  }
  const TimeWarp w = timeWarp(model, t);
  const CurvePoint c = curve(model, w.s);
  const EulerAngles e = orientationProfile(model, c, w);

  TrajectorySample out;
  out.p = c.p;
  out.v = c.dp * w.sdot;
  out.a = c.ddp * w.sdot * w.sdot + c.dp * w.sddot;

  const Mat3 r_wb = rotZ(e.yaw) * rotY(e.pitch) * rotX(e.roll);
  out.q = canonical(Quat(r_wb));

  // Body rates for the ZYX Euler profile.
  const double sr = std::sin(e.roll), cr = std::cos(e.roll);
  const double sp = std::sin(e.pitch), cp = std::cos(e.pitch);
  out.omega_b = Vec3(e.droll - e.dyaw * sp, e.dpitch * cr + e.dyaw * cp * sr,
                     -e.dpitch * sr + e.dyaw * cp * cr);
  return out;
}

std::vector<ImuSample> genImu(const TrajectoryModel& model, const EnvModel& env,
                              const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn3 = [&]() { return Vec3(normal(rng), normal(rng), normal(rng)); };

  const double dt = 1.0 / cfg.imu_rate;
  const long n = std::lround(model.duration * cfg.imu_rate);
  std::vector<ImuSample> out;
  out.reserve(n + 1);
  Vec3 bg = cfg.init_bg;
  Vec3 ba = cfg.init_ba;
  const double sg = cfg.sigma_g * std::sqrt(cfg.imu_rate);
  const double sa = cfg.sigma_a * std::sqrt(cfg.imu_rate);
  const double sbg = cfg.sigma_bg * std::sqrt(dt);
  const double sba = cfg.sigma_ba * std::sqrt(dt);
  for (long i = 0; i <= n; ++i) {
    const double t = i * dt;
    const auto gt = groundTruth(model, std::min(t, model.duration));
    ImuSample s;
    s.t = t;
    s.gyro = gt.omega_b + bg + sg * randn3();
    s.accel = gt.q.toRotationMatrix().transpose() * (gt.a - env.g_w) + ba + sa * randn3();
    out.push_back(s);
    bg += sbg * randn3();
    ba += sba * randn3();
  }
  return out;
}

std::vector<MagSample> genMag(const TrajectoryModel& model, const EnvModel& env,
                              const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed + 2);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double dt = 1.0 / cfg.mag_rate;
  const long n = std::lround(model.duration * cfg.mag_rate);
  std::vector<MagSample> out;
  out.reserve(n + 1);
  for (long i = 0; i <= n; ++i) {
    const double t = i * dt;
    const auto gt = groundTruth(model, std::min(t, model.duration));
    const Vec3 field_b = gt.q.toRotationMatrix().transpose() * env.field.m_w;
    Vec3 noise(normal(rng), normal(rng), normal(rng));
    out.push_back({t, cfg.soft_iron * field_b + cfg.hard_iron + cfg.sigma_m * noise});
  }
  return out;
}

std::vector<Vec3> genLandmarks(const TrajectoryModel& model, const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed + 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<Vec3> out;
  out.reserve(cfg.landmark_count);
  for (int i = 0; i < cfg.landmark_count; ++i) {
    // Spread anchor times along the path, offset radially: a loose tube.
    const double frac = (i + uni(rng)) / cfg.landmark_count;
    const double t = std::clamp(frac * model.duration, 0.0, model.duration);
    const auto gt = groundTruth(model, t);
    Vec3 dir(normal(rng), normal(rng), normal(rng));
    while (dir.norm() < 1e-6) dir = Vec3(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    const double radius =
        cfg.tube_radius_min + (cfg.tube_radius_max - cfg.tube_radius_min) * uni(rng);
    out.push_back(gt.p + radius * dir);
  }
  return out;
}

std::vector<TrackObservation> genFeatureTracks(const TrajectoryModel& model, const EnvModel& env,
                                               const SimConfig& cfg,
                                               std::span<const Vec3> landmarks) {
  (void)env;
  std::mt19937_64 rng(cfg.seed + 4);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double dt = 1.0 / cfg.cam_rate;
  const long n_frames = std::lround(model.duration * cfg.cam_rate);
  std::vector<TrackObservation> out;

  struct Candidate {
    long landmark_id;
    Vec2 uv;
    double depth;
  };
  std::vector<Candidate> cands;
  for (long f = 0; f <= n_frames; ++f) {
    const double t = std::min(f * dt, model.duration);
    const auto gt = groundTruth(model, t);
    cands.clear();
    for (size_t j = 0; j < landmarks.size(); ++j) {
      const Vec3 l_c = worldToCamera(cfg.camera, gt.q, gt.p, landmarks[j]);
      if (l_c.z() < 0.2) continue;
      const auto uv = project(cfg.camera, gt.q, gt.p, landmarks[j]);
      if (!uv) continue;
      Vec2 noisy = *uv + cfg.sigma_px * Vec2(normal(rng), normal(rng));
      if (noisy.x() < 0.0 || noisy.x() > cfg.camera.width - 1 || noisy.y() < 0.0 ||
          noisy.y() > cfg.camera.height - 1) {
        continue;
      }
      cands.push_back({static_cast<long>(j), noisy, l_c.z()});
    }
    if (static_cast<int>(cands.size()) > cfg.max_obs_per_frame) {
      std::nth_element(cands.begin(), cands.begin() + cfg.max_obs_per_frame, cands.end(),
                       [](const Candidate& a, const Candidate& b) { return a.depth < b.depth; });
      cands.resize(cfg.max_obs_per_frame);
    }
    std::sort(cands.begin(), cands.end(),
              [](const Candidate& a, const Candidate& b) { return a.landmark_id < b.landmark_id; });
    for (const auto& c : cands) {
      out.push_back({f, t, c.landmark_id, c.uv});
    }
  }
  return out;
}

Trajectory genGroundTruth(const TrajectoryModel& model, const SimConfig& cfg) {
  const double dt = 1.0 / cfg.cam_rate;
  const long n = std::lround(model.duration * cfg.cam_rate);
  Trajectory out;
  out.reserve(n + 1);
  for (long f = 0; f <= n; ++f) {
    const double t = std::min(f * dt, model.duration);
    const auto gt = groundTruth(model, t);
    out.push_back({t, gt.p, gt.q, gt.v});
  }
  return out;
}

SimulatedData simulate(const TrajectoryModel& model, const EnvModel& env, const SimConfig& cfg) {
  SimulatedData data;
  data.imu = genImu(model, env, cfg);
  data.mag = genMag(model, env, cfg);
  data.landmarks = genLandmarks(model, cfg);
  data.tracks = genFeatureTracks(model, env, cfg, data.landmarks);
  data.groundtruth = genGroundTruth(model, cfg);
  return data;
}

}  // namespace vimo
