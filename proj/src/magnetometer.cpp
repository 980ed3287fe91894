#include "vimo/magnetometer.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "vimo/errors.hpp"

namespace vimo {

namespace {

constexpr double kPi = 3.14159265358979323846;

int countOctants(std::span<const MagSample> samples, const Vec3& center) {
  bool hit[8] = {false, false, false, false, false, false, false, false};
  for (const auto& s : samples) {
    const Vec3 d = s.m - center;
    if (d.norm() < 1e-12) continue;
    const int idx = (d.x() > 0.0 ? 1 : 0) | (d.y() > 0.0 ? 2 : 0) | (d.z() > 0.0 ? 4 : 0);
    hit[idx] = true;
  }
  int n = 0;
  for (bool h : hit) n += h ? 1 : 0;
  return n;
}

/// Largest eigenvalue of the covariance of the raw sample directions.
double directionSpread(std::span<const MagSample> samples) {
  Vec3 mean = Vec3::Zero();
  std::vector<Vec3> dirs;
  dirs.reserve(samples.size());
  for (const auto& s : samples) {
    const double n = s.m.norm();
    if (n < 1e-12) continue;
    dirs.push_back(s.m / n);
    mean += dirs.back();
  }
  if (dirs.empty()) return 0.0;
  mean /= static_cast<double>(dirs.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& d : dirs) {
    cov += (d - mean) * (d - mean).transpose();
  }
  cov /= static_cast<double>(dirs.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  return es.eigenvalues().maxCoeff();
}

double rmsRadiusError(std::span<const MagSample> samples, const MagCalibration& cal) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const double r = (cal.A * (s.m - cal.h)).norm() - 1.0;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

}  // namespace

WorldField WorldField::fromAngles(double inclination_deg, double declination_deg) {
  const double inc = inclination_deg * kPi / 180.0;
  const double dec = declination_deg * kPi / 180.0;
  WorldField f;
  f.m_w = Vec3(std::sin(dec) * std::cos(inc), std::cos(dec) * std::cos(inc), -std::sin(inc));
  return f;
}

MagSample applyCalibration(const MagSample& raw, const MagCalibration& cal) {
  return {raw.t, cal.A * (raw.m - cal.h)};
}

EllipsoidFitReport fitEllipsoidDetailed(std::span<const MagSample> samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 100) {
    throw ValidationError("fitEllipsoid: need at least 100 samples, got " + std::to_string(n));
  }

  Vec3 centroid = Vec3::Zero();
  for (const auto& s : samples) centroid += s.m;
  centroid /= static_cast<double>(n);

  const int octants = countOctants(samples, centroid);
  if (octants < 6) {
    throw ValidationError(
        "fitEllipsoid: insufficient excitation, sample directions cover only " +
        std::to_string(octants) + " of 8 octants; rotate the sensor about all three axes");
  }

  // Center and scale for conditioning.
  double scale = 0.0;
  for (const auto& s : samples) scale += (s.m - centroid).squaredNorm();
  scale = std::sqrt(scale / static_cast<double>(n));
  if (scale < 1e-12) {
    throw ValidationError("fitEllipsoid: degenerate samples (zero spread)");
  }

  // Quadric x'Mx + b'x + c = 0 with parameters
  // [m11, m22, m33, m12, m13, m23, b1, b2, b3, c], |params| = 1.
  MatX design(n, 10);
  for (int i = 0; i < n; ++i) {
    const Vec3 x = (samples[i].m - centroid) / scale;
    design.row(i) << x.x() * x.x(), x.y() * x.y(), x.z() * x.z(), 2.0 * x.x() * x.y(),
        2.0 * x.x() * x.z(), 2.0 * x.y() * x.z(), x.x(), x.y(), x.z(), 1.0;
  }
  Eigen::JacobiSVD<MatX> svd(design, Eigen::ComputeThinV);
  Eigen::Matrix<double, 10, 1> a = svd.matrixV().col(9);

  Mat3 m;
  m << a(0), a(3), a(4), a(3), a(1), a(5), a(4), a(5), a(2);
  if (m.trace() < 0.0) {
    m = -m;
    a = -a;
  }
  const Vec3 b = a.segment<3>(6);
  const double c = a(9);

  Eigen::SelfAdjointEigenSolver<Mat3> es_m(m);
  if (es_m.eigenvalues().minCoeff() <= 1e-10 * es_m.eigenvalues().maxCoeff()) {
    throw ValidationError("fitEllipsoid: fitted quadric is not an ellipsoid (insufficient excitation)");
  }

  const Vec3 h_n = -0.5 * m.ldlt().solve(b);           // center, normalized frame
  const double rho = h_n.dot(m * h_n) - c;             // (x-h)'M(x-h) = rho
  if (rho <= 0.0) {
    throw ValidationError("fitEllipsoid: degenerate quadric (non-positive radius term)");
  }

  // Back to raw units: (x - h)' M (x - h) / (scale^2 rho) = 1, A = sqrtm of that.
  const Mat3 shape = m / (scale * scale * rho);
  Eigen::SelfAdjointEigenSolver<Mat3> es_s(shape);
  const Mat3 a_mat = es_s.eigenvectors() *
                     es_s.eigenvalues().cwiseSqrt().asDiagonal() *
                     es_s.eigenvectors().transpose();

  EllipsoidFitReport report;
  report.cal.A = a_mat;
  report.cal.h = centroid + scale * h_n;
  report.octants_covered = octants;
  report.rms_radius_error = rmsRadiusError(samples, report.cal);
  return report;
}

MagCalibration fitEllipsoid(std::span<const MagSample> samples) {
  return fitEllipsoidDetailed(samples).cal;
}

EllipsoidFitReport fitHardIronDetailed(std::span<const MagSample> samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 50) {
    throw ValidationError("fitHardIron: need at least 50 samples, got " + std::to_string(n));
  }
  const double spread = directionSpread(samples);
  if (spread < 0.05) {
    throw ValidationError(
        "fitHardIron: degenerate direction spread (" + std::to_string(spread) +
        "), the center is unobservable; rotate the sensor through a wider range");
  }

  // |x - h|^2 = r^2  ->  2 x'h + (r^2 - |h|^2) = |x|^2, linear in (h, k).
  MatX design(n, 4);
  VecX rhs(n);
  for (int i = 0; i < n; ++i) {
    design.row(i) << 2.0 * samples[i].m.x(), 2.0 * samples[i].m.y(), 2.0 * samples[i].m.z(), 1.0;
    rhs(i) = samples[i].m.squaredNorm();
  }
  const Eigen::Vector4d sol = design.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
  const Vec3 h = sol.head<3>();
  const double r2 = sol(3) + h.squaredNorm();
  if (r2 <= 0.0) {
    throw ValidationError("fitHardIron: sphere fit produced a non-positive radius");
  }

  EllipsoidFitReport report;
  report.cal.A = Mat3::Identity() / std::sqrt(r2);
  report.cal.h = h;
  report.octants_covered = countOctants(samples, h);
  report.rms_radius_error = rmsRadiusError(samples, report.cal);
  return report;
}

MagCalibration fitHardIron(std::span<const MagSample> samples) {
  return fitHardIronDetailed(samples).cal;
}

Vec3 magResidual(const Quat& gamma_kj, const Quat& q_wb_k, const Quat& q_wb_k1, const Vec3& m_j,
                 const Vec3& m_k1) {
  const Mat3 r_rel = q_wb_k.toRotationMatrix().transpose() * q_wb_k1.toRotationMatrix();
  return r_rel * m_k1 - gamma_kj.toRotationMatrix() * m_j;
}

MagJacobians magResidualJacobians(const Quat& gamma_kj, const Mat3& dtheta_dbg, const Vec3& dbg,
                                  const Quat& q_wb_k, const Quat& q_wb_k1, const Vec3& m_j,
                                  const Vec3& m_k1) {
  const Mat3 r_rel = q_wb_k.toRotationMatrix().transpose() * q_wb_k1.toRotationMatrix();
  const Vec3 u = dtheta_dbg * dbg;
  const Mat3 exp_u = expSo3(u);

  MagJacobians out;
  out.J_theta_k = skew(r_rel * m_k1);
  out.J_theta_k1 = -r_rel * skew(m_k1);
  out.J_bg = gamma_kj.toRotationMatrix() * exp_u * skew(m_j) * rightJacobianSo3(u) * dtheta_dbg;
  return out;
}

Mat3 magWeight(const MagNoiseParams& noise) {
  return Mat3::Identity() / (2.0 * noise.sigma_m * noise.sigma_m);
}

Quat initialAlignment(const Vec3& accel_mean, const Vec3& mag_mean) {
  const double na = accel_mean.norm();
  const double nm = mag_mean.norm();
  if (na < 1e-9 || nm < 1e-9) {
    throw ValidationError("initialAlignment: zero accelerometer or magnetometer mean");
  }
  const Vec3 up = accel_mean / na;
  const Vec3 mag = mag_mean / nm;
  if (mag.cross(up).norm() < std::sin(5.0 * kPi / 180.0)) {
    throw ValidationError("initialAlignment: magnetic field and gravity are nearly parallel");
  }
  const Vec3 east = mag.cross(up).normalized();
  const Vec3 north = up.cross(east);
  Mat3 r_bw;  // world axes (E, N, U) expressed in body, as columns
  r_bw.col(0) = east;
  r_bw.col(1) = north;
  r_bw.col(2) = up;
  return canonical(Quat(Mat3(r_bw.transpose())));
}

Quat initialAlignmentGravityOnly(const Vec3& accel_mean) {
  const double na = accel_mean.norm();
  if (na < 1e-9) {
    throw ValidationError("initialAlignment: zero accelerometer mean");
  }
  const Vec3 up = accel_mean / na;
  // Pick the horizontal direction closest to body x as world x (yaw is gauge).
  Vec3 heading = Vec3::UnitX() - Vec3::UnitX().dot(up) * up;
  if (heading.norm() < 1e-6) {
    heading = Vec3::UnitY() - Vec3::UnitY().dot(up) * up;
  }
  heading.normalize();
  Mat3 r_bw;
  r_bw.col(0) = heading;
  r_bw.col(1) = up.cross(heading);
  r_bw.col(2) = up;
  return canonical(Quat(Mat3(r_bw.transpose())));
}

}  // namespace vimo
