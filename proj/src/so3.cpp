#include "vimo/so3.hpp"

#include <cmath>

#include "vimo/errors.hpp"

namespace vimo {

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 expSo3(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  double a, b;  // R = I + a*w + b*w^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Mat3::Identity() + a * w + b * w * w;
}

Vec3 logSo3(const Mat3& R) {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6 || R.determinant() < 0.0) {
    throw ValidationError("logSo3: input is not a rotation matrix (orthonormality error " +
                          std::to_string(ortho) + ")");
  }
  // Quaternion route is stable near both theta = 0 and theta = pi.
  return quatLog(canonical(Quat(R)));
}

Mat3 rightJacobianSo3(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  double a, b;  // Jr = I - a*w + b*w^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 0.5 - t2 / 24.0;
    b = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    a = (1.0 - std::cos(theta)) / t2;
    b = (theta - std::sin(theta)) / (t2 * theta);
  }
  return Mat3::Identity() - a * w + b * w * w;
}

Quat quatExp(const Vec3& omega) {
  const double theta = omega.norm();
  double imag;  // vec = imag * omega
  if (theta < kSmallAngle) {
    imag = 0.5 - theta * theta / 48.0;
  } else {
    imag = std::sin(0.5 * theta) / theta;
  }
  Quat q(std::cos(0.5 * theta), imag * omega.x(), imag * omega.y(), imag * omega.z());
  return canonical(q);
}

Vec3 quatLog(const Quat& q_in) {
  Quat q = canonical(q_in);
  const double n = q.vec().norm();
  if (n < kSmallAngle) {
    // atan2(n, w)/n -> 1/w as n -> 0
    return 2.0 / q.w() * q.vec();
  }
  const double angle = 2.0 * std::atan2(n, q.w());
  return (angle / n) * q.vec();
}

Eigen::Matrix<double, 4, 3> quatExpDerivative(const Vec3& omega) {
  Eigen::Matrix<double, 4, 3> d;
  const double theta = omega.norm();
  if (theta < 1e-4) {
    d.row(0) = -0.25 * omega.transpose();
    d.bottomRows<3>() =
        0.5 * Mat3::Identity() - (1.0 / 24.0) * omega * omega.transpose();
    return d;
  }
  const double c = std::cos(0.5 * theta);
  const double s = std::sin(0.5 * theta);
  const Vec3 u = omega / theta;
  d.row(0) = -0.5 * s * u.transpose();
  d.bottomRows<3>() =
      (s / theta) * Mat3::Identity() + ((0.5 * c * theta - s) / (theta * theta)) * omega * u.transpose();
  return d;
}

Quat canonical(const Quat& q) {
  Quat out = q.normalized();
  if (out.w() < 0.0) {
    out.coeffs() = -out.coeffs();
  }
  return out;
}

Quat quatMultiply(const Quat& a, const Quat& b) { return canonical(a * b); }

Mat4 quatLeftProd(const Quat& q) {
  Mat4 m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() + skew(q.vec());
  return m;
}

Mat4 quatRightProd(const Quat& q) {
  Mat4 m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() - skew(q.vec());
  return m;
}

Eigen::Vector4d quatCoeffsWxyz(const Quat& q) {
  return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

}  // namespace vimo
