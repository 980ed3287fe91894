#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vimo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Hamilton convention throughout, w-first storage. Rotation error is a
// right (body-frame) perturbation: R_true = R_hat * exp_so3(dtheta).

constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v);

/// Rodrigues formula; 2nd-order Taylor fallback below kSmallAngle.
Mat3 expSo3(const Vec3& omega);

/// Principal logarithm, |result| in [0, pi]. Throws ValidationError if the
/// input fails the orthonormality/determinant check beyond 1e-6.
Vec3 logSo3(const Mat3& R);

/// Right Jacobian of exp_so3.
Mat3 rightJacobianSo3(const Vec3& omega);

/// Axis-angle vector to unit quaternion (half-angle form), canonical w >= 0.
Quat quatExp(const Vec3& omega);

/// Axis-angle of a unit quaternion, magnitude in [0, pi].
Vec3 quatLog(const Quat& q);

/// d quatExp(v) / dv as a 4x3 matrix with rows ordered [w, x, y, z].
/// Valid for |omega| < pi (no hemisphere flip in quatExp).
Eigen::Matrix<double, 4, 3> quatExpDerivative(const Vec3& omega);

/// Normalize and flip to the w >= 0 hemisphere.
Quat canonical(const Quat& q);

/// Hamilton product a (x) b, renormalized and canonicalized.
Quat quatMultiply(const Quat& a, const Quat& b);

/// Left/right product matrices acting on [w, x, y, z] coefficient vectors:
/// p (x) q = quatLeftProd(p) * vec(q) = quatRightProd(q) * vec(p).
Mat4 quatLeftProd(const Quat& q);
Mat4 quatRightProd(const Quat& q);

Eigen::Vector4d quatCoeffsWxyz(const Quat& q);

}  // namespace vimo
