#include "vimo/imu_preintegration.hpp"

#include <cmath>

#include "vimo/errors.hpp"

namespace vimo {

ImuPreintegration::ImuPreintegration(const Vec3& bg_lin, const Vec3& ba_lin,
                                     const ImuNoiseParams& noise, double reprop_bg_threshold,
                                     double reprop_ba_threshold)
    : bg_lin_(bg_lin),
      ba_lin_(ba_lin),
      noise_(noise),
      reprop_bg_(reprop_bg_threshold),
      reprop_ba_(reprop_ba_threshold) {}

void ImuPreintegration::reset() {
  info_valid_ = false;
  alpha_.setZero();
  beta_.setZero();
  gamma_.setIdentity();
  cov_.setZero();
  jac_.setIdentity();
  dt_total_ = 0.0;
  checkpoints_.clear();
}

void ImuPreintegration::integrate(const ImuSample& s0, const ImuSample& s1) {
  if (!(s1.t > s0.t)) {
    throw ValidationError("ImuPreintegration::integrate: non-increasing timestamps");
  }
  if (!samples_.empty() && std::abs(samples_.back().t - s0.t) > 1e-9) {
    throw ValidationError("ImuPreintegration::integrate: s0 does not continue the stream");
  }
  if (samples_.empty()) {
    samples_.push_back(s0);
  }
  samples_.push_back(s1);
  step(s0, s1);
}

void ImuPreintegration::repropagate(const Vec3& bg_lin, const Vec3& ba_lin) {
  bg_lin_ = bg_lin;
  ba_lin_ = ba_lin;
  reset();
  for (size_t i = 0; i + 1 < samples_.size(); ++i) {
    step(samples_[i], samples_[i + 1]);
  }
}

void ImuPreintegration::step(const ImuSample& s0, const ImuSample& s1) {
  const double dt = s1.t - s0.t;
  const Vec3 w_mid = 0.5 * (s0.gyro + s1.gyro) - bg_lin_;
  const Vec3 a0 = s0.accel - ba_lin_;
  const Vec3 a1 = s1.accel - ba_lin_;

  const Mat3 r0 = gamma_.toRotationMatrix();
  const Quat gamma1 = quatMultiply(gamma_, quatExp(w_mid * dt));
  const Mat3 r1 = gamma1.toRotationMatrix();

  const Vec3 a_mid = 0.5 * (r0 * a0 + r1 * a1);

  // Error-state transition, order [d_alpha, d_beta, d_theta, d_bg, d_ba].
  const Mat3 exp_neg = expSo3(-w_mid * dt);
  const Mat3 jr = rightJacobianSo3(w_mid * dt);
  const Mat3 m_theta = -0.5 * (r0 * skew(a0) + r1 * skew(a1) * exp_neg);
  const Mat3 m_bg = 0.5 * r1 * skew(a1) * jr * dt;
  const Mat3 m_ba = -0.5 * (r0 + r1);

  Eigen::Matrix<double, 15, 15> f = Eigen::Matrix<double, 15, 15>::Identity();
  f.block<3, 3>(0, 3) = dt * Mat3::Identity();
  f.block<3, 3>(0, 6) = 0.5 * dt * dt * m_theta;
  f.block<3, 3>(0, 9) = 0.5 * dt * dt * m_bg;
  f.block<3, 3>(0, 12) = 0.5 * dt * dt * m_ba;
  f.block<3, 3>(3, 6) = dt * m_theta;
  f.block<3, 3>(3, 9) = dt * m_bg;
  f.block<3, 3>(3, 12) = dt * m_ba;
  f.block<3, 3>(6, 6) = exp_neg;
  f.block<3, 3>(6, 9) = -jr * dt;

  // Noise input [n_g, n_a, n_bg, n_ba], one equivalent white sample per step
  // with discrete variance sigma^2 / dt.
  Eigen::Matrix<double, 15, 12> g = Eigen::Matrix<double, 15, 12>::Zero();
  const Mat3 g_theta = -jr * dt;
  const Mat3 g_beta_g = 0.5 * r1 * skew(a1) * jr * dt * dt;
  const Mat3 g_beta_a = -0.5 * (r0 + r1) * dt;
  g.block<3, 3>(0, 0) = 0.5 * dt * g_beta_g;
  g.block<3, 3>(0, 3) = 0.5 * dt * g_beta_a;
  g.block<3, 3>(3, 0) = g_beta_g;
  g.block<3, 3>(3, 3) = g_beta_a;
  g.block<3, 3>(6, 0) = g_theta;
  g.block<3, 3>(9, 6) = dt * Mat3::Identity();
  g.block<3, 3>(12, 9) = dt * Mat3::Identity();

  Eigen::Matrix<double, 12, 12> q = Eigen::Matrix<double, 12, 12>::Zero();
  q.block<3, 3>(0, 0) = (noise_.sigma_g * noise_.sigma_g / dt) * Mat3::Identity();
  q.block<3, 3>(3, 3) = (noise_.sigma_a * noise_.sigma_a / dt) * Mat3::Identity();
  q.block<3, 3>(6, 6) = (noise_.sigma_bg * noise_.sigma_bg / dt) * Mat3::Identity();
  q.block<3, 3>(9, 9) = (noise_.sigma_ba * noise_.sigma_ba / dt) * Mat3::Identity();

  cov_ = f * cov_ * f.transpose() + g * q * g.transpose();
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  jac_ = f * jac_;

  alpha_ += beta_ * dt + 0.5 * a_mid * dt * dt;
  beta_ += a_mid * dt;
  gamma_ = gamma1;
  dt_total_ += dt;
  info_valid_ = false;
  checkpoints_.push_back({s1.t, gamma_, jac_.block<3, 3>(6, 9)});
}

BiasCorrectedTerms ImuPreintegration::biasCorrected(const Vec3& bg, const Vec3& ba) const {
  const Vec3 dbg = bg - bg_lin_;
  const Vec3 dba = ba - ba_lin_;
  BiasCorrectedTerms out;
  out.alpha = alpha_ + dAlphaDbg() * dbg + dAlphaDba() * dba;
  out.beta = beta_ + dBetaDbg() * dbg + dBetaDba() * dba;
  out.gamma = quatMultiply(gamma_, quatExp(dThetaDbg() * dbg));
  out.repropagation_required = dbg.norm() > reprop_bg_ || dba.norm() > reprop_ba_;
  return out;
}

const Eigen::Matrix<double, 15, 15>& ImuPreintegration::information() const {
  if (!info_valid_) {
    Eigen::Matrix<double, 15, 15> c = cov_;
    const double floor = 1e-14 * std::max(1.0, c.trace());
    c.diagonal().array() += floor;
    info_cache_ = c.llt().solve(Eigen::Matrix<double, 15, 15>::Identity());
    info_valid_ = true;
  }
  return info_cache_;
}

SystemState predictState(const ImuPreintegration& pre, const SystemState& x_k, const Vec3& g_w) {
  const BiasCorrectedTerms c = pre.biasCorrected(x_k.bg, x_k.ba);
  const Mat3 r_k = x_k.q.toRotationMatrix();
  const double dt = pre.dtTotal();
  SystemState out;
  out.t = x_k.t + dt;
  out.p = x_k.p + x_k.v * dt + 0.5 * g_w * dt * dt + r_k * c.alpha;
  out.v = x_k.v + g_w * dt + r_k * c.beta;
  out.q = quatMultiply(x_k.q, c.gamma);
  out.bg = x_k.bg;
  out.ba = x_k.ba;
  return out;
}

Eigen::Matrix<double, 15, 1> inertialResidual(const ImuPreintegration& pre, const SystemState& x_k,
                                              const SystemState& x_k1, const Vec3& g_w) {
  const BiasCorrectedTerms c = pre.biasCorrected(x_k.bg, x_k.ba);
  const Mat3 r_bw = x_k.q.toRotationMatrix().transpose();
  const double dt = pre.dtTotal();

  Eigen::Matrix<double, 15, 1> r;
  r.segment<3>(0) = r_bw * (x_k1.p - x_k.p - x_k.v * dt - 0.5 * g_w * dt * dt) - c.alpha;
  r.segment<3>(3) = r_bw * (x_k1.v - x_k.v - g_w * dt) - c.beta;
  const Quat err = canonical(x_k.q.inverse() * x_k1.q * c.gamma.inverse());
  r.segment<3>(6) = 2.0 * err.vec();
  r.segment<3>(9) = x_k1.bg - x_k.bg;
  r.segment<3>(12) = x_k1.ba - x_k.ba;
  return r;
}

InertialJacobians inertialJacobians(const ImuPreintegration& pre, const SystemState& x_k,
                                    const SystemState& x_k1, const Vec3& g_w) {
  const Vec3 dbg = x_k.bg - pre.bgLin();
  const Vec3 u = pre.dThetaDbg() * dbg;
  // Plain product (no hemisphere flip) so gamma_c^-1 = Exp_q(-u) (x) gamma^-1
  // holds exactly for the bias-Jacobian decomposition below.
  const Quat gamma_c = (pre.gamma() * quatExp(u)).normalized();

  const Mat3 r_k = x_k.q.toRotationMatrix();
  const Mat3 r_bw = r_k.transpose();
  const double dt = pre.dtTotal();
  const Vec3 s_p = x_k1.p - x_k.p - x_k.v * dt - 0.5 * g_w * dt * dt;
  const Vec3 s_v = x_k1.v - x_k.v - g_w * dt;

  InertialJacobians out;
  out.J_k.setZero();
  out.J_k1.setZero();

  // r_p rows
  out.J_k.block<3, 3>(0, 0) = -r_bw;
  out.J_k.block<3, 3>(0, 3) = skew(r_bw * s_p);
  out.J_k.block<3, 3>(0, 6) = -r_bw * dt;
  out.J_k.block<3, 3>(0, 9) = -pre.dAlphaDbg();
  out.J_k.block<3, 3>(0, 12) = -pre.dAlphaDba();
  out.J_k1.block<3, 3>(0, 0) = r_bw;

  // r_v rows
  out.J_k.block<3, 3>(3, 3) = skew(r_bw * s_v);
  out.J_k.block<3, 3>(3, 6) = -r_bw;
  out.J_k.block<3, 3>(3, 9) = -pre.dBetaDbg();
  out.J_k.block<3, 3>(3, 12) = -pre.dBetaDba();
  out.J_k1.block<3, 3>(3, 6) = r_bw;

  // r_theta rows. Residual is 2*[q_k^-1 (x) q_k1 (x) gamma_c^-1]_xyz with a
  // sign flip when the error quaternion lands on the w < 0 hemisphere.
  const Quat a = x_k.q.inverse() * x_k1.q;
  Quat err = a * gamma_c.inverse();
  double sign = 1.0;
  if (err.w() < 0.0) {
    sign = -1.0;
    err.coeffs() = -err.coeffs();
  }
  out.J_k.block<3, 3>(6, 3) =
      -sign * (err.w() * Mat3::Identity() - skew(err.vec()));
  const Mat4 la_rgc = quatLeftProd(a) * quatRightProd(gamma_c.inverse());
  out.J_k1.block<3, 3>(6, 3) = sign * la_rgc.block<3, 3>(1, 1);
  // d r_theta / d bg_k through gamma_c = gamma (x) quatExp(J_theta_bg * dbg).
  const Mat4 la_rg = quatLeftProd(a) * quatRightProd(pre.gamma().inverse());
  out.J_k.block<3, 3>(6, 9) =
      -2.0 * sign * la_rg.block<3, 4>(1, 0) * quatExpDerivative(-u) * pre.dThetaDbg();

  // bias rows
  out.J_k.block<3, 3>(9, 9) = -Mat3::Identity();
  out.J_k1.block<3, 3>(9, 9) = Mat3::Identity();
  out.J_k.block<3, 3>(12, 12) = -Mat3::Identity();
  out.J_k1.block<3, 3>(12, 12) = Mat3::Identity();
  return out;
}

}  // namespace vimo
