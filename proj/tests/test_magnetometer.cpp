#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "test_utils.hpp"
#include "vimo/allan.hpp"
#include "vimo/errors.hpp"
#include "vimo/magnetometer.hpp"

using namespace vimo;

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 rotZ(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

// Forward model of the distortion: m_hat = S * x + h for unit directions x.
std::vector<MagSample> distortedSphere(std::mt19937_64& rng, int n, const Mat3& s, const Vec3& h,
                                       double noise = 0.0) {
  std::vector<MagSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 x = testutil::randomUnitVec3(rng);
    out.push_back({0.001 * i, s * x + h + noise * testutil::randomVec3(rng)});
  }
  return out;
}

}  // namespace

TEST_CASE("applyCalibration") {
  MagSample raw{1.5, Vec3(1.5, 0.0, 0.0)};
  SUBCASE("identity calibration") {
    const auto out = applyCalibration(raw, MagCalibration::identity());
    CHECK(out.m == raw.m);
    CHECK(out.t == raw.t);
  }
  SUBCASE("offset removal") {
    MagCalibration cal;
    cal.h = Vec3(0.5, 0.0, 0.0);
    CHECK((applyCalibration(raw, cal).m - Vec3(1, 0, 0)).norm() < 1e-15);
  }
  SUBCASE("round trip through the forward model") {
    auto rng = testutil::makeRng(21);
    const Mat3 s = rotZ(0.4) * Vec3(1.3, 0.9, 0.7).asDiagonal() * rotZ(0.4).transpose();
    const Vec3 h(0.2, -0.1, 0.15);
    MagCalibration cal;
    cal.A = s.inverse();
    cal.h = h;
    for (int i = 0; i < 500; ++i) {
      const Vec3 x = testutil::randomUnitVec3(rng);
      const MagSample distorted{0.0, s * x + h};
      CHECK((applyCalibration(distorted, cal).m - x).norm() < 1e-9);
    }
  }
}

TEST_CASE("fitEllipsoid recovers a known distortion") {
  auto rng = testutil::makeRng(22);
  const Mat3 s = rotZ(30.0 * kPi / 180.0) * Vec3(1.2, 1.0, 0.8).asDiagonal() *
                 rotZ(30.0 * kPi / 180.0).transpose();
  const Vec3 h(0.1, -0.05, 0.2);
  const auto samples = distortedSphere(rng, 2000, s, h);

  const auto rep = fitEllipsoidDetailed(samples);
  CHECK(rep.octants_covered == 8);
  CHECK(rep.rms_radius_error < 1e-9);
  CHECK((rep.cal.h - h).norm() < 1e-3);
  // A * S must be a uniform scaling.
  const Mat3 m = rep.cal.A * s;
  const double c = m.trace() / 3.0;
  CHECK(c > 0.0);
  CHECK((m - c * Mat3::Identity()).norm() / c < 1e-3);
  // A symmetric positive definite.
  CHECK((rep.cal.A - rep.cal.A.transpose()).norm() < 1e-9);
  Eigen::SelfAdjointEigenSolver<Mat3> es(rep.cal.A);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("fitEllipsoid on already calibrated data") {
  auto rng = testutil::makeRng(23);
  const auto samples = distortedSphere(rng, 1500, Mat3::Identity(), Vec3::Zero());
  const auto cal = fitEllipsoid(samples);
  CHECK((cal.A - Mat3::Identity()).norm() < 1e-6);
  CHECK(cal.h.norm() < 1e-6);
}

TEST_CASE("fitEllipsoid error paths") {
  auto rng = testutil::makeRng(24);
  SUBCASE("too few samples") {
    const auto samples = distortedSphere(rng, 50, Mat3::Identity(), Vec3::Zero());
    CHECK_THROWS_AS(fitEllipsoid(samples), ValidationError);
  }
  SUBCASE("planar data is insufficient excitation") {
    std::vector<MagSample> samples;
    for (int i = 0; i < 500; ++i) {
      const double a = 2.0 * kPi * i / 500.0;
      samples.push_back({0.01 * i, Vec3(1.1 * std::cos(a) + 0.1, 0.9 * std::sin(a), 0.0)});
    }
    CHECK_THROWS_AS(fitEllipsoid(samples), ValidationError);
  }
}

TEST_CASE("fitEllipsoid scale consistency") {
  auto rng = testutil::makeRng(25);
  const Mat3 s = rotZ(0.3) * Vec3(1.1, 1.0, 0.85).asDiagonal() * rotZ(0.3).transpose();
  const Vec3 h(0.05, 0.02, -0.08);
  const auto samples = distortedSphere(rng, 1200, s, h);
  std::vector<MagSample> scaled = samples;
  for (auto& m : scaled) m.m *= 3.7;

  const auto cal_a = fitEllipsoid(samples);
  const auto cal_b = fitEllipsoid(scaled);
  for (size_t i = 0; i < samples.size(); i += 37) {
    const Vec3 ca = applyCalibration(samples[i], cal_a).m;
    const Vec3 cb = applyCalibration(scaled[i], cal_b).m;
    CHECK((ca - cb).norm() < 1e-6);
  }
}

TEST_CASE("fitHardIron") {
  auto rng = testutil::makeRng(26);
  SUBCASE("recovers an offset sphere") {
    const auto samples = distortedSphere(rng, 400, Mat3::Identity(), Vec3(0.3, 0.1, -0.2));
    const auto cal = fitHardIron(samples);
    CHECK((cal.h - Vec3(0.3, 0.1, -0.2)).norm() < 1e-6);
    CHECK((cal.A - Mat3::Identity()).norm() < 1e-6);
  }
  SUBCASE("centered sphere gives zero offset") {
    const auto samples = distortedSphere(rng, 400, Mat3::Identity(), Vec3::Zero());
    CHECK(fitHardIron(samples).h.norm() < 1e-9);
  }
  SUBCASE("20 degree cone is degenerate") {
    std::vector<MagSample> samples;
    for (int i = 0; i < 200; ++i) {
      const double theta = testutil::uniform(rng, 0.0, 10.0 * kPi / 180.0);
      const double phi = testutil::uniform(rng, 0.0, 2.0 * kPi);
      const Vec3 u(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                   std::cos(theta));
      samples.push_back({0.01 * i, u + Vec3(0.1, 0.0, 0.0)});
    }
    CHECK_THROWS_AS(fitHardIron(samples), ValidationError);
  }
  SUBCASE("planar but spread ring succeeds") {
    std::vector<MagSample> samples;
    for (int i = 0; i < 300; ++i) {
      const double a = 2.0 * kPi * i / 300.0;
      samples.push_back({0.01 * i, Vec3(std::cos(a) + 0.05, std::sin(a) - 0.02, -0.5)});
    }
    const auto cal = fitHardIron(samples);
    CHECK(cal.h.allFinite());
    CHECK(std::abs(cal.h.x() - 0.05) < 1e-6);
    CHECK(std::abs(cal.h.y() + 0.02) < 1e-6);
  }
  SUBCASE("too few samples") {
    const auto samples = distortedSphere(rng, 20, Mat3::Identity(), Vec3::Zero());
    CHECK_THROWS_AS(fitHardIron(samples), ValidationError);
  }
}

TEST_CASE("magResidual") {
  SUBCASE("identity everything") {
    const Vec3 m(0.3, 0.8, -0.5);
    CHECK(magResidual(Quat::Identity(), Quat::Identity(), Quat::Identity(), m, m).norm() == 0.0);
  }
  SUBCASE("zero for measurements generated by the model") {
    auto rng = testutil::makeRng(27);
    for (int i = 0; i < 200; ++i) {
      const Vec3 m_w = testutil::randomUnitVec3(rng);
      const Quat q_k = testutil::randomQuat(rng);
      const Quat q_k1 = testutil::randomQuat(rng);
      const Quat gamma = canonical(q_k.inverse() * q_k1);  // consistent propagation
      // Intermediate time j with its own orientation along the path.
      const Quat q_j = canonical(q_k * quatExp(0.3 * quatLog(canonical(q_k.inverse() * q_k1))));
      const Quat gamma_kj = canonical(q_k.inverse() * q_j);
      const Vec3 m_j = q_j.toRotationMatrix().transpose() * m_w;
      const Vec3 m_k1 = q_k1.toRotationMatrix().transpose() * m_w;
      CHECK(magResidual(gamma_kj, q_k, q_k1, m_j, m_k1).norm() < 1e-12);
      (void)gamma;
    }
  }
  SUBCASE("small yaw error maps to horizontal field magnitude") {
    const Vec3 m(0.1, 0.49, -0.86);  // inclination-60-ish field
    const double theta = 0.01;
    const Quat q_k1 = quatExp(Vec3(0, 0, theta));
    const Vec3 e = magResidual(Quat::Identity(), Quat::Identity(), q_k1, m, m);
    const double expected = std::hypot(m.x(), m.y()) * theta;
    CHECK(e.norm() == doctest::Approx(expected).epsilon(0.05));
  }
  SUBCASE("invariant to a common world rotation") {
    auto rng = testutil::makeRng(28);
    const Quat q_k = testutil::randomQuat(rng);
    const Quat q_k1 = testutil::randomQuat(rng);
    const Quat gamma_kj = testutil::randomQuat(rng, 0.3);
    const Vec3 m_j = testutil::randomUnitVec3(rng);
    const Vec3 m_k1 = testutil::randomUnitVec3(rng);
    const Vec3 base = magResidual(gamma_kj, q_k, q_k1, m_j, m_k1);
    for (int i = 0; i < 50; ++i) {
      const Quat w = testutil::randomQuat(rng);
      const Vec3 rotated = magResidual(gamma_kj, canonical(w * q_k), canonical(w * q_k1), m_j, m_k1);
      CHECK((rotated - base).norm() < 1e-12);
    }
  }
}

TEST_CASE("magResidualJacobians match finite differences") {
  auto rng = testutil::makeRng(29);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Quat q_k = testutil::randomQuat(rng);
    const Quat q_k1 = testutil::randomQuat(rng);
    const Quat gamma_kj = testutil::randomQuat(rng, 0.5);
    Mat3 dtheta_dbg = -0.1 * Mat3::Identity() + 0.01 * MatX::Random(3, 3);
    const Vec3 dbg = testutil::randomVec3(rng, 0.005);
    const Vec3 m_j = testutil::randomUnitVec3(rng);
    const Vec3 m_k1 = testutil::randomUnitVec3(rng);

    auto residual = [&](const Quat& qk, const Quat& qk1, const Vec3& bg_delta) {
      const Quat gamma_c = (gamma_kj * quatExp(dtheta_dbg * bg_delta)).normalized();
      return magResidual(gamma_c, qk, qk1, m_j, m_k1);
    };

    const auto jac = magResidualJacobians(gamma_kj, dtheta_dbg, dbg, q_k, q_k1, m_j, m_k1);

    Mat3 fd_k, fd_k1, fd_bg;
    for (int c = 0; c < 3; ++c) {
      Vec3 d = Vec3::Zero();
      d(c) = h;
      fd_k.col(c) = (residual((q_k * quatExp(d)).normalized(), q_k1, dbg) -
                     residual((q_k * quatExp(-d)).normalized(), q_k1, dbg)) /
                    (2.0 * h);
      fd_k1.col(c) = (residual(q_k, (q_k1 * quatExp(d)).normalized(), dbg) -
                      residual(q_k, (q_k1 * quatExp(-d)).normalized(), dbg)) /
                     (2.0 * h);
      fd_bg.col(c) = (residual(q_k, q_k1, dbg + d) - residual(q_k, q_k1, dbg - d)) / (2.0 * h);
    }
    CHECK(testutil::jacobianRelError(jac.J_theta_k, fd_k) < 1e-5);
    CHECK(testutil::jacobianRelError(jac.J_theta_k1, fd_k1) < 1e-5);
    CHECK(testutil::jacobianRelError(jac.J_bg, fd_bg) < 1e-5);
  }
}

TEST_CASE("magResidualJacobians zero field") {
  const auto jac = magResidualJacobians(Quat::Identity(), Mat3::Identity(), Vec3::Zero(),
                                        Quat::Identity(), Quat::Identity(), Vec3::Zero(),
                                        Vec3::Zero());
  CHECK(jac.J_theta_k.norm() == 0.0);
  CHECK(jac.J_theta_k1.norm() == 0.0);
  CHECK(jac.J_bg.norm() == 0.0);
}

TEST_CASE("magWeight") {
  CHECK((magWeight({1.0}) - 0.5 * Mat3::Identity()).norm() == 0.0);
  CHECK((magWeight({0.1}) - 50.0 * Mat3::Identity()).norm() < 1e-12);

  // Chi-square consistency on noise-only residuals: E[e' W e] = 3.
  auto rng = testutil::makeRng(30);
  const double sigma = 0.02;
  const Mat3 w = magWeight({sigma});
  const Quat q_k = testutil::randomQuat(rng);
  const Quat q_k1 = testutil::randomQuat(rng);
  const Quat gamma_kj = canonical(q_k.inverse() * q_k1);
  const Vec3 m_w = testutil::randomUnitVec3(rng);
  double acc = 0.0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const Vec3 m_j = q_k1.toRotationMatrix().transpose() * m_w + sigma * testutil::randomVec3(rng);
    const Vec3 m_k1 = q_k1.toRotationMatrix().transpose() * m_w + sigma * testutil::randomVec3(rng);
    const Vec3 e = magResidual(gamma_kj, q_k, q_k1, m_j, m_k1);
    acc += e.dot(w * e);
  }
  const double mean = acc / trials;
  CHECK(mean > 2.7);
  CHECK(mean < 3.3);
}

TEST_CASE("initialAlignment") {
  SUBCASE("already ENU aligned body") {
    const Vec3 accel(0, 0, 9.81);
    const Vec3 mag(0, 0.5, -std::sqrt(3.0) / 2.0);
    const Quat q = initialAlignment(accel, mag);
    CHECK(q.angularDistance(Quat::Identity()) < 1e-9);
  }
  SUBCASE("yawed body recovers the yaw") {
    const double yaw = kPi / 2.0;
    const Mat3 r_wb = rotZ(yaw);
    const Vec3 accel_b = r_wb.transpose() * Vec3(0, 0, 9.81);
    const Vec3 mag_b = r_wb.transpose() * Vec3(0, 0.5, -std::sqrt(3.0) / 2.0);
    const Quat q = initialAlignment(accel_b, mag_b);
    CHECK(q.angularDistance(Quat(r_wb)) < 1e-9);
  }
  SUBCASE("parallel field and gravity is degenerate") {
    CHECK_THROWS_AS(initialAlignment(Vec3(0, 0, 9.81), Vec3(0, 0, -1.0)), ValidationError);
    CHECK_THROWS_AS(initialAlignment(Vec3(0, 0, 9.81), Vec3(0.01, 0, 1.0)), ValidationError);
  }
  SUBCASE("gravity maps to world up") {
    auto rng = testutil::makeRng(31);
    for (int i = 0; i < 100; ++i) {
      const Vec3 accel = 9.81 * testutil::randomUnitVec3(rng);
      Vec3 mag = testutil::randomUnitVec3(rng);
      if (mag.cross(accel.normalized()).norm() < 0.2) continue;
      const Quat q = initialAlignment(accel, mag);
      const Vec3 up_w = q.toRotationMatrix() * accel.normalized();
      CHECK((up_w - Vec3::UnitZ()).norm() < 1e-9);
    }
  }
  SUBCASE("gravity-only variant") {
    const Quat q = initialAlignmentGravityOnly(Vec3(0, 0, 9.81));
    CHECK(q.angularDistance(Quat::Identity()) < 1e-12);
  }
}

TEST_CASE("allanDeviation") {
  SUBCASE("constant sequence has zero deviation") {
    std::vector<double> x(5000, 3.7);
    std::vector<double> taus = {0.1, 1.0, 5.0};
    for (const auto& [tau, dev] : allanDeviation(x, 100.0, taus)) {
      CHECK(dev < 1e-12);  // prefix-sum roundoff
      (void)tau;
    }
  }
  SUBCASE("white noise has slope -1/2") {
    auto rng = testutil::makeRng(32);
    const double sigma = 0.01;
    const double rate = 100.0;
    std::vector<double> x(60000);
    for (auto& v : x) v = sigma * testutil::randn(rng);
    const auto taus = allanDefaultTaus(x.size(), rate);
    std::vector<double> sel;
    for (double t : taus) {
      if (t >= 0.01 && t <= 1.0) sel.push_back(t);
    }
    const auto ad = allanDeviation(x, rate, sel);
    // Least-squares slope in log-log.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [tau, dev] : ad) {
      const double lx = std::log10(tau), ly = std::log10(dev);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    const double n = static_cast<double>(ad.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(slope == doctest::Approx(-0.5).epsilon(0.1));
    CHECK(std::abs(slope + 0.5) < 0.05);
  }
  SUBCASE("linear ramp has slope +1 and closed-form value") {
    const double r = 0.05;  // units per second
    const double rate = 100.0;
    std::vector<double> x(20000);
    for (size_t i = 0; i < x.size(); ++i) x[i] = r * (i / rate);
    std::vector<double> taus = {0.5, 1.0, 2.0, 4.0};
    const auto ad = allanDeviation(x, rate, taus);
    for (const auto& [tau, dev] : ad) {
      CHECK(dev == doctest::Approx(r * tau / std::sqrt(2.0)).epsilon(1e-9));
    }
    const double slope = std::log10(ad[3].second / ad[0].second) / std::log10(taus[3] / taus[0]);
    CHECK(slope == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("tau too large") {
    std::vector<double> x = {1.0, 2.0};
    std::vector<double> taus = {1.0};
    CHECK_THROWS_AS(allanDeviation(x, 1.0, taus), ValidationError);
  }
}
