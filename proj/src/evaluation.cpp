#include "vimo/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "vimo/errors.hpp"

namespace vimo {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kRad2Deg = 180.0 / kPi;
}  // namespace

double wrapAngle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

double yawOf(const Quat& q) {
  const Vec3 heading = q.toRotationMatrix().col(0);  // body x in world
  return std::atan2(heading.y(), heading.x());
}

std::vector<std::pair<int, int>> associate(const Trajectory& a, const Trajectory& b,
                                           double max_dt) {
  if (max_dt <= 0.0) {
    throw ValidationError("associate: max_dt must be positive");
  }
  std::vector<std::pair<int, int>> pairs;
  int j = 0;
  for (int i = 0; i < static_cast<int>(a.size()); ++i) {
    while (j + 1 < static_cast<int>(b.size()) &&
           std::abs(b[j + 1].t - a[i].t) <= std::abs(b[j].t - a[i].t)) {
      ++j;
    }
    if (j < static_cast<int>(b.size()) && std::abs(b[j].t - a[i].t) <= max_dt) {
      if (!pairs.empty() && pairs.back().second == j) {
        // Keep the closer of the two candidates for this b pose.
        if (std::abs(b[j].t - a[i].t) < std::abs(b[j].t - a[pairs.back().first].t)) {
          pairs.back().first = i;
        }
        continue;
      }
      pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) {
    throw ValidationError("associate: no timestamp pairs within max_dt");
  }
  return pairs;
}

AlignmentResult umeyamaAlign(const Trajectory& est, const Trajectory& ref,
                             std::span<const std::pair<int, int>> pairs, AlignMode mode) {
  const int n = static_cast<int>(pairs.size());
  if (n < 3) {
    throw ValidationError("umeyamaAlign: need at least 3 associated pairs, got " +
                          std::to_string(n));
  }
  Vec3 mu_x = Vec3::Zero(), mu_y = Vec3::Zero();
  for (const auto& [i, j] : pairs) {
    mu_x += est[i].p;
    mu_y += ref[j].p;
  }
  mu_x /= n;
  mu_y /= n;

  Mat3 sigma = Mat3::Zero();
  double var_x = 0.0;
  for (const auto& [i, j] : pairs) {
    const Vec3 dx = est[i].p - mu_x;
    const Vec3 dy = ref[j].p - mu_y;
    sigma += dy * dx.transpose();
    var_x += dx.squaredNorm();
  }
  sigma /= n;
  var_x /= n;
  if (var_x < 1e-18) {
    throw ValidationError("umeyamaAlign: degenerate (coincident) point configuration");
  }

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  // Rank check: collinear points leave the rotation about the line free.
  if (svd.singularValues()(1) < 1e-12 * std::max(svd.singularValues()(0), 1e-300)) {
    throw ValidationError("umeyamaAlign: degenerate (collinear) point configuration");
  }
  Vec3 s_fix = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s_fix(2) = -1.0;
  }

  AlignmentResult out;
  out.mode = mode;
  out.R = svd.matrixU() * s_fix.asDiagonal() * svd.matrixV().transpose();
  out.scale = mode == AlignMode::kSim3
                  ? (svd.singularValues().cwiseProduct(s_fix).sum()) / var_x
                  : 1.0;
  out.t = mu_y - out.scale * out.R * mu_x;
  return out;
}

AteResult ate(const Trajectory& est, const Trajectory& ref, AlignMode mode, double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  AteResult out;
  out.alignment = umeyamaAlign(est, ref, pairs, mode);
  out.pairs = static_cast<int>(pairs.size());

  double acc_t = 0.0, acc_r = 0.0;
  for (const auto& [i, j] : pairs) {
    const Vec3 p_aligned = out.alignment.scale * out.alignment.R * est[i].p + out.alignment.t;
    acc_t += (p_aligned - ref[j].p).squaredNorm();
    const Mat3 r_err =
        ref[j].q.toRotationMatrix().transpose() * out.alignment.R * est[i].q.toRotationMatrix();
    const double angle = logSo3(r_err).norm() * kRad2Deg;
    acc_r += angle * angle;
  }
  out.rmse_trans_m = std::sqrt(acc_t / out.pairs);
  out.rmse_rot_deg = std::sqrt(acc_r / out.pairs);
  return out;
}

std::vector<RpeYawStats> rpeYaw(const Trajectory& est, const Trajectory& ref,
                                std::span<const double> segment_lengths, double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  const int n = static_cast<int>(pairs.size());

  // Cumulative reference path length over the associated poses.
  std::vector<double> dist(n, 0.0);
  for (int i = 1; i < n; ++i) {
    dist[i] = dist[i - 1] + (ref[pairs[i].second].p - ref[pairs[i - 1].second].p).norm();
  }

  std::vector<RpeYawStats> out;
  for (double seg : segment_lengths) {
    if (seg > dist.back()) {
      throw ValidationError("rpeYaw: segment length " + std::to_string(seg) +
                            " m exceeds the total reference path length " +
                            std::to_string(dist.back()) + " m");
    }
    std::vector<double> errors;
    int j = 0;
    for (int i = 0; i < n; ++i) {
      while (j < n && dist[j] - dist[i] < seg) ++j;
      if (j >= n) break;
      const double dyaw_est = wrapAngle(yawOf(est[pairs[j].first].q) - yawOf(est[pairs[i].first].q));
      const double dyaw_ref =
          wrapAngle(yawOf(ref[pairs[j].second].q) - yawOf(ref[pairs[i].second].q));
      errors.push_back(std::abs(wrapAngle(dyaw_est - dyaw_ref)) * kRad2Deg);
    }
    RpeYawStats stats;
    stats.segment_length_m = seg;
    stats.count = static_cast<int>(errors.size());
    if (!errors.empty()) {
      double sum = 0.0, sum2 = 0.0;
      for (double e : errors) {
        sum += e;
        sum2 += e * e;
      }
      stats.mean_deg = sum / errors.size();
      stats.rmse_deg = std::sqrt(sum2 / errors.size());
      std::nth_element(errors.begin(), errors.begin() + errors.size() / 2, errors.end());
      stats.median_deg = errors[errors.size() / 2];
    }
    out.push_back(stats);
  }
  return out;
}

double finalRelativeYawErrorDeg(const Trajectory& est, const Trajectory& ref, double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  const auto& first = pairs.front();
  const auto& last = pairs.back();
  const double dyaw_est = wrapAngle(yawOf(est[last.first].q) - yawOf(est[first.first].q));
  const double dyaw_ref = wrapAngle(yawOf(ref[last.second].q) - yawOf(ref[first.second].q));
  return std::abs(wrapAngle(dyaw_est - dyaw_ref)) * kRad2Deg;
}

}  // namespace vimo
