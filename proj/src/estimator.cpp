#include "vimo/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include "vimo/errors.hpp"

namespace vimo {

namespace {

constexpr int kD = 15;  // per-state tangent dimension [dp, dtheta, dv, dbg, dba]

double huberWeight(double whitened_norm, double k) {
  return whitened_norm <= k ? 1.0 : k / whitened_norm;
}

double huberCost(double chi2, double k) {
  const double s = std::sqrt(chi2);
  return s <= k ? chi2 : 2.0 * k * s - k * k;
}

/// Checkpoint lookup by timestamp, nullptr when no sample time is close.
const GammaCheckpoint* findCheckpoint(const std::vector<GammaCheckpoint>& cps, double t,
                                      double tol) {
  auto it = std::lower_bound(cps.begin(), cps.end(), t,
                             [](const GammaCheckpoint& c, double tt) { return c.t < tt; });
  const GammaCheckpoint* best = nullptr;
  double best_dt = tol;
  if (it != cps.end() && std::abs(it->t - t) <= best_dt) {
    best = &*it;
    best_dt = std::abs(it->t - t);
  }
  if (it != cps.begin() && std::abs(std::prev(it)->t - t) < best_dt) {
    best = &*std::prev(it);
  }
  return best;
}

}  // namespace

Eigen::Matrix<double, 15, 1> stateBoxminus(const SystemState& x, const SystemState& anchor) {
  Eigen::Matrix<double, 15, 1> d;
  d.segment<3>(0) = x.p - anchor.p;
  d.segment<3>(3) = quatLog(canonical(anchor.q.inverse() * x.q));
  d.segment<3>(6) = x.v - anchor.v;
  d.segment<3>(9) = x.bg - anchor.bg;
  d.segment<3>(12) = x.ba - anchor.ba;
  return d;
}

SystemState stateBoxplus(const SystemState& x, const Eigen::Matrix<double, 15, 1>& delta) {
  SystemState out = x;
  out.p += delta.segment<3>(0);
  out.q = canonical(x.q * quatExp(delta.segment<3>(3)));
  out.v += delta.segment<3>(6);
  out.bg += delta.segment<3>(9);
  out.ba += delta.segment<3>(12);
  return out;
}

Estimator::Estimator(EstimatorSettings settings) : settings_(std::move(settings)) {
  lambda_ = settings_.opt.lm_initial_lambda;
}

void Estimator::addFirstFrame(const SystemState& x0, long frame_id,
                              std::span<const TrackObservation> tracks) {
  if (!frames_.empty()) {
    throw ValidationError("addFirstFrame: window is not empty");
  }
  Frame f;
  f.frame_id = frame_id;
  f.state = x0;
  f.is_keyframe = true;
  attachTracks(f, tracks);
  frames_.push_back(std::move(f));

  // Gauge prior (position + yaw) plus bootstrap priors on velocity and biases.
  const auto& oc = settings_.opt;
  MatX j0 = MatX::Zero(13, kD);
  j0.block<3, 3>(0, 0) = Mat3::Identity() / oc.prior_sigma_p;
  const Vec3 up_b = x0.q.toRotationMatrix().transpose() * Vec3::UnitZ();
  j0.block<1, 3>(3, 3) = up_b.transpose() / oc.prior_sigma_yaw;
  j0.block<3, 3>(4, 6) = Mat3::Identity() / oc.prior_sigma_v;
  j0.block<3, 3>(7, 9) = Mat3::Identity() / oc.prior_sigma_bg;
  j0.block<3, 3>(10, 12) = Mat3::Identity() / oc.prior_sigma_ba;
  prior_.setFactor(j0, VecX::Zero(13));
  prior_.lin_states = {x0};
}

void Estimator::addFrame(double t, long frame_id, std::span<const ImuSample> imu_segment,
                         std::span<const MagSample> mag_segment,
                         std::span<const TrackObservation> tracks) {
  if (frames_.empty()) {
    throw ValidationError("addFrame: call addFirstFrame first");
  }
  const Frame& newest = frames_.back();
  if (!(t > newest.state.t)) {
    throw ValidationError("addFrame: timestamp regression at t = " + std::to_string(t));
  }
  if (imu_segment.size() < 2) {
    throw ValidationError("addFrame: IMU segment needs at least two samples");
  }

  Frame f;
  f.frame_id = frame_id;
  f.preint = std::make_shared<ImuPreintegration>(newest.state.bg, newest.state.ba,
                                                 settings_.imu_noise,
                                                 settings_.opt.reprop_bg_threshold,
                                                 settings_.opt.reprop_ba_threshold);
  for (size_t i = 0; i + 1 < imu_segment.size(); ++i) {
    f.preint->integrate(imu_segment[i], imu_segment[i + 1]);
  }
  f.state = predictState(*f.preint, newest.state, settings_.gravity);
  f.state.t = t;

  if (settings_.use_mag && !mag_segment.empty()) {
    const int stride = std::max(1, settings_.opt.mag_stride);
    for (size_t i = 0; i < mag_segment.size(); i += stride) {
      f.mag.push_back(mag_segment[i]);
    }
    if (std::abs(f.mag.back().t - mag_segment.back().t) > 1e-12) {
      f.mag.push_back(mag_segment.back());
    }
    refreshMagTarget(f);
  }

  attachTracks(f, tracks);
  f.is_keyframe = decideKeyframe(f);
  frames_.push_back(std::move(f));
}

void Estimator::attachTracks(Frame& frame, std::span<const TrackObservation> tracks) {
  for (const auto& row : tracks) {
    long internal;
    auto it = ext_to_internal_.find(row.landmark_id);
    if (it == ext_to_internal_.end()) {
      internal = next_internal_id_++;
      ext_to_internal_[row.landmark_id] = internal;
      LandmarkEntry entry;
      entry.ext_id = row.landmark_id;
      landmarks_[internal] = std::move(entry);
    } else {
      internal = it->second;
    }
    landmarks_[internal].obs.push_back({frame.frame_id, row.uv});
    frame.track_ids.push_back(row.landmark_id);
  }
}

bool Estimator::decideKeyframe(const Frame& frame) const {
  const Frame* newest_kf = nullptr;
  for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
    if (it->is_keyframe) {
      newest_kf = &*it;
      break;
    }
  }
  if (newest_kf == nullptr) return true;

  if ((frame.state.p - newest_kf->state.p).norm() > settings_.opt.keyframe_translation_m) {
    return true;
  }
  if (frame.track_ids.empty()) return false;  // sensor dropout: keep regular
  std::unordered_set<long> kf_ids(newest_kf->track_ids.begin(), newest_kf->track_ids.end());
  int shared = 0;
  for (long id : frame.track_ids) {
    if (kf_ids.count(id)) ++shared;
  }
  const double overlap = static_cast<double>(shared) / static_cast<double>(frame.track_ids.size());
  return overlap < settings_.opt.keyframe_overlap;
}

std::unordered_map<long, int> Estimator::frameIndexById() const {
  std::unordered_map<long, int> out;
  for (int i = 0; i < static_cast<int>(frames_.size()); ++i) {
    out[frames_[i].frame_id] = i;
  }
  return out;
}

void Estimator::tryTriangulate() {
  const auto idx = frameIndexById();
  for (auto& [internal, lm] : landmarks_) {
    if (lm.active || lm.obs.size() < 2) continue;
    std::vector<TriangulationView> views;
    views.reserve(lm.obs.size());
    for (const auto& o : lm.obs) {
      auto it = idx.find(o.frame_id);
      if (it == idx.end()) continue;
      const auto& st = frames_[it->second].state;
      views.push_back({settings_.camera, st.q, st.p, o.uv});
    }
    if (views.size() < 2) continue;
    try {
      const auto result = triangulate(views, settings_.opt.triangulation_min_baseline_m,
                                      settings_.opt.triangulation_max_reproj_px);
      if (!result.low_quality) {
        lm.p_w = result.point;
        lm.active = true;
      }
    } catch (const ValidationError&) {
      // insufficient baseline yet, retry on a later frame
    }
  }
}

void Estimator::repropagateIfNeeded() {
  for (size_t i = 1; i < frames_.size(); ++i) {
    const auto& prev = frames_[i - 1].state;
    auto& pre = *frames_[i].preint;
    if ((prev.bg - pre.bgLin()).norm() > pre.repropBgThreshold() ||
        (prev.ba - pre.baLin()).norm() > pre.repropBaThreshold()) {
      pre.repropagate(prev.bg, prev.ba);
    }
  }
}

double Estimator::evaluateCost(std::span<const SystemState> states,
                               std::span<const std::pair<long, Vec3>> lm_positions) const {
  double cost = 0.0;
  const int np = prior_.numStates();

  if (!prior_.empty()) {
    VecX delta(kD * np);
    for (int i = 0; i < np; ++i) {
      delta.segment<kD>(kD * i) = stateBoxminus(states[i], prior_.lin_states[i]);
    }
    cost += (prior_.r0 + prior_.J0 * delta).squaredNorm();
  }

  for (size_t i = 1; i < frames_.size(); ++i) {
    const auto& pre = *frames_[i].preint;
    const auto r = inertialResidual(pre, states[i - 1], states[i], settings_.gravity);
    const double c = r.dot(pre.information() * r);
    if (!std::isfinite(c)) {
      throw NumericalError("non-finite inertial cost at frame id " +
                           std::to_string(frames_[i].frame_id));
    }
    cost += c;

    if (!frames_[i].mag.empty()) {
      const Mat3 w = magWeight(settings_.mag_noise);
      const Vec3 m_k1 = frames_[i].mag_target;
      const Vec3 dbg = states[i - 1].bg - pre.bgLin();
      const double tol = 0.6 / settings_.imu_noise.rate;
      for (const auto& sample : frames_[i].mag) {
        const auto* cp = findCheckpoint(pre.gammaCheckpoints(), sample.t, tol);
        if (cp == nullptr) continue;
        const Quat gamma_c = (cp->gamma * quatExp(cp->dtheta_dbg * dbg)).normalized();
        const Vec3 e = magResidual(gamma_c, states[i - 1].q, states[i].q, sample.m, m_k1);
        const double cm = e.dot(w * e);
        if (!std::isfinite(cm)) {
          throw NumericalError("non-finite magnetometer cost at t = " + std::to_string(sample.t));
        }
        cost += cm;
      }
    }
  }

  std::unordered_map<long, int> idx;
  for (int i = 0; i < static_cast<int>(frames_.size()); ++i) idx[frames_[i].frame_id] = i;

  const double k = settings_.opt.huber_threshold_px / settings_.opt.sigma_px;
  const double inv_var = 1.0 / (settings_.opt.sigma_px * settings_.opt.sigma_px);
  // lm_positions is sorted by internal id, as is landmarks_: walk in lockstep.
  size_t pos = 0;
  for (const auto& [internal, lm] : landmarks_) {
    if (!lm.active) continue;
    while (pos < lm_positions.size() && lm_positions[pos].first < internal) ++pos;
    if (pos >= lm_positions.size() || lm_positions[pos].first != internal) continue;
    const Vec3& p_w = lm_positions[pos].second;
    for (const auto& o : lm.obs) {
      auto it = idx.find(o.frame_id);
      if (it == idx.end()) continue;
      const auto& st = states[it->second];
      const auto uv = project(settings_.camera, st.q, st.p, p_w);
      if (!uv) continue;  // behind camera: factor dropped
      const double chi2 = (*uv - o.uv).squaredNorm() * inv_var;
      if (!std::isfinite(chi2)) {
        throw NumericalError("non-finite reprojection cost for landmark " +
                             std::to_string(lm.ext_id));
      }
      cost += huberCost(chi2, k);
    }
  }
  return cost;
}

std::vector<SystemState> Estimator::currentStates() const {
  std::vector<SystemState> out;
  out.reserve(frames_.size());
  for (const auto& f : frames_) out.push_back(f.state);
  return out;
}

std::vector<std::pair<long, Vec3>> Estimator::activeLandmarkPositions() const {
  std::vector<std::pair<long, Vec3>> out;
  for (const auto& [internal, lm] : landmarks_) {
    if (lm.active) out.emplace_back(internal, lm.p_w);
  }
  return out;
}

Estimator::Assembly Estimator::assemble() const {
  const int ns = static_cast<int>(frames_.size());
  Assembly a;
  a.H = MatX::Zero(kD * ns, kD * ns);
  a.g = VecX::Zero(kD * ns);
  a.cost = 0.0;

  const int np = prior_.numStates();
  if (!prior_.empty()) {
    VecX delta(kD * np);
    for (int i = 0; i < np; ++i) {
      delta.segment<kD>(kD * i) = stateBoxminus(frames_[i].state, prior_.lin_states[i]);
    }
    const VecX r = prior_.r0 + prior_.J0 * delta;
    a.H.topLeftCorner(kD * np, kD * np) += prior_.H0;
    a.g.head(kD * np).noalias() += prior_.J0.transpose() * r;
    a.cost += r.squaredNorm();
  }

  for (int i = 1; i < ns; ++i) {
    const auto& pre = *frames_[i].preint;
    const auto& xk = frames_[i - 1].state;
    const auto& xk1 = frames_[i].state;
    const auto r = inertialResidual(pre, xk, xk1, settings_.gravity);
    const auto jac = inertialJacobians(pre, xk, xk1, settings_.gravity);
    const Eigen::Matrix<double, kD, kD>& w = pre.information();
    const double c = r.dot(w * r);
    if (!std::isfinite(c)) {
      throw NumericalError("non-finite inertial cost at frame id " +
                           std::to_string(frames_[i].frame_id));
    }
    a.cost += c;

    const Eigen::Matrix<double, kD, kD> wjk = w * jac.J_k;
    const Eigen::Matrix<double, kD, kD> wjk1 = w * jac.J_k1;
    a.H.block<kD, kD>(kD * (i - 1), kD * (i - 1)).noalias() += jac.J_k.transpose() * wjk;
    a.H.block<kD, kD>(kD * (i - 1), kD * i).noalias() += jac.J_k.transpose() * wjk1;
    a.H.block<kD, kD>(kD * i, kD * (i - 1)).noalias() += jac.J_k1.transpose() * wjk;
    a.H.block<kD, kD>(kD * i, kD * i).noalias() += jac.J_k1.transpose() * wjk1;
    a.g.segment<kD>(kD * (i - 1)).noalias() += jac.J_k.transpose() * (w * r);
    a.g.segment<kD>(kD * i).noalias() += jac.J_k1.transpose() * (w * r);

    if (!frames_[i].mag.empty()) {
      const Mat3 wm = magWeight(settings_.mag_noise);
      const Vec3 m_k1 = frames_[i].mag_target;
      const Vec3 dbg = xk.bg - pre.bgLin();
      const double tol = 0.6 / settings_.imu_noise.rate;
      for (const auto& sample : frames_[i].mag) {
        const auto* cp = findCheckpoint(pre.gammaCheckpoints(), sample.t, tol);
        if (cp == nullptr) continue;
        const Quat gamma_c = (cp->gamma * quatExp(cp->dtheta_dbg * dbg)).normalized();
        const Vec3 e = magResidual(gamma_c, xk.q, xk1.q, sample.m, m_k1);
        const double cm = e.dot(wm * e);
        if (!std::isfinite(cm)) {
          throw NumericalError("non-finite magnetometer cost at t = " + std::to_string(sample.t));
        }
        a.cost += cm;
        const auto mj = magResidualJacobians(cp->gamma, cp->dtheta_dbg, dbg, xk.q, xk1.q, sample.m,
                                             m_k1);
        // Rows over the contiguous 30 columns of the (i-1, i) state pair.
        Eigen::Matrix<double, 3, 30> j = Eigen::Matrix<double, 3, 30>::Zero();
        j.block<3, 3>(0, 3) = mj.J_theta_k;
        j.block<3, 3>(0, 9) = mj.J_bg;
        j.block<3, 3>(0, kD + 3) = mj.J_theta_k1;
        a.H.block<30, 30>(kD * (i - 1), kD * (i - 1)).noalias() += j.transpose() * wm * j;
        a.g.segment<30>(kD * (i - 1)).noalias() += j.transpose() * (wm * e);
      }
    }
  }

  const auto idx = frameIndexById();
  const double k = settings_.opt.huber_threshold_px / settings_.opt.sigma_px;
  const double inv_var = 1.0 / (settings_.opt.sigma_px * settings_.opt.sigma_px);
  for (const auto& [internal, lm] : landmarks_) {
    if (!lm.active) continue;
    LandmarkSystem sys;
    sys.internal_id = internal;
    sys.Hll.setZero();
    sys.gl.setZero();
    bool any = false;
    for (const auto& o : lm.obs) {
      auto it = idx.find(o.frame_id);
      if (it == idx.end()) continue;
      const int fi = it->second;
      const auto& st = frames_[fi].state;
      const auto uv = project(settings_.camera, st.q, st.p, lm.p_w);
      const auto jac = reprojectionJacobians(settings_.camera, st.q, st.p, lm.p_w);
      if (!uv || !jac) continue;
      const Vec2 r = *uv - o.uv;
      const double chi2 = r.squaredNorm() * inv_var;
      if (!std::isfinite(chi2)) {
        throw NumericalError("non-finite reprojection cost for landmark " +
                             std::to_string(lm.ext_id));
      }
      a.cost += huberCost(chi2, k);
      const double wgt = huberWeight(std::sqrt(chi2), k) * inv_var;

      // Pose block is 6-dof [dp, dtheta]; velocity and biases do not appear.
      const Eigen::Matrix<double, 2, 6>& jp = jac->J_pose;
      a.H.block<6, 6>(kD * fi, kD * fi).noalias() += wgt * jp.transpose() * jp;
      a.g.segment<6>(kD * fi).noalias() += wgt * jp.transpose() * r;
      sys.Hll.noalias() += wgt * jac->J_landmark.transpose() * jac->J_landmark;
      sys.gl.noalias() += wgt * jac->J_landmark.transpose() * r;
      sys.coupling.emplace_back(fi, wgt * jp.transpose() * jac->J_landmark);
      any = true;
    }
    if (any) {
      a.lms.push_back(std::move(sys));
    }
  }
  return a;
}

OptimizeStats Estimator::optimize() {
  OptimizeStats stats;
  if (frames_.size() < 2) {
    tryTriangulate();
    stats.converged = true;
    return stats;
  }
  tryTriangulate();

  double lambda = settings_.opt.lm_initial_lambda;
  const auto& oc = settings_.opt;

  for (int iter = 0; iter < oc.max_iterations; ++iter) {
    repropagateIfNeeded();
    Assembly a = assemble();
    if (iter == 0) stats.initial_cost = a.cost;
    stats.final_cost = a.cost;

    const int ns = static_cast<int>(frames_.size());
    bool accepted = false;
    double new_cost = a.cost;
    double step_norm = 0.0;
    std::vector<SystemState> cand_states(ns);
    std::vector<std::pair<long, Vec3>> cand_lms;

    while (!accepted && lambda <= oc.lm_lambda_max) {
      // Landmark Schur complement with damped 3x3 blocks.
      MatX h = a.H;
      VecX g = a.g;
      std::vector<Mat3> lm_inv(a.lms.size());
      bool solve_ok = true;
      for (size_t li = 0; li < a.lms.size(); ++li) {
        const auto& sys = a.lms[li];
        Mat3 w = sys.Hll;
        for (int d = 0; d < 3; ++d) {
          w(d, d) += lambda * std::max(sys.Hll(d, d), 1e-9);
        }
        const Mat3 inv = w.inverse();
        if (!inv.allFinite()) {
          solve_ok = false;
          break;
        }
        lm_inv[li] = inv;
        for (const auto& [fi, hi] : sys.coupling) {
          const Eigen::Matrix<double, 6, 3> hi_inv = hi * inv;
          g.segment<6>(kD * fi).noalias() -= hi_inv * sys.gl;
          for (const auto& [fj, hj] : sys.coupling) {
            h.block<6, 6>(kD * fi, kD * fj).noalias() -= hi_inv * hj.transpose();
          }
        }
      }

      VecX dx;
      if (solve_ok) {
        try {
          dx = solveNormalEquations(h, g, lambda);
        } catch (const NumericalError&) {
          solve_ok = false;
        }
      }
      if (!solve_ok) {
        lambda *= 10.0;
        continue;
      }

      for (int i = 0; i < ns; ++i) {
        cand_states[i] = stateBoxplus(frames_[i].state, dx.segment<kD>(kD * i));
      }
      cand_lms = activeLandmarkPositions();
      size_t pos = 0;
      for (size_t li = 0; li < a.lms.size(); ++li) {
        const auto& sys = a.lms[li];
        Vec3 rhs = sys.gl;
        for (const auto& [fi, hi] : sys.coupling) {
          rhs.noalias() += hi.transpose() * dx.segment<6>(kD * fi);
        }
        while (pos < cand_lms.size() && cand_lms[pos].first < sys.internal_id) ++pos;
        if (pos < cand_lms.size() && cand_lms[pos].first == sys.internal_id) {
          cand_lms[pos].second -= lm_inv[li] * rhs;
        }
      }

      new_cost = evaluateCost(cand_states, cand_lms);
      step_norm = dx.lpNorm<Eigen::Infinity>();
      if (new_cost <= a.cost) {
        for (int i = 0; i < ns; ++i) frames_[i].state = cand_states[i];
        size_t p2 = 0;
        for (auto& [internal, lm] : landmarks_) {
          if (!lm.active) continue;
          while (p2 < cand_lms.size() && cand_lms[p2].first < internal) ++p2;
          if (p2 < cand_lms.size() && cand_lms[p2].first == internal) {
            lm.p_w = cand_lms[p2].second;
          }
        }
        lambda = std::max(lambda / 10.0, oc.lm_lambda_min);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }

    if (!accepted) {
      stats.converged = true;  // damping exhausted: no descent direction left
      break;
    }
    ++stats.iterations;
    stats.final_cost = new_cost;
    if (a.cost - new_cost <= oc.convergence_tol * std::max(a.cost, 1e-12) ||
        step_norm < oc.step_tol) {
      stats.converged = true;
      break;
    }
  }
  return stats;
}

size_t Estimator::numActiveLandmarks() const {
  size_t n = 0;
  for (const auto& [id, lm] : landmarks_) {
    if (lm.active) ++n;
  }
  return n;
}

std::optional<Vec3> Estimator::landmarkPosition(long ext_id) const {
  auto it = ext_to_internal_.find(ext_id);
  if (it == ext_to_internal_.end()) return std::nullopt;
  const auto& lm = landmarks_.at(it->second);
  if (!lm.active) return std::nullopt;
  return lm.p_w;
}

double Estimator::totalCost() const {
  return evaluateCost(currentStates(), activeLandmarkPositions());
}

void Estimator::removeLandmarkObs(long frame_id) {
  std::vector<long> dead;
  for (auto& [internal, lm] : landmarks_) {
    auto& obs = lm.obs;
    obs.erase(std::remove_if(obs.begin(), obs.end(),
                             [&](const LandmarkEntry::Obs& o) { return o.frame_id == frame_id; }),
              obs.end());
    if (obs.empty() || (lm.active && obs.size() < 2)) {
      dead.push_back(internal);
    }
  }
  for (long id : dead) eraseLandmark(id);
}

void Estimator::eraseLandmark(long internal_id) {
  auto it = landmarks_.find(internal_id);
  if (it == landmarks_.end()) return;
  ext_to_internal_.erase(it->second.ext_id);
  landmarks_.erase(it);
}

void Estimator::refreshMagTarget(Frame& frame) const {
  if (frame.mag.empty() || frame.preint == nullptr) return;
  // m^(k+1): the newest measurement, moved from its sample time to the
  // frame time through the gyro-propagated rotation.
  const auto* cp_m = findCheckpoint(frame.preint->gammaCheckpoints(), frame.mag.back().t,
                                    0.6 / settings_.imu_noise.rate);
  if (cp_m != nullptr) {
    frame.mag_target = frame.preint->gamma().toRotationMatrix().transpose() *
                       (cp_m->gamma.toRotationMatrix() * frame.mag.back().m);
  } else {
    frame.mag_target = frame.mag.back().m;
  }
}

void Estimator::marginalize() {
  const int capacity = settings_.opt.window_keyframes + settings_.opt.window_recent;
  while (static_cast<int>(frames_.size()) > capacity) {
    // Oldest non-keyframe (never the newest frame): leaves as case (a).
    int j = -1;
    for (int i = 0; i + 1 < static_cast<int>(frames_.size()); ++i) {
      if (!frames_[i].is_keyframe) {
        j = i;
        break;
      }
    }
    if (j > 0) {
      dropFrameMergeImu(j);
    } else {
      // j == 0: case (a) on the window start, absorbed by Schur complement.
      // j == -1: every older frame is a keyframe, case (b) on the oldest.
      marginalizeOldest();
    }
  }
}

void Estimator::dropFrameMergeImu(int j) {
  const int ns = static_cast<int>(frames_.size());
  if (j <= 0 || j + 1 >= ns) return;

  // The prior may span the dropped state; absorb it there first.
  const int np = prior_.numStates();
  if (!prior_.empty() && j < np) {
    VecX delta(kD * np);
    for (int i = 0; i < np; ++i) {
      delta.segment<kD>(kD * i) = stateBoxminus(frames_[i].state, prior_.lin_states[i]);
    }
    const VecX r_hat = prior_.r0 + prior_.J0 * delta;
    const VecX g_full = prior_.J0.transpose() * r_hat;

    // Permute state j to the front of the quadratic model.
    std::vector<int> order;
    order.push_back(j);
    for (int i = 0; i < np; ++i) {
      if (i != j) order.push_back(i);
    }
    MatX h_perm(kD * np, kD * np);
    VecX g_perm(kD * np);
    for (int a = 0; a < np; ++a) {
      g_perm.segment<kD>(kD * a) = g_full.segment<kD>(kD * order[a]);
      for (int b = 0; b < np; ++b) {
        h_perm.block<kD, kD>(kD * a, kD * b) =
            prior_.H0.block<kD, kD>(kD * order[a], kD * order[b]);
      }
    }
    const auto reduced = schurMarginalize(h_perm, g_perm, kD);
    auto factor = priorFromInformation(reduced.H, reduced.g);
    prior_.setFactor(std::move(factor.J0), std::move(factor.r0));
    prior_.lin_states.clear();
    for (int i = 0; i < np; ++i) {
      if (i != j) prior_.lin_states.push_back(frames_[i].state);
    }
  }

  // Merge the two adjacent preintegrations over the union of their samples.
  Frame& next = frames_[j + 1];
  const auto& left = *frames_[j].preint;
  auto merged = std::make_shared<ImuPreintegration>(
      left.bgLin(), left.baLin(), settings_.imu_noise, settings_.opt.reprop_bg_threshold,
      settings_.opt.reprop_ba_threshold);
  std::vector<ImuSample> samples = left.samples();
  const auto& right = next.preint->samples();
  samples.insert(samples.end(), right.begin() + 1, right.end());
  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    merged->integrate(samples[i], samples[i + 1]);
  }
  next.preint = std::move(merged);
  if (!frames_[j].mag.empty()) {
    next.mag.insert(next.mag.begin(), frames_[j].mag.begin(), frames_[j].mag.end());
  }
  refreshMagTarget(next);

  const long dead_frame = frames_[j].frame_id;
  frames_.erase(frames_.begin() + j);
  removeLandmarkObs(dead_frame);
}

void Estimator::marginalizeOldest() {
  if (frames_.size() < 2) return;
  const Frame& f0 = frames_.front();
  const int ns = static_cast<int>(frames_.size());

  // Case (b): the oldest frame is a keyframe; landmarks seen there but not in
  // the most recent keyframe leave the window with it. Case (a): plain frame,
  // no landmarks are marginalized and its measurements are dropped.
  std::vector<long> marg_lms;
  if (f0.is_keyframe) {
    int ref_idx = -1;
    for (int i = ns - 1; i >= 1; --i) {
      if (frames_[i].is_keyframe) {
        ref_idx = i;
        break;
      }
    }
    if (ref_idx < 0) ref_idx = ns - 1;
    std::unordered_set<long> ref_ids(frames_[ref_idx].track_ids.begin(),
                                     frames_[ref_idx].track_ids.end());
    for (const auto& [internal, lm] : landmarks_) {
      if (!lm.active) continue;
      const bool in_f0 = std::any_of(lm.obs.begin(), lm.obs.end(), [&](const auto& o) {
        return o.frame_id == f0.frame_id;
      });
      if (in_f0 && !ref_ids.count(lm.ext_id)) {
        marg_lms.push_back(internal);
      }
    }
  }

  // Local system layout: [states 0..ns-1 | marg landmarks]; only the factors
  // touching the marginalized variables are absorbed.
  const int nl = static_cast<int>(marg_lms.size());
  const int sdim = kD * ns;
  const int dim = sdim + 3 * nl;
  MatX h = MatX::Zero(dim, dim);
  VecX g = VecX::Zero(dim);
  std::unordered_map<long, int> lm_col;
  for (int li = 0; li < nl; ++li) lm_col[marg_lms[li]] = sdim + 3 * li;

  // Existing prior (spans the window-state prefix, including state 0).
  if (!prior_.empty()) {
    const int np = prior_.numStates();
    VecX delta(kD * np);
    for (int i = 0; i < np; ++i) {
      delta.segment<kD>(kD * i) = stateBoxminus(frames_[i].state, prior_.lin_states[i]);
    }
    const VecX r = prior_.r0 + prior_.J0 * delta;
    h.topLeftCorner(kD * np, kD * np) += prior_.H0;
    g.head(kD * np).noalias() += prior_.J0.transpose() * r;
  }

  // Inertial and magnetometer factors of the (state0, state1) pair.
  {
    const auto& pre = *frames_[1].preint;
    const auto& xk = frames_[0].state;
    const auto& xk1 = frames_[1].state;
    const auto r = inertialResidual(pre, xk, xk1, settings_.gravity);
    const auto jac = inertialJacobians(pre, xk, xk1, settings_.gravity);
    const Eigen::Matrix<double, kD, kD>& w = pre.information();
    Eigen::Matrix<double, kD, 30> j;
    j.leftCols<kD>() = jac.J_k;
    j.rightCols<kD>() = jac.J_k1;
    h.topLeftCorner(30, 30).noalias() += j.transpose() * w * j;
    g.head(30).noalias() += j.transpose() * (w * r);

    if (!frames_[1].mag.empty()) {
      const Mat3 wm = magWeight(settings_.mag_noise);
      const Vec3 m_k1 = frames_[1].mag_target;
      const Vec3 dbg = xk.bg - pre.bgLin();
      const double tol = 0.6 / settings_.imu_noise.rate;
      for (const auto& sample : frames_[1].mag) {
        const auto* cp = findCheckpoint(pre.gammaCheckpoints(), sample.t, tol);
        if (cp == nullptr) continue;
        const Quat gamma_c = (cp->gamma * quatExp(cp->dtheta_dbg * dbg)).normalized();
        const Vec3 e = magResidual(gamma_c, xk.q, xk1.q, sample.m, m_k1);
        const auto mj =
            magResidualJacobians(cp->gamma, cp->dtheta_dbg, dbg, xk.q, xk1.q, sample.m, m_k1);
        Eigen::Matrix<double, 3, 30> j3 = Eigen::Matrix<double, 3, 30>::Zero();
        j3.block<3, 3>(0, 3) = mj.J_theta_k;
        j3.block<3, 3>(0, 9) = mj.J_bg;
        j3.block<3, 3>(0, kD + 3) = mj.J_theta_k1;
        h.topLeftCorner(30, 30).noalias() += j3.transpose() * wm * j3;
        g.head(30).noalias() += j3.transpose() * (wm * e);
      }
    }
  }

  // Visual factors of the marginalized landmarks, in every frame.
  const auto idx = frameIndexById();
  const double k = settings_.opt.huber_threshold_px / settings_.opt.sigma_px;
  const double inv_var = 1.0 / (settings_.opt.sigma_px * settings_.opt.sigma_px);
  for (long internal : marg_lms) {
    const auto& lm = landmarks_.at(internal);
    const int lc = lm_col.at(internal);
    for (const auto& o : lm.obs) {
      auto it = idx.find(o.frame_id);
      if (it == idx.end()) continue;
      const int fi = it->second;
      const auto& st = frames_[fi].state;
      const auto uv = project(settings_.camera, st.q, st.p, lm.p_w);
      const auto jac = reprojectionJacobians(settings_.camera, st.q, st.p, lm.p_w);
      if (!uv || !jac) continue;
      const Vec2 r = *uv - o.uv;
      const double wgt = huberWeight(r.norm() / settings_.opt.sigma_px, k) * inv_var;
      const Eigen::Matrix<double, 2, 6>& jp = jac->J_pose;
      const Eigen::Matrix<double, 2, 3>& jl = jac->J_landmark;
      h.block<6, 6>(kD * fi, kD * fi).noalias() += wgt * jp.transpose() * jp;
      h.block<6, 3>(kD * fi, lc).noalias() += wgt * jp.transpose() * jl;
      h.block<3, 6>(lc, kD * fi).noalias() += wgt * jl.transpose() * jp;
      h.block<3, 3>(lc, lc).noalias() += wgt * jl.transpose() * jl;
      g.segment<6>(kD * fi).noalias() += wgt * jp.transpose() * r;
      g.segment<3>(lc).noalias() += wgt * jl.transpose() * r;
    }
  }

  // Eliminate the landmark blocks first (they couple only to states), then
  // Schur-marginalize the 15-dof state block.
  for (int li = nl - 1; li >= 0; --li) {
    const int o = sdim + 3 * li;
    Mat3 d = h.block<3, 3>(o, o);
    d.diagonal().array() += 1e-12 * std::max(1.0, d.trace());
    const Mat3 dinv = d.inverse();
    const MatX b = h.block(0, o, sdim, 3);
    h.topLeftCorner(sdim, sdim).noalias() -= b * dinv * b.transpose();
    g.head(sdim).noalias() -= b * (dinv * g.segment<3>(o));
  }
  const auto reduced =
      schurMarginalize(h.topLeftCorner(sdim, sdim), g.head(sdim), kD);
  auto factor = priorFromInformation(reduced.H, reduced.g);
  prior_.setFactor(std::move(factor.J0), std::move(factor.r0));
  prior_.lin_states.clear();
  for (int i = 1; i < ns; ++i) {
    prior_.lin_states.push_back(frames_[i].state);
  }

  const long dead_frame = f0.frame_id;
  for (long internal : marg_lms) eraseLandmark(internal);
  frames_.pop_front();
  frames_.front().preint.reset();
  frames_.front().mag.clear();
  removeLandmarkObs(dead_frame);
}

std::vector<ImuSample> sliceImuSegment(std::span<const ImuSample> imu, double t0, double t1) {
  if (!(t1 > t0)) {
    throw ValidationError("sliceImuSegment: empty interval");
  }
  if (imu.size() < 2 || imu.front().t > t0 + 1e-9 || imu.back().t < t1 - 1e-9) {
    throw ValidationError("sliceImuSegment: IMU stream does not cover [" + std::to_string(t0) +
                          ", " + std::to_string(t1) + "]");
  }
  auto interp = [](const ImuSample& a, const ImuSample& b, double t) {
    const double u = (t - a.t) / (b.t - a.t);
    ImuSample s;
    s.t = t;
    s.gyro = a.gyro + u * (b.gyro - a.gyro);
    s.accel = a.accel + u * (b.accel - a.accel);
    return s;
  };

  std::vector<ImuSample> out;
  auto upper = std::upper_bound(imu.begin(), imu.end(), t0,
                                [](double t, const ImuSample& s) { return t < s.t; });
  if (upper == imu.begin() || upper == imu.end()) {
    throw ValidationError("sliceImuSegment: interval start outside the stream");
  }
  const auto prev = upper - 1;
  if (std::abs(prev->t - t0) < 1e-9) {
    out.push_back(*prev);
  } else {
    out.push_back(interp(*prev, *upper, t0));
  }
  for (auto it = upper; it != imu.end() && it->t < t1 - 1e-9; ++it) {
    out.push_back(*it);
  }
  const auto after = std::lower_bound(imu.begin(), imu.end(), t1,
                                      [](const ImuSample& s, double t) { return s.t < t; });
  if (after == imu.end()) {
    out.push_back(imu.back());  // within 1e-9 of t1 per the coverage check
  } else if (std::abs(after->t - t1) < 1e-9) {
    out.push_back(*after);
  } else {
    out.push_back(interp(*(after - 1), *after, t1));
  }
  return out;
}

InitializationResult initializeFromSensors(std::span<const ImuSample> imu,
                                           std::span<const MagSample> mag_calibrated, bool use_mag,
                                           double state_time, const InitializationParams& params) {
  if (imu.size() < 10) {
    throw ValidationError("initializeFromSensors: too few IMU samples");
  }

  auto windowStats = [&](double ws) {
    Vec3 mean_g = Vec3::Zero(), mean_a = Vec3::Zero();
    int n = 0;
    for (const auto& s : imu) {
      if (s.t < ws || s.t > ws + params.window_s) continue;
      mean_g += s.gyro;
      mean_a += s.accel;
      ++n;
    }
    struct Stats {
      Vec3 mean_g, mean_a;
      double std_g, std_a;
      int n;
    } st{Vec3::Zero(), Vec3::Zero(), 0.0, 0.0, 0};
    if (n < 5) return st;
    mean_g /= n;
    mean_a /= n;
    double var_g = 0.0, var_a = 0.0;
    for (const auto& s : imu) {
      if (s.t < ws || s.t > ws + params.window_s) continue;
      var_g += (s.gyro - mean_g).squaredNorm();
      var_a += (s.accel - mean_a).squaredNorm();
    }
    st.mean_g = mean_g;
    st.mean_a = mean_a;
    st.std_g = std::sqrt(var_g / n);
    st.std_a = std::sqrt(var_a / n);
    st.n = n;
    return st;
  };

  const double t_begin = imu.front().t;
  double found_ws = -1.0;
  Vec3 mean_g = Vec3::Zero(), mean_a = Vec3::Zero();
  for (double ws = t_begin; ws + params.window_s <= t_begin + params.search_horizon_s;
       ws += 0.25 * params.window_s) {
    const auto st = windowStats(ws);
    if (st.n >= 5 && st.std_g < params.gyro_std_threshold &&
        st.std_a < params.accel_std_threshold) {
      found_ws = ws;
      mean_g = st.mean_g;
      mean_a = st.mean_a;
      break;
    }
  }

  InitializationResult out;
  out.stationary_found = found_ws >= 0.0;
  if (!out.stationary_found) {
    const auto st = windowStats(t_begin);
    mean_g = Vec3::Zero();  // moving: the gyro mean is motion, not bias
    mean_a = st.mean_a;
    found_ws = t_begin;
    out.note = "no stationary segment found, falling back to first-sample alignment";
  }

  Vec3 mag_mean = Vec3::Zero();
  int n_mag = 0;
  for (const auto& s : mag_calibrated) {
    if (s.t < found_ws || s.t > found_ws + params.window_s) continue;
    mag_mean += s.m;
    ++n_mag;
  }

  out.x0.t = state_time;
  out.x0.bg = mean_g;
  if (use_mag && n_mag > 0) {
    out.x0.q = initialAlignment(mean_a, mag_mean / n_mag);
  } else {
    out.x0.q = initialAlignmentGravityOnly(mean_a);
  }
  return out;
}

Trajectory runSequence(const SequenceInput& input, const EstimatorSettings& settings,
                       RunSummary* summary) {
  if (input.tracks.empty()) {
    throw ValidationError("runSequence: dataset has no feature tracks");
  }
  if (input.imu.size() < 2) {
    throw ValidationError("runSequence: dataset has no usable IMU stream");
  }
  if (settings.use_mag && input.mag.empty()) {
    throw ValidationError("runSequence: vio_mag mode requires magnetometer samples");
  }

  std::vector<MagSample> mag_cal;
  if (settings.use_mag) {
    const MagCalibration cal = input.magcal.value_or(MagCalibration::identity());
    mag_cal.reserve(input.mag.size());
    for (const auto& s : input.mag) mag_cal.push_back(applyCalibration(s, cal));
  }

  // Frame schedule from the track rows (sorted, unique frame ids).
  struct FrameRows {
    long frame_id;
    double t;
    std::vector<TrackObservation> rows;
  };
  std::vector<FrameRows> schedule;
  for (const auto& row : input.tracks) {
    if (!schedule.empty() && schedule.back().frame_id == row.frame_id) {
      if (std::abs(schedule.back().t - row.t) > 1e-9) {
        throw ValidationError("runSequence: frame " + std::to_string(row.frame_id) +
                              " has inconsistent timestamps");
      }
      schedule.back().rows.push_back(row);
    } else {
      if (!schedule.empty() && row.t <= schedule.back().t) {
        throw ValidationError("runSequence: track rows are not sorted by time");
      }
      schedule.push_back({row.frame_id, row.t, {row}});
    }
  }

  RunSummary local_summary;
  RunSummary& sum = summary != nullptr ? *summary : local_summary;

  const double imu_t0 = input.imu.front().t;
  const double imu_t1 = input.imu.back().t;
  size_t first = 0;
  while (first < schedule.size() && schedule[first].t < imu_t0 - 1e-9) ++first;
  if (first > 0) {
    sum.warnings.push_back("skipped " + std::to_string(first) + " frames before IMU coverage");
  }
  if (first >= schedule.size()) {
    throw ValidationError("runSequence: no frames within IMU coverage");
  }

  const auto init = initializeFromSensors(input.imu, mag_cal, settings.use_mag,
                                          schedule[first].t, InitializationParams{});
  if (!init.note.empty()) {
    sum.warnings.push_back(init.note);
  }

  EstimatorSettings est_settings = settings;
  est_settings.camera = input.camera;
  Estimator est(est_settings);
  est.addFirstFrame(init.x0, schedule[first].frame_id, schedule[first].rows);

  std::map<double, SystemState> latest;
  latest[init.x0.t] = init.x0;

  const auto t_start = std::chrono::steady_clock::now();
  double t_prev = schedule[first].t;
  for (size_t f = first + 1; f < schedule.size(); ++f) {
    const auto& fr = schedule[f];
    if (fr.t > imu_t1 + 1e-9) {
      sum.warnings.push_back("stopped at frame " + std::to_string(fr.frame_id) +
                             ": IMU stream ended");
      break;
    }
    const auto imu_seg = sliceImuSegment(input.imu, t_prev, fr.t);

    std::vector<MagSample> mag_seg;
    if (settings.use_mag) {
      auto lo = std::upper_bound(mag_cal.begin(), mag_cal.end(), t_prev,
                                 [](double t, const MagSample& s) { return t < s.t; });
      for (auto it = lo; it != mag_cal.end() && it->t <= fr.t + 1e-12; ++it) {
        mag_seg.push_back(*it);
      }
    }

    est.addFrame(fr.t, fr.frame_id, imu_seg, mag_seg, fr.rows);
    sum.lm_iterations += est.optimize().iterations;
    est.marginalize();

    for (const auto& frame : est.frames()) {
      latest[frame.state.t] = frame.state;
    }
    t_prev = fr.t;
    ++sum.frames;
  }
  sum.optimize_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  for (const auto& frame : est.frames()) {
    if (frame.is_keyframe) ++sum.keyframes;
  }

  Trajectory out;
  out.reserve(latest.size());
  for (const auto& [t, st] : latest) {
    out.push_back({t, st.p, st.q, st.v});
  }
  return out;
}

}  // namespace vimo
