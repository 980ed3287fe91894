// Command-line frontend: simulate, calibrate-mag, run, evaluate, allan.
// Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vimo/allan.hpp"
#include "vimo/errors.hpp"
#include "vimo/estimator.hpp"
#include "vimo/evaluation.hpp"
#include "vimo/io.hpp"
#include "vimo/magnetometer.hpp"
#include "vimo/simulator.hpp"

namespace fs = std::filesystem;
using namespace vimo;

namespace {

double pathLength(const Trajectory& traj) {
  double len = 0.0;
  for (size_t i = 1; i < traj.size(); ++i) {
    len += (traj[i].p - traj[i - 1].p).norm();
  }
  return len;
}

int cmdSimulate(const std::string& config_path, const std::string& out_dir, long seed_override) {
  auto kv = config_path.empty() ? KeyValues::fromString("", "<defaults>")
                                : KeyValues::fromFile(config_path);
  SimSetup setup = parseSimConfig(kv);
  if (seed_override >= 0) {
    setup.cfg.seed = static_cast<uint64_t>(seed_override);
  }
  const auto data = simulate(setup.model, setup.env, setup.cfg);
  writeDataset(out_dir, data, setup.cfg.camera);

  std::printf("dataset written to %s\n", out_dir.c_str());
  std::printf("  duration:    %.3f s\n", setup.model.duration);
  std::printf("  path length: %.3f m\n", pathLength(data.groundtruth));
  std::printf("  imu samples: %zu\n", data.imu.size());
  std::printf("  mag samples: %zu\n", data.mag.size());
  std::printf("  track rows:  %zu over %zu landmarks\n", data.tracks.size(),
              data.landmarks.size());
  return 0;
}

int cmdCalibrateMag(const std::string& mag_csv, const std::string& mode,
                    const std::string& out_cfg) {
  const auto samples = readMagCsv(mag_csv);
  EllipsoidFitReport report;
  if (mode == "full") {
    report = fitEllipsoidDetailed(samples);
  } else if (mode == "hard_iron") {
    report = fitHardIronDetailed(samples);
  } else {
    throw ValidationError("calibrate-mag: mode must be 'full' or 'hard_iron'");
  }
  writeMagCalConfig(out_cfg, report.cal);
  std::printf("calibration written to %s\n", out_cfg.c_str());
  std::printf("  samples:          %zu\n", samples.size());
  std::printf("  rms radius error: %.6g\n", report.rms_radius_error);
  std::printf("  octant coverage:  %d / 8\n", report.octants_covered);
  return 0;
}

int cmdRun(const std::string& dataset_dir, const std::string& config_path,
           const std::string& out_csv, const std::string& mode_override) {
  auto kv = config_path.empty() ? KeyValues::fromString("", "<defaults>")
                                : KeyValues::fromFile(config_path);
  RunConfig rc = parseRunConfig(kv);
  if (!mode_override.empty()) {
    if (mode_override != "vio" && mode_override != "vio_mag") {
      throw ValidationError("run: --mode must be 'vio' or 'vio_mag'");
    }
    rc.mode = mode_override;
    rc.settings.use_mag = rc.mode == "vio_mag";
  }

  const Dataset ds = loadDataset(dataset_dir);
  if (rc.settings.use_mag) {
    if (!ds.has_mag) {
      throw ValidationError("run: vio_mag mode requires mag.csv in the dataset");
    }
    if (!ds.magcal.has_value()) {
      throw ValidationError("run: vio_mag mode requires magcal.cfg in the dataset");
    }
  }

  SequenceInput input;
  input.imu = ds.imu;
  input.mag = ds.mag;
  input.tracks = ds.tracks;
  input.camera = ds.camera;
  input.magcal = ds.magcal;

  RunSummary summary;
  const Trajectory traj = runSequence(input, rc.settings, &summary);
  writeTrajectoryCsv(out_csv, traj);

  for (const auto& w : summary.warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  std::printf("trajectory written to %s\n", out_csv.c_str());
  std::printf("  mode:   %s\n", rc.mode.c_str());
  std::printf("  frames: %d (%.3f ms/frame, %.2f LM iterations/frame)\n", summary.frames,
              summary.frames > 0 ? 1000.0 * summary.optimize_seconds / summary.frames : 0.0,
              summary.frames > 0 ? static_cast<double>(summary.lm_iterations) / summary.frames
                                 : 0.0);
  std::printf("  states: %zu\n", traj.size());
  return 0;
}

int cmdEvaluate(const std::string& est_csv, const std::string& ref_csv, const std::string& mode,
                const std::vector<double>& segments, const std::string& out_csv, double max_dt) {
  const Trajectory est = readTrajectoryCsv(est_csv);
  const Trajectory ref = readTrajectoryCsv(ref_csv);
  if (mode != "sim3" && mode != "se3") {
    throw ValidationError("evaluate: --mode must be 'sim3' or 'se3'");
  }
  const AlignMode align_mode = mode == "se3" ? AlignMode::kSe3 : AlignMode::kSim3;

  const auto result = ate(est, ref, align_mode, max_dt);
  std::printf("# rotation metric: geodesic angle after %s alignment\n", mode.c_str());
  std::printf("ate = %.2f°/%.2fm\n", result.rmse_rot_deg, result.rmse_trans_m);
  std::printf("ate_rot_deg = %.6f\n", result.rmse_rot_deg);
  std::printf("ate_trans_m = %.6f\n", result.rmse_trans_m);
  std::printf("pairs = %d\n", result.pairs);
  std::printf("scale = %.9f\n", result.alignment.scale);

  if (!segments.empty()) {
    const auto stats = rpeYaw(est, ref, segments, max_dt);
    std::printf("# yaw RPE per segment length\n");
    std::printf("%-12s %-12s %-12s %-12s %-8s\n", "length_m", "mean_deg", "median_deg", "rmse_deg",
                "count");
    std::string csv = "length_m,mean_deg,median_deg,rmse_deg,count\n";
    for (const auto& s : stats) {
      std::printf("%-12.2f %-12.4f %-12.4f %-12.4f %-8d\n", s.segment_length_m, s.mean_deg,
                  s.median_deg, s.rmse_deg, s.count);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%d\n", s.segment_length_m,
                    s.mean_deg, s.median_deg, s.rmse_deg, s.count);
      csv += buf;
    }
    if (!out_csv.empty()) {
      writeFileAtomic(out_csv, csv);
      std::printf("rpe table written to %s\n", out_csv.c_str());
    }
  }
  return 0;
}

int cmdAllan(const std::string& csv, const std::string& column, const std::string& out_csv) {
  std::vector<double> times;
  const auto values = readCsvColumn(csv, column, &times);
  if (values.size() < 3) {
    throw ValidationError("allan: record too short for any tau");
  }
  if (times.size() != values.size()) {
    throw ValidationError("allan: input needs a 't' column for rate detection");
  }
  // Uniform sampling check: max jitter 1% of the median interval.
  std::vector<double> dts;
  dts.reserve(times.size() - 1);
  for (size_t i = 1; i < times.size(); ++i) dts.push_back(times[i] - times[i - 1]);
  std::vector<double> sorted = dts;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double dt_med = sorted[sorted.size() / 2];
  if (dt_med <= 0.0) {
    throw ValidationError("allan: non-increasing timestamps");
  }
  for (double dt : dts) {
    if (std::abs(dt - dt_med) > 0.01 * dt_med) {
      throw ValidationError("allan: non-uniform sampling (jitter above 1%)");
    }
  }
  const double rate = 1.0 / dt_med;
  const auto taus = allanDefaultTaus(values.size(), rate);
  if (taus.empty()) {
    throw ValidationError("allan: record too short for any tau");
  }
  const auto ad = allanDeviation(values, rate, taus);

  std::string out = "tau_s,adev\n";
  for (const auto& [tau, dev] : ad) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", tau, dev);
    out += buf;
  }
  writeFileAtomic(out_csv, out);
  std::printf("allan deviation for column '%s' written to %s (%zu taus at %.3f Hz)\n",
              column.c_str(), out_csv.c_str(), ad.size(), rate);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visual-inertial-magnetometer odometry toolkit"};
  app.require_subcommand(1);

  std::string sim_config, sim_out;
  long sim_seed = -1;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset directory");
  sim->add_option("--config", sim_config, "simulation config file");
  sim->add_option("--out", sim_out, "output dataset directory")->required();
  sim->add_option("--seed", sim_seed, "override the config seed");

  std::string cal_csv, cal_mode = "full", cal_out;
  auto* cal = app.add_subcommand("calibrate-mag", "fit soft/hard-iron calibration from mag.csv");
  cal->add_option("mag_csv", cal_csv, "raw magnetometer csv")->required();
  cal->add_option("--mode", cal_mode, "full | hard_iron");
  cal->add_option("--out", cal_out, "output magcal.cfg")->required();

  std::string run_dataset, run_config, run_out, run_mode;
  auto* run = app.add_subcommand("run", "run the sliding-window estimator on a dataset");
  run->add_option("dataset", run_dataset, "dataset directory")->required();
  run->add_option("--config", run_config, "run config file");
  run->add_option("--out", run_out, "output trajectory csv")->required();
  run->add_option("--mode", run_mode, "vio | vio_mag (overrides config)");

  std::string ev_est, ev_ref, ev_mode = "sim3", ev_out;
  std::vector<double> ev_segments;
  double ev_max_dt = 0.02;
  auto* ev = app.add_subcommand("evaluate", "trajectory ATE and yaw RPE against a reference");
  ev->add_option("est_csv", ev_est, "estimated trajectory csv")->required();
  ev->add_option("ref_csv", ev_ref, "reference trajectory csv")->required();
  ev->add_option("--mode", ev_mode, "sim3 | se3");
  ev->add_option("--segments", ev_segments, "segment lengths in meters for yaw RPE")
      ->delimiter(',');
  ev->add_option("--out", ev_out, "plot-ready RPE csv");
  ev->add_option("--max-dt", ev_max_dt, "association tolerance in seconds");

  std::string al_csv, al_column, al_out;
  auto* al = app.add_subcommand("allan", "overlapping Allan deviation of a csv column");
  al->add_option("csv", al_csv, "input csv with a 't' column")->required();
  al->add_option("--column", al_column, "column name")->required();
  al->add_option("--out", al_out, "output csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmdSimulate(sim_config, sim_out, sim_seed);
    if (cal->parsed()) return cmdCalibrateMag(cal_csv, cal_mode, cal_out);
    if (run->parsed()) return cmdRun(run_dataset, run_config, run_out, run_mode);
    if (ev->parsed()) return cmdEvaluate(ev_est, ev_ref, ev_mode, ev_segments, ev_out, ev_max_dt);
    if (al->parsed()) return cmdAllan(al_csv, al_column, al_out);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
