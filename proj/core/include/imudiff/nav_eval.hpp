#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json_fwd.hpp>

#include "imudiff/core_data.hpp"

namespace imudiff {

inline constexpr double kGravity = 9.80665;

// Position/velocity in a flat local E-N-U frame, attitude as body->local unit quaternion.
struct NavState {
  double time_s = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
};

using Trajectory = std::vector<NavState>;

struct Ypr {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  bool gimbal_lock = false;
};

// Z-Y-X intrinsic: q = Rz(yaw) * Ry(pitch) * Rx(roll).
Eigen::Quaterniond ypr_to_attitude(double yaw, double pitch, double roll);
Ypr attitude_to_ypr(const Eigen::Quaterniond& q);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

// Strapdown dead reckoning in a flat, non-rotating frame. One output state per
// input sample; the first is `initial` stamped with the series start time.
Trajectory dead_reckon(const ImuSeries& imu, const NavState& initial, bool gravity_on = true);

struct ErrorSummary {
  double rms = 0.0;
  double max = 0.0;
  double cep95 = 0.0;
};

inline constexpr std::array<const char*, 6> kNavComponents = {"E", "N", "U", "yaw", "pitch", "roll"};

// Per component E, N, U (m) and yaw, pitch, roll (rad).
struct NavErrorStats {
  std::array<ErrorSummary, 6> components{};

  const ErrorSummary& east() const { return components[0]; }
  const ErrorSummary& north() const { return components[1]; }
  const ErrorSummary& up() const { return components[2]; }
};

// Signed per-sample errors (solution - truth), angles wrapped.
std::vector<std::array<double, 6>> error_series(const Trajectory& solution, const Trajectory& truth);
NavErrorStats error_stats(const Trajectory& solution, const Trajectory& truth);

// Linear interpolation between order statistics at rank p*(n-1).
double percentile_linear(std::vector<double> values, double p);

// RMS of the horizontal (E, N) position error norm.
double horizontal_rms(const Trajectory& solution, const Trajectory& truth);

std::array<double, kChannels> rmse_per_axis(const ImuSeries& a, const ImuSeries& b);

// 100 * (baseline - candidate) / baseline; 0 when the baseline is 0.
double improvement_percent(double baseline, double candidate);

struct NavComparison {
  NavErrorStats baseline;
  NavErrorStats candidate;
};

void to_json(nlohmann::json& j, const NavErrorStats& s);
nlohmann::json comparison_json(const NavComparison& cmp);
// Text table laid out like a RMS/MAX/CEP95 comparison of two solutions.
std::string format_comparison_table(const NavComparison& cmp, const std::string& baseline_name,
                                    const std::string& candidate_name);

// CSV columns t,E,N,U,yaw,pitch,roll,vE,vN,vU (angles in rad). The loader
// accepts files without the velocity columns.
void save_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory_csv(const std::filesystem::path& path);
void save_error_series_csv(const Trajectory& solution, const Trajectory& truth,
                           const std::filesystem::path& path);
// Horizontal position error norm against time, one line per named solution.
void save_horizontal_error_svg(const std::vector<std::pair<std::string, Trajectory>>& solutions,
                               const Trajectory& truth, const std::filesystem::path& path);

}  // namespace imudiff
