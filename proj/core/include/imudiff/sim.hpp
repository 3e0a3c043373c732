#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imudiff/core_data.hpp"
#include "imudiff/nav_eval.hpp"

namespace imudiff {

// Per-axis stochastic coefficients in SI units.
//   white_density    units/sqrt(s)   (angle/velocity random walk)
//   white_per_sample units           (= white_density * sqrt(rate_hz))
//   sigma_rw         units/sqrt(s)   (bias random-walk intensity)
//   bias_instability units
//   quantization     units
//   sigma_b0         units           (initial bias offset std)
struct NoiseParams {
  double rate_hz = 200.0;
  ChannelArray white_density{};
  ChannelArray white_per_sample{};
  ChannelArray sigma_rw{};
  ChannelArray bias_instability{};
  ChannelArray quantization{};
  ChannelArray sigma_b0{};

  // Sets white_density and derives white_per_sample at rate_hz.
  void set_white_density(const ChannelArray& density);
  void validate() const;
};

struct SensorSpec {
  std::string name;
  double gyro_bias = 0.0;   // rad/s
  double gyro_arw = 0.0;    // rad/sqrt(s)
  double accel_bias = 0.0;  // m/s^2
  double rate_hz = 200.0;

  void validate() const;
};

struct SensorPair {
  SensorSpec reference;  // high grade
  SensorSpec lowcost;    // MEMS
};

// Navigation-grade (SPAN-ISA-100C) and MEMS (HGuide I300) datasheet values in SI.
SensorPair builtin_specs();

// Correlation time used to turn a bias-instability figure into a bias random-walk intensity.
inline constexpr double kBiasCorrelationTimeS = 100.0;

// Datasheet -> stochastic model. Gyro white noise is the ARW; accelerometer white
// noise keeps the gyro's density-to-bias ratio of the same sensor; biases seed
// sigma_b0 and bias_instability; sigma_rw = bias / sqrt(kBiasCorrelationTimeS).
NoiseParams noise_params_from_spec(const SensorSpec& spec);

enum class TrajectoryKind { static_pose, constant_rate_turn, figure_eight, piecewise_dynamic };

struct TrajectoryProfile {
  TrajectoryKind kind = TrajectoryKind::static_pose;
  double duration_s = 60.0;
  std::map<std::string, double> parameters;
  std::uint64_t seed = 0;

  double param(const std::string& name, double fallback) const;
  void validate() const;
};

TrajectoryKind trajectory_kind_from_string(const std::string& s);
std::string to_string(TrajectoryKind kind);

struct TruthData {
  ImuSeries imu;
  Trajectory nav;
};

TruthData generate_truth(const TrajectoryProfile& profile, double rate_hz);

// out = clean + b(t) + n(t); b_0 ~ N(0, sigma_b0^2), b_k = b_{k-1} + N(0, sigma_rw^2 dt),
// n ~ N(0, white_per_sample^2). Deterministic in (clean, params, seed).
ImuSeries corrupt(const ImuSeries& clean, const NoiseParams& params, std::uint64_t seed);

struct PairedSeries {
  TruthData truth;
  ImuSeries reference;
  ImuSeries lowcost;
  NoiseParams reference_params;
  NoiseParams lowcost_params;
};

// One truth trajectory corrupted by both sensors with seed-derived streams.
PairedSeries simulate_pair(const TrajectoryProfile& profile, const SensorPair& specs,
                           std::uint64_t seed);

struct PairedDataset {
  TruthData truth;
  ImuSeries reference;
  ImuSeries lowcost;
  NoiseParams reference_params;
  NoiseParams lowcost_params;
  std::vector<ImuWindow> windows_lowcost;    // normalized
  std::vector<ImuWindow> windows_reference;  // normalized
  NormStats norm;                            // computed from the reference windows
};

PairedDataset make_paired_dataset(const TrajectoryProfile& profile, const SensorPair& specs,
                                  const WindowingConfig& windowing, std::uint64_t seed);

// Same pairing for already-generated series.
void window_pair(const ImuSeries& lowcost, const ImuSeries& reference,
                 const WindowingConfig& windowing, const NormStats* norm,
                 std::vector<ImuWindow>& windows_lowcost,
                 std::vector<ImuWindow>& windows_reference, NormStats& norm_out);

// Seeds for independent streams derived from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

void to_json(nlohmann::json& j, const NoiseParams& p);
void from_json(const nlohmann::json& j, NoiseParams& p);
void to_json(nlohmann::json& j, const SensorSpec& s);
void from_json(const nlohmann::json& j, SensorSpec& s);
void to_json(nlohmann::json& j, const TrajectoryProfile& p);
void from_json(const nlohmann::json& j, TrajectoryProfile& p);

NoiseParams load_noise_params(const std::filesystem::path& path);
void save_noise_params(const NoiseParams& p, const std::filesystem::path& path);

}  // namespace imudiff
