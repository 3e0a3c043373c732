#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imudiff/core_data.hpp"
#include "imudiff/sim.hpp"

namespace imudiff {

inline constexpr double kEffectiveTimeMin = 0.1;
inline constexpr double kEffectiveTimeMax = 10.0;

// Per-axis forward-diffusion schedule derived from sensor noise coefficients.
struct AxisSchedule {
  std::size_t T = 0;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::vector<double> t_effective;                // T entries in [0.1, 10]
  std::array<std::vector<double>, kChannels> beta;       // beta[axis][step]
  std::array<std::vector<double>, kChannels> alpha_bar;  // prod_{s<=t}(1 - beta)
  std::array<bool, kChannels> fallback{};          // axis used the linear ramp

  double alpha(std::size_t axis, std::size_t t) const { return 1.0 - beta[axis][t]; }
  void validate() const;
};

// v_i(t) = white_i^2 + rw_i^2 * t, using the per-sample white-noise std.
double cumulative_variance(const NoiseParams& params, std::size_t axis, double t);

AxisSchedule build_schedule(const NoiseParams& params, std::size_t T = 100, double beta_min = 1e-4,
                            double beta_max = 0.02);

// Expresses physical-unit coefficients in the normalized signal space.
NoiseParams normalized_noise_params(const NoiseParams& params, const NormStats& norm);

// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps, per axis.
ImuWindow q_sample(const ImuWindow& x0, std::size_t t, const AxisSchedule& schedule,
                   const ImuWindow& eps);

// Inverse of q_sample given a noise estimate.
ImuWindow predict_x0(const ImuWindow& xt, const ImuWindow& eps_hat, std::size_t t,
                     const AxisSchedule& schedule);

void to_json(nlohmann::json& j, const AxisSchedule& s);
void from_json(const nlohmann::json& j, AxisSchedule& s);

}  // namespace imudiff
