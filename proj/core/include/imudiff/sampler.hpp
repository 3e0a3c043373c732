#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "imudiff/core_data.hpp"
#include "imudiff/denoiser.hpp"
#include "imudiff/schedule.hpp"

namespace imudiff {

enum class StitchMode { non_overlapping, overlap_average };

StitchMode stitch_mode_from_string(const std::string& s);
std::string to_string(StitchMode mode);

struct SampleConfig {
  std::uint64_t seed = 0;
  StitchMode stitch_mode = StitchMode::non_overlapping;
  std::size_t stride = 0;  // overlap-average only; 0 means L / 2
  std::size_t batch = 64;  // windows sampled together

  void validate(std::size_t L) const;
};

// One ancestral step on raw values laid out [B, 6, L]:
//   mu = (x_t - beta / sqrt(1 - abar) * eps_hat) / sqrt(alpha)
//   x_{t-1} = mu + sigma_tilde * z, sigma_tilde^2 = beta (1 - abar_{t-1}) / (1 - abar_t)
// z is ignored (may be empty) at t = 0.
std::vector<double> reverse_step(std::span<const double> x_t, std::span<const double> eps_hat,
                                 std::size_t t, const AxisSchedule& schedule, std::size_t L,
                                 std::span<const double> z);

double posterior_variance(const AxisSchedule& schedule, std::size_t axis, std::size_t t);

// Network-driven step for a batch; one generator per batch element.
std::vector<double> p_sample_step(std::span<const double> x_t, std::size_t t,
                                  std::span<const ImuWindow> condition,
                                  const DenoiserCheckpoint& ckpt,
                                  std::span<std::mt19937_64> rngs);

// Full reverse chain from x_T ~ N(0, I) for each normalized condition window.
std::vector<ImuWindow> generate_windows(std::span<const ImuWindow> condition,
                                        const DenoiserCheckpoint& ckpt,
                                        std::span<const std::uint64_t> seeds);
ImuWindow generate_window(const ImuWindow& condition, const DenoiserCheckpoint& ckpt,
                          std::uint64_t seed);

struct GeneratedSeries {
  ImuSeries series;
  std::size_t windows = 0;
  std::size_t passthrough_samples = 0;
  std::vector<std::string> warnings;
};

// Normalizes with the checkpoint statistics, samples every window (seed per
// window = derive_seed(cfg.seed, window_index)), denormalizes and stitches.
GeneratedSeries generate_series(const ImuSeries& lowcost, const DenoiserCheckpoint& ckpt,
                                const SampleConfig& cfg);

}  // namespace imudiff
