#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imudiff/core_data.hpp"
#include "imudiff/sim.hpp"

namespace imudiff {

// Non-overlapping Allan variance curve.
struct AvCurve {
  std::vector<double> taus;                 // s, strictly increasing
  std::vector<double> sigma2;               // signal units^2
  std::vector<std::size_t> cluster_counts;  // number of successive-difference terms
  std::vector<std::size_t> cluster_sizes;   // samples per cluster
};

struct FitRange {
  double tau_lo = 0.0;
  double tau_hi = 0.0;
};

enum class NoiseTerm : std::size_t { quantization = 0, arw, bias_instability, rrw };
inline constexpr std::array<const char*, 4> kNoiseTermNames = {"quantization", "arw",
                                                               "bias_instability", "rrw"};
// Log-log slopes of sigma(tau) that identify each term.
inline constexpr std::array<double, 4> kNoiseTermSlopes = {-1.0, -0.5, 0.0, 0.5};

struct AvFit {
  double arw = 0.0;               // N: sigma(tau) = N / sqrt(tau)
  double rrw = 0.0;               // K: sigma(tau) = K * sqrt(tau / 3)
  double bias_instability = 0.0;  // B = min sigma / 0.664 over the flat region
  double quantization = 0.0;      // Q: sigma(tau) = Q * sqrt(3) / tau
  std::array<bool, 4> present{};  // indexed by NoiseTerm
  std::array<FitRange, 4> fit_ranges{};

  bool has(NoiseTerm t) const { return present[static_cast<std::size_t>(t)]; }
};

AvCurve compute_av(std::span<const double> channel, double rate_hz,
                   std::span<const std::size_t> cluster_sizes);

// Log-spaced (~20 per decade) deduplicated cluster sizes in [1, length / 2].
std::vector<std::size_t> default_taus(std::size_t length, double rate_hz);

AvFit fit_noise_coeffs(const AvCurve& curve);

NoiseParams to_noise_params(const std::array<AvFit, kChannels>& fits, double rate_hz);

// Shortest series whose default cluster sizes span the 2 decades a fit needs.
inline constexpr std::size_t kMinFitSamples = 200;

// Convenience: per-channel default curve + fit for a whole series.
struct SeriesAllan {
  std::array<AvCurve, kChannels> curves;
  std::array<AvFit, kChannels> fits;
};
SeriesAllan analyze_series(const ImuSeries& series);

void to_json(nlohmann::json& j, const AvFit& f);
void to_json(nlohmann::json& j, const AvCurve& c);
// One row per tau: tau,sigma2_gx,...,sigma2_az,count
void save_curves_csv(const std::array<AvCurve, kChannels>& curves, const std::filesystem::path& path);
// Self-contained log-log plot of sigma(tau) for all channels.
void save_curves_svg(const std::array<AvCurve, kChannels>& curves, const std::filesystem::path& path);

}  // namespace imudiff
