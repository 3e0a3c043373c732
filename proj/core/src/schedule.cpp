#include "imudiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "imudiff/error.hpp"

namespace imudiff {

namespace {

constexpr double kDegenerateRelative = 1e-15;
constexpr double kMinAlphaBar = 1e-12;

void check_step(std::size_t t, const AxisSchedule& s) {
  if (t >= s.T) {
    fail(ErrorKind::contract,
         "diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + ")");
  }
}

void check_same_shape(const ImuWindow& a, const ImuWindow& b) {
  if (a.length != b.length || a.data.size() != b.data.size()) {
    fail(ErrorKind::contract, "window shape mismatch: 6x" + std::to_string(a.length) + " vs 6x" +
                                  std::to_string(b.length));
  }
}

}  // namespace

void AxisSchedule::validate() const {
  if (T < 2 || t_effective.size() != T) fail(ErrorKind::contract, "schedule: bad step count");
  for (std::size_t i = 0; i < kChannels; ++i) {
    if (beta[i].size() != T || alpha_bar[i].size() != T) {
      fail(ErrorKind::contract, "schedule: axis arrays must have T entries");
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (!(beta[i][t] > 0.0 && beta[i][t] < 1.0)) {
        fail(ErrorKind::contract, "schedule: beta outside (0, 1)");
      }
    }
  }
}

double cumulative_variance(const NoiseParams& params, std::size_t axis, double t) {
  const double white = params.white_per_sample.at(axis);
  const double rw = params.sigma_rw.at(axis);
  return white * white + rw * rw * t;
}

AxisSchedule build_schedule(const NoiseParams& params, std::size_t T, double beta_min,
                            double beta_max) {
  if (T < 2) fail(ErrorKind::config, "schedule needs T >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    fail(ErrorKind::config, "schedule needs 0 < beta_min < beta_max < 1");
  }
  AxisSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.t_effective.resize(T);
  const double span = kEffectiveTimeMax - kEffectiveTimeMin;
  for (std::size_t k = 0; k < T; ++k) {
    s.t_effective[k] =
        kEffectiveTimeMin + span * static_cast<double>(k) / static_cast<double>(T - 1);
  }
  for (std::size_t i = 0; i < kChannels; ++i) {
    std::vector<double> v(T);
    for (std::size_t k = 0; k < T; ++k) v[k] = cumulative_variance(params, i, s.t_effective[k]);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double vmin = *lo, vmax = *hi;
    s.fallback[i] = (vmax - vmin) <= kDegenerateRelative * vmax;
    auto& beta = s.beta[i];
    beta.resize(T);
    for (std::size_t k = 0; k < T; ++k) {
      const double r = s.fallback[i] ? static_cast<double>(k) / static_cast<double>(T - 1)
                                     : (v[k] - vmin) / (vmax - vmin);
      // Lerp form keeps both endpoints exact.
      beta[k] = beta_min * (1.0 - r) + beta_max * r;
    }
    auto& abar = s.alpha_bar[i];
    abar.resize(T);
    double prod = 1.0;
    for (std::size_t k = 0; k < T; ++k) {
      prod *= 1.0 - beta[k];
      abar[k] = prod;
    }
  }
  return s;
}

NoiseParams normalized_noise_params(const NoiseParams& params, const NormStats& norm) {
  norm.validate();
  NoiseParams out = params;
  for (std::size_t c = 0; c < kChannels; ++c) {
    const double inv = 1.0 / norm.std[c];
    out.white_density[c] *= inv;
    out.white_per_sample[c] *= inv;
    out.sigma_rw[c] *= inv;
    out.bias_instability[c] *= inv;
    out.quantization[c] *= inv;
    out.sigma_b0[c] *= inv;
  }
  return out;
}

ImuWindow q_sample(const ImuWindow& x0, std::size_t t, const AxisSchedule& schedule,
                   const ImuWindow& eps) {
  check_step(t, schedule);
  check_same_shape(x0, eps);
  ImuWindow out = x0;
  for (std::size_t i = 0; i < kChannels; ++i) {
    const double a = std::sqrt(schedule.alpha_bar[i][t]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[i][t]);
    const auto src = x0.channel(i);
    const auto noise = eps.channel(i);
    auto dst = out.channel(i);
    for (std::size_t k = 0; k < x0.length; ++k) dst[k] = a * src[k] + b * noise[k];
  }
  return out;
}

ImuWindow predict_x0(const ImuWindow& xt, const ImuWindow& eps_hat, std::size_t t,
                     const AxisSchedule& schedule) {
  check_step(t, schedule);
  check_same_shape(xt, eps_hat);
  ImuWindow out = xt;
  for (std::size_t i = 0; i < kChannels; ++i) {
    const double abar = schedule.alpha_bar[i][t];
    if (abar < kMinAlphaBar) {
      fail(ErrorKind::numerical, "alpha_bar below 1e-12 on axis " + std::to_string(i) +
                                     " at step " + std::to_string(t));
    }
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    const auto src = xt.channel(i);
    const auto noise = eps_hat.channel(i);
    auto dst = out.channel(i);
    for (std::size_t k = 0; k < xt.length; ++k) dst[k] = (src[k] - b * noise[k]) / a;
  }
  return out;
}

void to_json(nlohmann::json& j, const AxisSchedule& s) {
  j = nlohmann::json{{"schema_version", 1},   {"T", s.T},
                     {"beta_min", s.beta_min}, {"beta_max", s.beta_max},
                     {"t_effective", s.t_effective}, {"beta", s.beta},
                     {"alpha_bar", s.alpha_bar},     {"fallback", s.fallback}};
}

void from_json(const nlohmann::json& j, AxisSchedule& s) {
  j.at("T").get_to(s.T);
  j.at("beta_min").get_to(s.beta_min);
  j.at("beta_max").get_to(s.beta_max);
  j.at("t_effective").get_to(s.t_effective);
  j.at("beta").get_to(s.beta);
  j.at("alpha_bar").get_to(s.alpha_bar);
  j.at("fallback").get_to(s.fallback);
  s.validate();
}

}  // namespace imudiff
