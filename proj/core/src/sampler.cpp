#include "imudiff/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "imudiff/error.hpp"
#include "imudiff/sim.hpp"

namespace imudiff {

StitchMode stitch_mode_from_string(const std::string& s) {
  if (s == "non-overlapping") return StitchMode::non_overlapping;
  if (s == "overlap-average") return StitchMode::overlap_average;
  fail(ErrorKind::config,
       "unknown stitch mode '" + s + "' (expected non-overlapping or overlap-average)");
}

std::string to_string(StitchMode mode) {
  return mode == StitchMode::non_overlapping ? "non-overlapping" : "overlap-average";
}

void SampleConfig::validate(std::size_t L) const {
  if (batch == 0) fail(ErrorKind::config, "sampler: batch must be >= 1");
  if (stitch_mode == StitchMode::overlap_average && stride > L) {
    fail(ErrorKind::config, "sampler: overlap stride must be <= L");
  }
}

double posterior_variance(const AxisSchedule& s, std::size_t axis, std::size_t t) {
  if (t == 0) return 0.0;
  const double abar = s.alpha_bar[axis][t];
  const double abar_prev = s.alpha_bar[axis][t - 1];
  return s.beta[axis][t] * (1.0 - abar_prev) / (1.0 - abar);
}

std::vector<double> reverse_step(std::span<const double> x_t, std::span<const double> eps_hat,
                                 std::size_t t, const AxisSchedule& s, std::size_t L,
                                 std::span<const double> z) {
  if (t >= s.T) fail(ErrorKind::contract, "reverse step index out of range");
  if (x_t.size() != eps_hat.size() || L == 0 || x_t.size() % (kChannels * L) != 0 ||
      (t > 0 && z.size() != x_t.size())) {
    fail(ErrorKind::contract, "reverse step: buffer sizes do not match [B, 6, L]");
  }
  const std::size_t B = x_t.size() / (kChannels * L);
  std::vector<double> out(x_t.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double beta = s.beta[c][t];
      const double coef = beta / std::sqrt(1.0 - s.alpha_bar[c][t]);
      const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
      const double sigma = std::sqrt(posterior_variance(s, c, t));
      for (std::size_t k = 0; k < L; ++k) {
        const std::size_t i = (b * kChannels + c) * L + k;
        out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
        if (t > 0) out[i] += sigma * z[i];
      }
    }
  }
  return out;
}

std::vector<double> p_sample_step(std::span<const double> x_t, std::size_t t,
                                  std::span<const ImuWindow> condition,
                                  const DenoiserCheckpoint& ckpt,
                                  std::span<std::mt19937_64> rngs) {
  const std::size_t B = condition.size();
  const std::size_t L = ckpt.config.window_L;
  if (rngs.size() != B || x_t.size() != B * kChannels * L) {
    fail(ErrorKind::contract, "p_sample_step: batch sizes disagree");
  }
  DenoiserWeights weights = ckpt.weights;  // eval mode reads only
  const std::vector<std::size_t> steps(B, t);
  const ad::Tensor eps_hat = denoiser_forward(
      ad::Tensor::from({B, kChannels, L}, {x_t.begin(), x_t.end()}), steps,
      windows_to_tensor(condition), weights, ckpt.config, Mode::eval);
  std::vector<double> z;
  if (t > 0) {
    z.resize(x_t.size());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < kChannels * L; ++i) z[b * kChannels * L + i] = normal(rngs[b]);
    }
  }
  return reverse_step(x_t, eps_hat.values(), t, ckpt.schedule, L, z);
}

std::vector<ImuWindow> generate_windows(std::span<const ImuWindow> condition,
                                        const DenoiserCheckpoint& ckpt,
                                        std::span<const std::uint64_t> seeds) {
  const std::size_t B = condition.size();
  const std::size_t L = ckpt.config.window_L;
  if (seeds.size() != B) fail(ErrorKind::contract, "generate_windows: one seed per window");
  for (const auto& w : condition) {
    if (w.length != L) {
      fail(ErrorKind::contract, "condition window length " + std::to_string(w.length) +
                                    " does not match checkpoint window_L " + std::to_string(L));
    }
  }
  if (B == 0) return {};
  std::vector<std::mt19937_64> rngs;
  for (auto s : seeds) rngs.emplace_back(s);
  std::vector<double> x(B * kChannels * L);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < kChannels * L; ++i) x[b * kChannels * L + i] = normal(rngs[b]);
  }
  for (std::size_t t = ckpt.schedule.T; t-- > 0;) {
    x = p_sample_step(x, t, condition, ckpt, rngs);
    if (!std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); })) {
      fail(ErrorKind::numerical, "non-finite value while sampling at diffusion step " +
                                     std::to_string(t));
    }
  }
  std::vector<ImuWindow> out;
  for (std::size_t b = 0; b < B; ++b) {
    ImuWindow w(L);
    w.window_index = condition[b].window_index;
    w.source_offset = condition[b].source_offset;
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(b * kChannels * L), kChannels * L,
                w.data.begin());
    out.push_back(std::move(w));
  }
  return out;
}

ImuWindow generate_window(const ImuWindow& condition, const DenoiserCheckpoint& ckpt,
                          std::uint64_t seed) {
  const std::uint64_t seeds[] = {seed};
  return generate_windows({&condition, 1}, ckpt, seeds).front();
}

GeneratedSeries generate_series(const ImuSeries& lowcost, const DenoiserCheckpoint& ckpt,
                                const SampleConfig& cfg) {
  const std::size_t L = ckpt.config.window_L;
  cfg.validate(L);
  const std::size_t N = lowcost.size();
  if (N < L) {
    fail(ErrorKind::insufficient_data, "series has " + std::to_string(N) +
                                           " samples, the checkpoint needs at least " +
                                           std::to_string(L));
  }
  const std::size_t stride =
      cfg.stitch_mode == StitchMode::non_overlapping ? L : (cfg.stride == 0 ? std::max<std::size_t>(1, L / 2) : cfg.stride);
  const auto raw = make_windows(lowcost, {L, stride});
  const auto normalized = normalize_all(raw, ckpt.norm);

  ChannelData acc;
  std::vector<double> weight(N, 0.0);
  for (auto& ch : acc) ch.assign(N, 0.0);
  for (std::size_t begin = 0; begin < normalized.size(); begin += cfg.batch) {
    const std::size_t end = std::min(normalized.size(), begin + cfg.batch);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = begin; i < end; ++i) seeds.push_back(derive_seed(cfg.seed, i));
    const auto gen = generate_windows(
        std::span<const ImuWindow>(normalized).subspan(begin, end - begin), ckpt, seeds);
    for (const auto& g : gen) {
      const ImuWindow phys = denormalize(g, ckpt.norm);
      for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t k = 0; k < L; ++k) acc[c][phys.source_offset + k] += phys(c, k);
      }
      for (std::size_t k = 0; k < L; ++k) weight[phys.source_offset + k] += 1.0;
    }
  }
  GeneratedSeries result;
  result.windows = normalized.size();
  for (std::size_t k = 0; k < N; ++k) {
    if (weight[k] == 0.0) {
      ++result.passthrough_samples;
      for (std::size_t c = 0; c < kChannels; ++c) acc[c][k] = lowcost.at(c, k);
    } else if (weight[k] != 1.0) {
      for (std::size_t c = 0; c < kChannels; ++c) acc[c][k] /= weight[k];
    }
  }
  if (result.passthrough_samples > 0) {
    result.warnings.push_back(std::to_string(result.passthrough_samples) +
                              " trailing samples not covered by a full window were passed "
                              "through unmodified");
  }
  result.series = ImuSeries(lowcost.sample_rate_hz(), lowcost.start_time_s(), std::move(acc));
  return result;
}

}  // namespace imudiff
