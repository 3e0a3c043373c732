#include "imudiff/allan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "imudiff/error.hpp"

namespace imudiff {

namespace {

constexpr std::size_t kSlopeWindow = 5;
constexpr double kSlopeTolerance = 0.15;
constexpr double kBiasInstabilityScale = 0.664;
constexpr double kMinSpanDecades = 2.0;
// Points with fewer difference terms are too noisy to classify or fit.
constexpr std::size_t kMinFitCount = 8;

double local_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

AvCurve compute_av(std::span<const double> channel, double rate_hz,
                   std::span<const std::size_t> cluster_sizes) {
  if (!(rate_hz > 0.0)) fail(ErrorKind::contract, "rate must be positive");
  const std::size_t n = channel.size();
  AvCurve curve;
  std::size_t previous = 0;
  std::vector<double> means;
  for (const std::size_t m : cluster_sizes) {
    if (m == 0 || m <= previous) {
      fail(ErrorKind::contract, "cluster sizes must be positive and strictly increasing");
    }
    if (2 * m > n) {
      fail(ErrorKind::insufficient_data, "cluster size " + std::to_string(m) +
                                             " exceeds half the channel length " +
                                             std::to_string(n));
    }
    previous = m;
    const std::size_t clusters = n / m;
    means.assign(clusters, 0.0);
    for (std::size_t k = 0; k < clusters; ++k) {
      double sum = 0.0;
      const double* p = channel.data() + k * m;
      for (std::size_t i = 0; i < m; ++i) sum += p[i];
      means[k] = sum / static_cast<double>(m);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < clusters; ++k) {
      const double d = means[k + 1] - means[k];
      acc += d * d;
    }
    const std::size_t terms = clusters - 1;
    curve.cluster_sizes.push_back(m);
    curve.taus.push_back(static_cast<double>(m) / rate_hz);
    curve.sigma2.push_back(0.5 * acc / static_cast<double>(terms));
    curve.cluster_counts.push_back(terms);
  }
  return curve;
}

std::vector<std::size_t> default_taus(std::size_t length, double /*rate_hz*/) {
  std::vector<std::size_t> sizes;
  const std::size_t max_size = length / 2;
  for (int k = 0;; ++k) {
    const auto m = static_cast<std::size_t>(std::llround(std::pow(10.0, k / 20.0)));
    if (m > max_size) break;
    if (sizes.empty() || m > sizes.back()) sizes.push_back(m);
  }
  return sizes;
}

AvFit fit_noise_coeffs(const AvCurve& curve) {
  if (curve.taus.size() != curve.sigma2.size() || curve.taus.size() != curve.cluster_counts.size()) {
    fail(ErrorKind::contract, "malformed Allan curve");
  }
  AvFit fit;
  if (curve.taus.empty()) fail(ErrorKind::insufficient_span, "empty Allan curve");
  if (std::all_of(curve.sigma2.begin(), curve.sigma2.end(), [](double v) { return v == 0.0; })) {
    return fit;
  }
  if (std::log10(curve.taus.back() / curve.taus.front()) < kMinSpanDecades) {
    fail(ErrorKind::insufficient_span, "Allan curve spans fewer than 2 decades of tau");
  }

  std::vector<double> log_tau, log_sigma, weight, sigma;
  for (std::size_t i = 0; i < curve.taus.size(); ++i) {
    if (curve.sigma2[i] > 0.0 && curve.cluster_counts[i] >= kMinFitCount) {
      log_tau.push_back(std::log10(curve.taus[i]));
      log_sigma.push_back(0.5 * std::log10(curve.sigma2[i]));
      weight.push_back(static_cast<double>(curve.cluster_counts[i]));
      sigma.push_back(std::sqrt(curve.sigma2[i]));
    }
  }
  if (log_tau.size() < kSlopeWindow) return fit;

  // Label each 5-point window by the canonical slope it matches (if any).
  const std::size_t windows = log_tau.size() - kSlopeWindow + 1;
  std::vector<int> label(windows, -1);
  for (std::size_t j = 0; j < windows; ++j) {
    const double s = local_slope(std::span(log_tau).subspan(j, kSlopeWindow),
                                 std::span(log_sigma).subspan(j, kSlopeWindow));
    for (std::size_t t = 0; t < kNoiseTermSlopes.size(); ++t) {
      if (std::abs(s - kNoiseTermSlopes[t]) <= kSlopeTolerance) label[j] = static_cast<int>(t);
    }
  }

  constexpr std::size_t kCenter = kSlopeWindow / 2;
  for (std::size_t t = 0; t < kNoiseTermSlopes.size(); ++t) {
    std::size_t best_start = 0, best_len = 0;
    for (std::size_t j = 0; j < windows;) {
      if (label[j] != static_cast<int>(t)) {
        ++j;
        continue;
      }
      std::size_t k = j;
      while (k < windows && label[k] == static_cast<int>(t)) ++k;
      if (k - j > best_len) {
        best_len = k - j;
        best_start = j;
      }
      j = k;
    }
    if (best_len == 0) continue;

    // Fit over the window centres of the run (disjoint between terms).
    const std::size_t lo = best_start + kCenter;
    const std::size_t hi = best_start + best_len - 1 + kCenter;
    const double slope = kNoiseTermSlopes[t];
    double wsum = 0.0, acc = 0.0, min_sigma = std::numeric_limits<double>::infinity();
    for (std::size_t i = lo; i <= hi; ++i) {
      wsum += weight[i];
      acc += weight[i] * (log_sigma[i] - slope * log_tau[i]);
      min_sigma = std::min(min_sigma, sigma[i]);
    }
    const double at_unit_tau = std::pow(10.0, acc / wsum);
    switch (static_cast<NoiseTerm>(t)) {
      case NoiseTerm::quantization: fit.quantization = at_unit_tau / std::sqrt(3.0); break;
      case NoiseTerm::arw: fit.arw = at_unit_tau; break;
      case NoiseTerm::bias_instability: fit.bias_instability = min_sigma / kBiasInstabilityScale; break;
      case NoiseTerm::rrw: fit.rrw = at_unit_tau * std::sqrt(3.0); break;
    }
    fit.present[t] = true;
    fit.fit_ranges[t] = {std::pow(10.0, log_tau[lo]), std::pow(10.0, log_tau[hi])};
  }
  return fit;
}

NoiseParams to_noise_params(const std::array<AvFit, kChannels>& fits, double rate_hz) {
  NoiseParams p;
  p.rate_hz = rate_hz;
  ChannelArray density{};
  for (std::size_t c = 0; c < kChannels; ++c) {
    density[c] = fits[c].arw;
    p.sigma_rw[c] = fits[c].rrw;
    p.bias_instability[c] = fits[c].bias_instability;
    p.quantization[c] = fits[c].quantization;
    p.sigma_b0[c] = 0.0;
  }
  p.set_white_density(density);
  return p;
}

SeriesAllan analyze_series(const ImuSeries& series) {
  if (series.size() < kMinFitSamples) {
    fail(ErrorKind::insufficient_data,
         "Allan analysis needs at least " + std::to_string(kMinFitSamples) + " samples, got " +
             std::to_string(series.size()));
  }
  const auto sizes = default_taus(series.size(), series.sample_rate_hz());
  SeriesAllan out;
  for (std::size_t c = 0; c < kChannels; ++c) {
    out.curves[c] = compute_av(series.channel(c), series.sample_rate_hz(), sizes);
    out.fits[c] = fit_noise_coeffs(out.curves[c]);
  }
  return out;
}

void to_json(nlohmann::json& j, const AvFit& f) {
  j = nlohmann::json::object();
  const std::array<double, 4> values = {f.quantization, f.arw, f.bias_instability, f.rrw};
  for (std::size_t t = 0; t < 4; ++t) {
    nlohmann::json term = {{"value", values[t]}, {"present", f.present[t]}};
    if (f.present[t]) term["fit_range_s"] = {f.fit_ranges[t].tau_lo, f.fit_ranges[t].tau_hi};
    j[kNoiseTermNames[t]] = term;
  }
}

void to_json(nlohmann::json& j, const AvCurve& c) {
  j = nlohmann::json{{"tau", c.taus}, {"sigma2", c.sigma2}, {"count", c.cluster_counts}};
}

void save_curves_csv(const std::array<AvCurve, kChannels>& curves,
                     const std::filesystem::path& path) {
  std::string out = "tau";
  for (const auto name : kChannelNames) out += ",sigma2_" + std::string(name);
  out += ",count\n";
  char buf[64];
  const std::size_t rows = curves[0].taus.size();
  for (std::size_t i = 0; i < rows; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", curves[0].taus[i]);
    out += buf;
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof(buf), ",%.17g", c.sigma2.at(i));
      out += buf;
    }
    out += "," + std::to_string(curves[0].cluster_counts[i]) + "\n";
  }
  write_text_file(path, out);
}

void save_curves_svg(const std::array<AvCurve, kChannels>& curves,
                     const std::filesystem::path& path) {
  constexpr double kW = 720, kH = 480, kMargin = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.taus.size(); ++i) {
      if (c.sigma2[i] <= 0.0) continue;
      x0 = std::min(x0, std::log10(c.taus[i]));
      x1 = std::max(x1, std::log10(c.taus[i]));
      y0 = std::min(y0, 0.5 * std::log10(c.sigma2[i]));
      y1 = std::max(y1, 0.5 * std::log10(c.sigma2[i]));
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  x0 = std::floor(x0), x1 = std::ceil(x1), y0 = std::floor(y0), y1 = std::ceil(y1);
  auto px = [&](double lx) { return kMargin + (lx - x0) / (x1 - x0) * (kW - 2 * kMargin); };
  auto py = [&](double ly) { return kH - kMargin - (ly - y0) / (y1 - y0) * (kH - 2 * kMargin); };

  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"11\">\n",
                kW, kH);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (double d = x0; d <= x1 + 1e-9; d += 1) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">1e%.0f</text>\n",
                  px(d), py(y0), px(d), py(y1), px(d), py(y0) + 16, d);
    svg += buf;
  }
  for (double d = y0; d <= y1 + 1e-9; d += 1) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">1e%.0f</text>\n",
                  px(x0), py(d), px(x1), py(d), px(x0) - 6, py(d) + 4, d);
    svg += buf;
  }
  static constexpr std::array<const char*, kChannels> kColors = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                                                 "#d62728", "#9467bd", "#8c564b"};
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    svg += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(kColors[ch]) +
           "\" points=\"";
    const auto& c = curves[ch];
    for (std::size_t i = 0; i < c.taus.size(); ++i) {
      if (c.sigma2[i] <= 0.0) continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(std::log10(c.taus[i])),
                    py(0.5 * std::log10(c.sigma2[i])));
      svg += buf;
    }
    svg += "\"/>\n";
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" fill=\"%s\">%s</text>\n",
                  kW - kMargin + 8, kMargin + 14.0 * static_cast<double>(ch), kColors[ch],
                  std::string(kChannelNames[ch]).c_str());
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">tau (s)</text>\n"
                "<text x=\"14\" y=\"%.1f\" transform=\"rotate(-90 14 %.1f)\" "
                "text-anchor=\"middle\">Allan deviation</text>\n</svg>\n",
                kW / 2, kH - 12, kH / 2, kH / 2);
  svg += buf;
  write_text_file(path, svg);
}

}  // namespace imudiff
