#include "imudiff/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "imudiff/error.hpp"

namespace imudiff {

namespace {

constexpr std::string_view kCsvHeader = "t,gx,gy,gz,ax,ay,az";
constexpr double kTimestampTolerance = 1e-6;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_double(std::string_view field, double& out) {
  field = trim(field);
  if (field.empty()) return false;
  if (field.front() == '+') field.remove_prefix(1);
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, out);
  return ec == std::errc{} && ptr == end && std::isfinite(out);
}

void append_number(std::string& out, double v, std::chars_format fmt, int precision) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, fmt, precision);
  if (ec != std::errc{}) fail(ErrorKind::format, "cannot format value");
  out.append(buf, ptr);
}

}  // namespace

ImuSeries::ImuSeries(double sample_rate_hz, double start_time_s, ChannelData channels)
    : sample_rate_hz_(sample_rate_hz), start_time_s_(start_time_s), channels_(std::move(channels)) {
  if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_)) {
    fail(ErrorKind::contract, "sample rate must be positive and finite");
  }
  if (!std::isfinite(start_time_s_)) fail(ErrorKind::contract, "start time must be finite");
  const std::size_t n = channels_[0].size();
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (channels_[c].size() != n) {
      fail(ErrorKind::contract, "channel " + std::string(kChannelNames[c]) + " has length " +
                                    std::to_string(channels_[c].size()) + ", expected " +
                                    std::to_string(n));
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!std::isfinite(channels_[c][k])) {
        fail(ErrorKind::contract, "non-finite value in channel " + std::string(kChannelNames[c]) +
                                      " at sample " + std::to_string(k));
      }
    }
  }
}

ImuSeries ImuSeries::slice(std::size_t offset, std::size_t count) const {
  if (offset + count > size()) {
    fail(ErrorKind::contract, "slice [" + std::to_string(offset) + ", " +
                                  std::to_string(offset + count) + ") exceeds series length " +
                                  std::to_string(size()));
  }
  ChannelData out;
  for (std::size_t c = 0; c < kChannels; ++c) {
    out[c].assign(channels_[c].begin() + static_cast<std::ptrdiff_t>(offset),
                  channels_[c].begin() + static_cast<std::ptrdiff_t>(offset + count));
  }
  return ImuSeries(sample_rate_hz_, time(offset), std::move(out));
}

ImuWindow::ImuWindow(std::size_t length_L) : data(kChannels * length_L, 0.0), length(length_L) {}

void NormStats::validate() const {
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!(std::isfinite(mean[c]) && std::isfinite(std[c]) && std[c] > 0.0)) {
      fail(ErrorKind::contract,
           "invalid normalization statistics for channel " + std::string(kChannelNames[c]));
    }
  }
}

void WindowingConfig::validate() const {
  if (length_L < 2) fail(ErrorKind::config, "window length must be at least 2");
  if (stride_S < 1 || stride_S > length_L) {
    fail(ErrorKind::config, "window stride must lie in [1, length]");
  }
}

ImuSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());

  std::vector<double> times;
  ChannelData channels;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (!header_seen) {
      std::string compact;
      for (char ch : body) {
        if (ch != ' ' && ch != '\t') compact.push_back(ch);
      }
      if (compact != kCsvHeader) {
        fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": expected header '" + std::string(kCsvHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    std::array<double, kChannels + 1> row{};
    std::size_t field = 0;
    std::size_t start = 0;
    bool ok = true;
    while (ok) {
      const auto comma = body.find(',', start);
      const auto token = body.substr(start, comma == std::string_view::npos ? body.size() - start
                                                                            : comma - start);
      if (field >= row.size() || !parse_double(token, row[field])) {
        ok = false;
        break;
      }
      ++field;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!ok || field != row.size()) {
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) +
                                 ": malformed row (expected 7 numeric fields)");
    }
    times.push_back(row[0]);
    for (std::size_t c = 0; c < kChannels; ++c) channels[c].push_back(row[c + 1]);
  }
  if (!header_seen) fail(ErrorKind::parse, path.string() + ": missing header");
  if (times.size() < 2) {
    fail(ErrorKind::insufficient_data,
         path.string() + ": need at least 2 rows, found " + std::to_string(times.size()));
  }

  std::vector<double> deltas(times.size() - 1);
  for (std::size_t k = 1; k < times.size(); ++k) deltas[k - 1] = times[k] - times[k - 1];
  std::vector<double> sorted = deltas;
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  double median = *mid;
  if (sorted.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(sorted.begin(), mid));
  }
  if (!(median > 0.0)) fail(ErrorKind::format, path.string() + ": timestamps not increasing");
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    if (std::abs(deltas[k] - median) > kTimestampTolerance * median) {
      fail(ErrorKind::format, path.string() + ": non-uniform timestamp spacing at data row " +
                                  std::to_string(k + 2));
    }
  }
  return ImuSeries(1.0 / median, times.front(), std::move(channels));
}

void save_csv(const ImuSeries& series, const std::filesystem::path& path) {
  if (series.empty()) fail(ErrorKind::insufficient_data, "refusing to write an empty series");
  std::string out;
  out.reserve(series.size() * 7 * 24 + 32);
  out.append(kCsvHeader);
  out.push_back('\n');
  for (std::size_t k = 0; k < series.size(); ++k) {
    append_number(out, series.time(k), std::chars_format::fixed, 9);
    for (std::size_t c = 0; c < kChannels; ++c) {
      out.push_back(',');
      append_number(out, series.at(c, k), std::chars_format::general, 17);
    }
    out.push_back('\n');
  }
  write_text_file(path, out);
}

std::size_t window_count(std::size_t series_length, const WindowingConfig& cfg) {
  cfg.validate();
  if (series_length < cfg.length_L) return 0;
  return (series_length - cfg.length_L) / cfg.stride_S + 1;
}

std::vector<ImuWindow> make_windows(const ImuSeries& series, const WindowingConfig& cfg) {
  cfg.validate();
  if (series.size() < cfg.length_L) {
    fail(ErrorKind::insufficient_data, "series of length " + std::to_string(series.size()) +
                                           " is shorter than window length " +
                                           std::to_string(cfg.length_L));
  }
  const std::size_t count = window_count(series.size(), cfg);
  std::vector<ImuWindow> windows;
  windows.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    ImuWindow win(cfg.length_L);
    win.window_index = w;
    win.source_offset = w * cfg.stride_S;
    for (std::size_t c = 0; c < kChannels; ++c) {
      const auto src = series.channel(c).subspan(win.source_offset, cfg.length_L);
      std::copy(src.begin(), src.end(), win.channel(c).begin());
    }
    windows.push_back(std::move(win));
  }
  return windows;
}

NormStats compute_norm_stats(std::span<const ImuWindow> windows) {
  if (windows.empty()) fail(ErrorKind::insufficient_data, "no windows for normalization");
  NormStats stats;
  for (std::size_t c = 0; c < kChannels; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& w : windows) {
      for (double v : w.channel(c)) sum += v;
      count += w.length;
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const auto& w : windows) {
      for (double v : w.channel(c)) sq += (v - mean) * (v - mean);
    }
    const double var = sq / static_cast<double>(count);
    if (!(var > 0.0)) {
      fail(ErrorKind::degenerate_channel,
           "channel " + std::string(kChannelNames[c]) + " has zero variance");
    }
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(var);
  }
  return stats;
}

ImuWindow normalize(const ImuWindow& w, const NormStats& s) {
  ImuWindow out = w;
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (double& v : out.channel(c)) v = (v - s.mean[c]) / s.std[c];
  }
  return out;
}

ImuWindow denormalize(const ImuWindow& w, const NormStats& s) {
  ImuWindow out = w;
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (double& v : out.channel(c)) v = v * s.std[c] + s.mean[c];
  }
  return out;
}

std::vector<ImuWindow> normalize_all(std::span<const ImuWindow> windows, const NormStats& s) {
  std::vector<ImuWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(normalize(w, s));
  return out;
}

void to_json(nlohmann::json& j, const NormStats& s) {
  j = nlohmann::json{{"schema_version", 1},
                     {"mean", s.mean},
                     {"std", s.std},
                     {"channel_order", kChannelNames}};
}

void from_json(const nlohmann::json& j, NormStats& s) {
  j.at("mean").get_to(s.mean);
  j.at("std").get_to(s.std);
  if (j.contains("channel_order")) {
    const auto order = j.at("channel_order").get<std::vector<std::string>>();
    if (order.size() != kChannels) fail(ErrorKind::format, "channel_order must list 6 names");
    for (std::size_t c = 0; c < kChannels; ++c) {
      if (order[c] != kChannelNames[c]) {
        fail(ErrorKind::format, "unexpected channel order entry '" + order[c] + "'");
      }
    }
  }
  s.validate();
}

void save_norm_stats(const NormStats& s, const std::filesystem::path& path) {
  write_text_file(path, nlohmann::json(s).dump(2) + "\n");
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path)).get<NormStats>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace imudiff
