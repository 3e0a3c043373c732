#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace imudiff {

inline constexpr std::size_t kChannels = 6;

// Fixed channel order used everywhere: gyro (rad/s) then accel (m/s^2).
enum Channel : std::size_t { gyro_x = 0, gyro_y, gyro_z, accel_x, accel_y, accel_z };

inline constexpr std::array<std::string_view, kChannels> kChannelNames = {
    "gx", "gy", "gz", "ax", "ay", "az"};

using ChannelArray = std::array<double, kChannels>;
using ChannelData = std::array<std::vector<double>, kChannels>;

// Timestamped 6-axis inertial stream at a fixed rate. Immutable once built.
class ImuSeries {
 public:
  ImuSeries() = default;
  ImuSeries(double sample_rate_hz, double start_time_s, ChannelData channels);

  double sample_rate_hz() const noexcept { return sample_rate_hz_; }
  double dt() const noexcept { return 1.0 / sample_rate_hz_; }
  double start_time_s() const noexcept { return start_time_s_; }
  std::size_t size() const noexcept { return channels_[0].size(); }
  bool empty() const noexcept { return size() == 0; }

  double time(std::size_t k) const noexcept {
    return start_time_s_ + static_cast<double>(k) / sample_rate_hz_;
  }
  std::span<const double> channel(std::size_t i) const { return channels_.at(i); }
  const ChannelData& channels() const noexcept { return channels_; }
  double at(std::size_t channel, std::size_t k) const { return channels_.at(channel).at(k); }

  // Contiguous sub-range [offset, offset + count).
  ImuSeries slice(std::size_t offset, std::size_t count) const;

 private:
  double sample_rate_hz_ = 200.0;
  double start_time_s_ = 0.0;
  ChannelData channels_;
};

// 6 x L block stored channel-major: value(c, k) = data[c * length + k].
struct ImuWindow {
  std::vector<double> data;
  std::size_t length = 0;
  std::size_t window_index = 0;
  std::size_t source_offset = 0;

  ImuWindow() = default;
  explicit ImuWindow(std::size_t length_L);

  double& operator()(std::size_t c, std::size_t k) { return data[c * length + k]; }
  double operator()(std::size_t c, std::size_t k) const { return data[c * length + k]; }
  std::span<double> channel(std::size_t c) { return {data.data() + c * length, length}; }
  std::span<const double> channel(std::size_t c) const { return {data.data() + c * length, length}; }
};

struct NormStats {
  ChannelArray mean{};
  ChannelArray std{1, 1, 1, 1, 1, 1};

  void validate() const;
};

struct WindowingConfig {
  std::size_t length_L = 200;
  std::size_t stride_S = 50;

  void validate() const;
};

ImuSeries load_csv(const std::filesystem::path& path);
void save_csv(const ImuSeries& series, const std::filesystem::path& path);

std::size_t window_count(std::size_t series_length, const WindowingConfig& cfg);
std::vector<ImuWindow> make_windows(const ImuSeries& series, const WindowingConfig& cfg);

// Population mean/std per channel over the concatenation of all windows.
NormStats compute_norm_stats(std::span<const ImuWindow> windows);

ImuWindow normalize(const ImuWindow& w, const NormStats& s);
ImuWindow denormalize(const ImuWindow& w, const NormStats& s);
std::vector<ImuWindow> normalize_all(std::span<const ImuWindow> windows, const NormStats& s);

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);
void save_norm_stats(const NormStats& s, const std::filesystem::path& path);
NormStats load_norm_stats(const std::filesystem::path& path);

// Shared helpers for the JSON/text writers of every module.
void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace imudiff
