#include "imudiff/sim.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "imudiff/error.hpp"

namespace imudiff {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Kinematics {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();
  double yaw = 0, pitch = 0, roll = 0;
  double yaw_rate = 0, pitch_rate = 0, roll_rate = 0;
};

Eigen::Vector3d body_rate(const Kinematics& k) {
  const double sp = std::sin(k.pitch), cp = std::cos(k.pitch);
  const double sr = std::sin(k.roll), cr = std::cos(k.roll);
  return {k.roll_rate - k.yaw_rate * sp, k.pitch_rate * cr + k.yaw_rate * sr * cp,
          -k.pitch_rate * sr + k.yaw_rate * cr * cp};
}

// Closed-form figure-eight (1:2 Lissajous) with optional sinusoidal platform tilt.
Kinematics figure_eight(const TrajectoryProfile& p, double t) {
  const double amp = p.param("amplitude_m", 20.0);
  const double w = 2.0 * std::numbers::pi / p.param("period_s", 60.0);
  const double pitch_amp = p.param("pitch_amplitude_rad", 0.0);
  const double roll_amp = p.param("roll_amplitude_rad", 0.0);
  const double wt = 2.0 * std::numbers::pi / p.param("tilt_period_s", 8.0);

  Kinematics k;
  k.position = {amp * std::sin(w * t), 0.5 * amp * std::sin(2 * w * t), 0.0};
  k.velocity = {amp * w * std::cos(w * t), amp * w * std::cos(2 * w * t), 0.0};
  k.acceleration = {-amp * w * w * std::sin(w * t), -2 * amp * w * w * std::sin(2 * w * t), 0.0};
  const double vx = k.velocity.x(), vy = k.velocity.y();
  const double ax = k.acceleration.x(), ay = k.acceleration.y();
  k.yaw = std::atan2(vy, vx);
  k.yaw_rate = (vx * ay - vy * ax) / (vx * vx + vy * vy);
  k.pitch = pitch_amp * std::sin(wt * t);
  k.pitch_rate = pitch_amp * wt * std::cos(wt * t);
  k.roll = roll_amp * std::sin(wt * t + 1.0);
  k.roll_rate = roll_amp * wt * std::cos(wt * t + 1.0);
  return k;
}

Kinematics constant_rate_turn(const TrajectoryProfile& p, double t) {
  const double rate = p.param("yaw_rate", 0.1);
  const double speed = p.param("speed", 0.0);
  const double yaw0 = p.param("initial_yaw", 0.0);
  Kinematics k;
  k.yaw = yaw0 + rate * t;
  k.yaw_rate = rate;
  k.velocity = {speed * std::cos(k.yaw), speed * std::sin(k.yaw), 0.0};
  k.acceleration = {-speed * rate * std::sin(k.yaw), speed * rate * std::cos(k.yaw), 0.0};
  if (rate != 0.0) {
    const double r = speed / rate;
    k.position = {r * (std::sin(k.yaw) - std::sin(yaw0)), r * (std::cos(yaw0) - std::cos(k.yaw)),
                  0.0};
  } else {
    k.position = {speed * t * std::cos(yaw0), speed * t * std::sin(yaw0), 0.0};
  }
  return k;
}

Kinematics static_pose(const TrajectoryProfile& p) {
  Kinematics k;
  k.yaw = p.param("yaw", 0.0);
  k.pitch = p.param("pitch", 0.0);
  k.roll = p.param("roll", 0.0);
  return k;
}

// Level ground vehicle driven by piecewise-constant longitudinal acceleration and
// yaw rate drawn from the profile seed. Planar position is integrated with RK4
// at a fine substep; heading and speed are exact within each segment.
class PiecewiseDynamic {
 public:
  explicit PiecewiseDynamic(const TrajectoryProfile& p)
      : segment_s_(p.param("segment_s", 5.0)), speed0_(p.param("initial_speed", 5.0)) {
    if (!(segment_s_ > 0.0)) fail(ErrorKind::config, "parameters.segment_s must be positive");
    const double max_accel = p.param("max_accel", 0.5);
    const double max_rate = p.param("max_yaw_rate", 0.2);
    const double min_speed = p.param("min_speed", 1.0);
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto count = static_cast<std::size_t>(std::ceil(p.duration_s / segment_s_)) + 1;
    double speed = speed0_;
    for (std::size_t i = 0; i < count; ++i) {
      double a = max_accel * unit(rng);
      if (speed + a * segment_s_ < min_speed) a = std::abs(a);
      accel_.push_back(a);
      rate_.push_back(max_rate * unit(rng));
      speed += a * segment_s_;
    }
  }

  void advance_to(double t, Kinematics& k) {
    constexpr double kStep = 1e-3;
    while (time_ < t) {
      const double h = std::min(kStep, t - time_);
      // Do not straddle a segment boundary inside one RK4 step.
      const double boundary = (std::floor(time_ / segment_s_ + 1e-12) + 1.0) * segment_s_;
      const double step = std::min(h, boundary - time_);
      rk4(step);
    }
    fill(t, k);
  }

 private:
  std::size_t segment(double t) const {
    return std::min(static_cast<std::size_t>(std::floor(t / segment_s_ + 1e-12)),
                    accel_.size() - 1);
  }
  double segment_start(std::size_t s) const { return static_cast<double>(s) * segment_s_; }

  // Speed and heading at time t given the segment containing t_ref.
  void speed_heading(double t, std::size_t s, double& speed, double& yaw) const {
    double v = speed0_, psi = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      v += accel_[i] * segment_s_;
      psi += rate_[i] * segment_s_;
    }
    const double tau = t - segment_start(s);
    speed = v + accel_[s] * tau;
    yaw = psi + rate_[s] * tau;
  }

  void rk4(double h) {
    const std::size_t s = segment(time_ + 0.5 * h);
    auto deriv = [&](double t) {
      double v, psi;
      speed_heading(t, s, v, psi);
      return Eigen::Vector2d(v * std::cos(psi), v * std::sin(psi));
    };
    const Eigen::Vector2d k1 = deriv(time_);
    const Eigen::Vector2d k2 = deriv(time_ + 0.5 * h);
    const Eigen::Vector2d k4 = deriv(time_ + h);
    xy_ += h / 6.0 * (k1 + 4.0 * k2 + k4);
    time_ += h;
  }

  void fill(double t, Kinematics& k) const {
    const std::size_t s = segment(t);
    double v, psi;
    speed_heading(t, s, v, psi);
    k.position = {xy_.x(), xy_.y(), 0.0};
    k.velocity = {v * std::cos(psi), v * std::sin(psi), 0.0};
    k.yaw = psi;
    k.yaw_rate = rate_[s];
    k.acceleration = {accel_[s] * std::cos(psi) - v * rate_[s] * std::sin(psi),
                      accel_[s] * std::sin(psi) + v * rate_[s] * std::cos(psi), 0.0};
  }

  double segment_s_;
  double speed0_;
  std::vector<double> accel_;
  std::vector<double> rate_;
  double time_ = 0.0;
  Eigen::Vector2d xy_ = Eigen::Vector2d::Zero();
};

struct UnitValue {
  double value;
  std::string unit;
};

UnitValue read_unit_value(const nlohmann::json& j, const char* field) {
  const auto& f = j.at(field);
  if (f.is_number()) return {f.get<double>(), ""};
  return {f.at("value").get<double>(), f.at("unit").get<std::string>()};
}

double convert(const UnitValue& u, const std::string& si, const char* field) {
  if (u.unit.empty() || u.unit == si) return u.value;
  static const std::map<std::string, std::pair<std::string, double>> table = {
      {"deg/s", {"rad/s", kDeg}},
      {"deg/h", {"rad/s", kDeg / 3600.0}},
      {"deg/hr", {"rad/s", kDeg / 3600.0}},
      {"deg/sqrt(h)", {"rad/sqrt(s)", kDeg / 60.0}},
      {"deg/sqrt(hr)", {"rad/sqrt(s)", kDeg / 60.0}},
      {"mg", {"m/s^2", 1e-3 * kGravity}},
      {"ug", {"m/s^2", 1e-6 * kGravity}},
      {"g", {"m/s^2", kGravity}},
      {"Hz", {"Hz", 1.0}},
  };
  const auto it = table.find(u.unit);
  if (it == table.end() || it->second.first != si) {
    fail(ErrorKind::config, std::string("field '") + field + "': unsupported unit '" + u.unit +
                                "' (expected " + si + " or a convertible unit)");
  }
  return u.value * it->second.second;
}

const std::array<std::string, kChannels>& unit_row(const char* gyro, const char* accel) {
  static std::map<std::string, std::array<std::string, kChannels>> cache;
  auto& row = cache[std::string(gyro) + "|" + accel];
  if (row[0].empty()) row = {gyro, gyro, gyro, accel, accel, accel};
  return row;
}

struct NoiseField {
  const char* name;
  ChannelArray NoiseParams::*member;
  const char* gyro_unit;
  const char* accel_unit;
};

constexpr std::array<NoiseField, 6> kNoiseFields = {{
    {"white_density", &NoiseParams::white_density, "rad/s/sqrt(Hz)", "m/s^2/sqrt(Hz)"},
    {"white_per_sample", &NoiseParams::white_per_sample, "rad/s", "m/s^2"},
    {"sigma_rw", &NoiseParams::sigma_rw, "rad/s/sqrt(s)", "m/s^2/sqrt(s)"},
    {"bias_instability", &NoiseParams::bias_instability, "rad/s", "m/s^2"},
    {"quantization", &NoiseParams::quantization, "rad/s", "m/s^2"},
    {"sigma_b0", &NoiseParams::sigma_b0, "rad/s", "m/s^2"},
}};

}  // namespace

void NoiseParams::set_white_density(const ChannelArray& density) {
  white_density = density;
  for (std::size_t c = 0; c < kChannels; ++c) white_per_sample[c] = density[c] * std::sqrt(rate_hz);
}

void NoiseParams::validate() const {
  if (!(rate_hz > 0.0)) fail(ErrorKind::config, "noise params: rate_hz must be positive");
  for (const auto& f : kNoiseFields) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double v = (this->*f.member)[c];
      if (!(v >= 0.0) || !std::isfinite(v)) {
        fail(ErrorKind::config, std::string("noise params: ") + f.name + " must be >= 0");
      }
    }
  }
}

void SensorSpec::validate() const {
  if (!(gyro_bias > 0 && gyro_arw > 0 && accel_bias > 0 && rate_hz > 0)) {
    fail(ErrorKind::config, "sensor spec '" + name + "': all fields must be positive");
  }
}

SensorPair builtin_specs() {
  SensorPair pair;
  pair.reference = {"Novatel SPAN-ISA-100C", 0.05 * kDeg / 3600.0, 0.005 * kDeg / 60.0,
                    0.02e-3 * kGravity, 200.0};
  pair.lowcost = {"HGuide I300", 3.0 * kDeg / 3600.0, 0.15 * kDeg / 60.0, 0.1e-3 * kGravity,
                  200.0};
  return pair;
}

NoiseParams noise_params_from_spec(const SensorSpec& spec) {
  spec.validate();
  NoiseParams p;
  p.rate_hz = spec.rate_hz;
  const double ratio = spec.gyro_arw / spec.gyro_bias;
  const double accel_white = spec.accel_bias * ratio;
  p.set_white_density({spec.gyro_arw, spec.gyro_arw, spec.gyro_arw, accel_white, accel_white,
                       accel_white});
  const double rw_scale = 1.0 / std::sqrt(kBiasCorrelationTimeS);
  for (std::size_t c = 0; c < kChannels; ++c) {
    const double bias = c < 3 ? spec.gyro_bias : spec.accel_bias;
    p.bias_instability[c] = bias;
    p.sigma_b0[c] = bias;
    p.sigma_rw[c] = bias * rw_scale;
  }
  return p;
}

double TrajectoryProfile::param(const std::string& name, double fallback) const {
  const auto it = parameters.find(name);
  return it == parameters.end() ? fallback : it->second;
}

void TrajectoryProfile::validate() const {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    fail(ErrorKind::config, "profile.duration_s must be positive");
  }
}

TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "static") return TrajectoryKind::static_pose;
  if (s == "constant-rate-turn") return TrajectoryKind::constant_rate_turn;
  if (s == "figure-eight") return TrajectoryKind::figure_eight;
  if (s == "piecewise-dynamic") return TrajectoryKind::piecewise_dynamic;
  fail(ErrorKind::config, "profile.kind: unknown trajectory kind '" + s + "'");
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::static_pose: return "static";
    case TrajectoryKind::constant_rate_turn: return "constant-rate-turn";
    case TrajectoryKind::figure_eight: return "figure-eight";
    case TrajectoryKind::piecewise_dynamic: return "piecewise-dynamic";
  }
  return "unknown";
}

TruthData generate_truth(const TrajectoryProfile& profile, double rate_hz) {
  profile.validate();
  if (!(rate_hz > 0.0)) fail(ErrorKind::config, "rate_hz must be positive");
  const auto n = static_cast<std::size_t>(std::floor(profile.duration_s * rate_hz + 1e-9)) + 1;
  const bool gravity_on = profile.param("gravity", 1.0) != 0.0;
  const Eigen::Vector3d gravity_reaction(0.0, 0.0, gravity_on ? kGravity : 0.0);

  std::optional<PiecewiseDynamic> piecewise;
  if (profile.kind == TrajectoryKind::piecewise_dynamic) piecewise.emplace(profile);

  ChannelData channels;
  for (auto& ch : channels) ch.resize(n);
  Trajectory nav(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    Kinematics k;
    switch (profile.kind) {
      case TrajectoryKind::static_pose: k = static_pose(profile); break;
      case TrajectoryKind::constant_rate_turn: k = constant_rate_turn(profile, t); break;
      case TrajectoryKind::figure_eight: k = figure_eight(profile, t); break;
      case TrajectoryKind::piecewise_dynamic: piecewise->advance_to(t, k); break;
    }
    const Eigen::Quaterniond q = ypr_to_attitude(k.yaw, k.pitch, k.roll);
    const Eigen::Vector3d omega = body_rate(k);
    const Eigen::Vector3d f = q.conjugate() * (k.acceleration + gravity_reaction);
    for (std::size_t a = 0; a < 3; ++a) {
      channels[a][i] = omega[static_cast<Eigen::Index>(a)];
      channels[a + 3][i] = f[static_cast<Eigen::Index>(a)];
    }
    nav[i] = NavState{t, k.position, k.velocity, q};
  }
  return {ImuSeries(rate_hz, 0.0, std::move(channels)), std::move(nav)};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ImuSeries corrupt(const ImuSeries& clean, const NoiseParams& params, std::uint64_t seed) {
  if (clean.empty()) fail(ErrorKind::insufficient_data, "cannot corrupt an empty series");
  params.validate();
  const double sqrt_dt = std::sqrt(clean.dt());
  ChannelData out;
  for (std::size_t c = 0; c < kChannels; ++c) {
    std::mt19937_64 rng(derive_seed(seed, c));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto src = clean.channel(c);
    auto& dst = out[c];
    dst.resize(src.size());
    double bias = params.sigma_b0[c] * normal(rng);
    const double rw = params.sigma_rw[c] * sqrt_dt;
    const double white = params.white_per_sample[c];
    for (std::size_t k = 0; k < src.size(); ++k) {
      if (k > 0) bias += rw * normal(rng);
      dst[k] = src[k] + bias + white * normal(rng);
    }
  }
  return ImuSeries(clean.sample_rate_hz(), clean.start_time_s(), std::move(out));
}

void window_pair(const ImuSeries& lowcost, const ImuSeries& reference,
                 const WindowingConfig& windowing, const NormStats* norm,
                 std::vector<ImuWindow>& windows_lowcost,
                 std::vector<ImuWindow>& windows_reference, NormStats& norm_out) {
  if (lowcost.size() != reference.size()) {
    fail(ErrorKind::contract, "paired series differ in length: " + std::to_string(lowcost.size()) +
                                  " vs " + std::to_string(reference.size()));
  }
  const auto raw_low = make_windows(lowcost, windowing);
  const auto raw_ref = make_windows(reference, windowing);
  norm_out = norm ? *norm : compute_norm_stats(raw_ref);
  windows_lowcost = normalize_all(raw_low, norm_out);
  windows_reference = normalize_all(raw_ref, norm_out);
}

PairedSeries simulate_pair(const TrajectoryProfile& profile, const SensorPair& specs,
                           std::uint64_t seed) {
  if (specs.reference.rate_hz != specs.lowcost.rate_hz) {
    fail(ErrorKind::config, "reference and low-cost sensors must share one sample rate");
  }
  PairedSeries p;
  p.truth = generate_truth(profile, specs.reference.rate_hz);
  p.reference_params = noise_params_from_spec(specs.reference);
  p.lowcost_params = noise_params_from_spec(specs.lowcost);
  p.reference = corrupt(p.truth.imu, p.reference_params, derive_seed(seed, 101));
  p.lowcost = corrupt(p.truth.imu, p.lowcost_params, derive_seed(seed, 202));
  return p;
}

PairedDataset make_paired_dataset(const TrajectoryProfile& profile, const SensorPair& specs,
                                  const WindowingConfig& windowing, std::uint64_t seed) {
  PairedSeries p = simulate_pair(profile, specs, seed);
  PairedDataset d;
  d.truth = std::move(p.truth);
  d.reference = std::move(p.reference);
  d.lowcost = std::move(p.lowcost);
  d.reference_params = p.reference_params;
  d.lowcost_params = p.lowcost_params;
  window_pair(d.lowcost, d.reference, windowing, nullptr, d.windows_lowcost, d.windows_reference,
              d.norm);
  return d;
}

void to_json(nlohmann::json& j, const NoiseParams& p) {
  j = nlohmann::json{{"schema_version", 1}, {"rate_hz", p.rate_hz},
                     {"channel_order", kChannelNames}};
  for (const auto& f : kNoiseFields) {
    j[f.name] = {{"values", p.*f.member}, {"units", unit_row(f.gyro_unit, f.accel_unit)}};
  }
}

void from_json(const nlohmann::json& j, NoiseParams& p) {
  p.rate_hz = j.at("rate_hz").get<double>();
  for (const auto& f : kNoiseFields) {
    if (!j.contains(f.name)) {
      if (std::string_view(f.name) == "white_per_sample") continue;
      fail(ErrorKind::config, std::string("noise params: missing field '") + f.name + "'");
    }
    const auto& field = j.at(f.name);
    if (field.contains("units")) {
      const auto units = field.at("units").get<std::vector<std::string>>();
      if (units.size() != kChannels ||
          !std::equal(units.begin(), units.end(), unit_row(f.gyro_unit, f.accel_unit).begin())) {
        fail(ErrorKind::config, std::string("noise params: field '") + f.name +
                                    "' must use SI units " + f.gyro_unit + " / " + f.accel_unit);
      }
    }
    field.at("values").get_to(p.*f.member);
  }
  if (!j.contains("white_per_sample")) p.set_white_density(p.white_density);
  p.validate();
}

void to_json(nlohmann::json& j, const SensorSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"gyro_bias", {{"value", s.gyro_bias}, {"unit", "rad/s"}}},
                     {"gyro_arw", {{"value", s.gyro_arw}, {"unit", "rad/sqrt(s)"}}},
                     {"accel_bias", {{"value", s.accel_bias}, {"unit", "m/s^2"}}},
                     {"rate_hz", {{"value", s.rate_hz}, {"unit", "Hz"}}}};
}

void from_json(const nlohmann::json& j, SensorSpec& s) {
  s.name = j.value("name", std::string("sensor"));
  s.gyro_bias = convert(read_unit_value(j, "gyro_bias"), "rad/s", "gyro_bias");
  s.gyro_arw = convert(read_unit_value(j, "gyro_arw"), "rad/sqrt(s)", "gyro_arw");
  s.accel_bias = convert(read_unit_value(j, "accel_bias"), "m/s^2", "accel_bias");
  s.rate_hz = convert(read_unit_value(j, "rate_hz"), "Hz", "rate_hz");
  s.validate();
}

void to_json(nlohmann::json& j, const TrajectoryProfile& p) {
  j = nlohmann::json{{"kind", to_string(p.kind)},
                     {"duration_s", p.duration_s},
                     {"parameters", p.parameters},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, TrajectoryProfile& p) {
  if (!j.contains("kind")) fail(ErrorKind::config, "profile.kind: missing");
  if (!j.at("kind").is_string()) fail(ErrorKind::config, "profile.kind: must be a string");
  p.kind = trajectory_kind_from_string(j.at("kind").get<std::string>());
  if (!j.contains("duration_s")) fail(ErrorKind::config, "profile.duration_s: missing");
  p.duration_s = j.at("duration_s").get<double>();
  p.parameters.clear();
  if (j.contains("parameters")) {
    for (const auto& [key, value] : j.at("parameters").items()) {
      if (!value.is_number()) fail(ErrorKind::config, "profile.parameters." + key + ": not a number");
      p.parameters[key] = value.get<double>();
    }
  }
  p.seed = j.value("seed", std::uint64_t{0});
  p.validate();
}

NoiseParams load_noise_params(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path)).get<NoiseParams>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
}

void save_noise_params(const NoiseParams& p, const std::filesystem::path& path) {
  write_text_file(path, nlohmann::json(p).dump(2) + "\n");
}

}  // namespace imudiff
