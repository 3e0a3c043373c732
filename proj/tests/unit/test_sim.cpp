#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "imudiff/nav_eval.hpp"
#include "imudiff/sim.hpp"
#include "test_support.hpp"

namespace imudiff {
namespace {

using testing::TempDir;

double sample_std(std::span<const double> v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

TEST(Specs, BuiltinValuesInSi) {
  const auto specs = builtin_specs();
  const double deg = std::numbers::pi / 180.0;
  EXPECT_NEAR(specs.reference.gyro_bias, 0.05 * deg / 3600.0, 1e-18);
  EXPECT_NEAR(specs.reference.gyro_arw, 0.005 * deg / 60.0, 1e-18);
  EXPECT_NEAR(specs.reference.accel_bias, 0.02e-3 * kGravity, 1e-15);
  EXPECT_NEAR(specs.lowcost.gyro_bias, 3.0 * deg / 3600.0, 1e-18);
  EXPECT_NEAR(specs.lowcost.gyro_arw, 0.15 * deg / 60.0, 1e-18);
  EXPECT_NEAR(specs.lowcost.accel_bias, 0.1e-3 * kGravity, 1e-15);
  EXPECT_GT(specs.lowcost.gyro_arw, specs.reference.gyro_arw);
}

TEST(Specs, ConvertedDatasheetValues) {
  const auto specs = builtin_specs();
  EXPECT_NEAR(specs.reference.gyro_bias, 2.4241e-7, 1e-11);
  EXPECT_NEAR(specs.lowcost.gyro_arw, 4.3633e-5, 1e-9);
  EXPECT_NEAR(specs.lowcost.accel_bias, 9.80665e-4, 1e-15);
}

TEST(Specs, NoiseParamsFollowDocumentedMapping) {
  const SensorSpec spec{"s", 1e-5, 2e-4, 3e-3, 100.0};
  const auto p = noise_params_from_spec(spec);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(p.white_density[c], 2e-4);
    EXPECT_DOUBLE_EQ(p.white_per_sample[c], 2e-4 * 10.0);
    EXPECT_DOUBLE_EQ(p.sigma_b0[c], 1e-5);
    EXPECT_DOUBLE_EQ(p.sigma_rw[c], 1e-5 / 10.0);
  }
  for (std::size_t c = 3; c < 6; ++c) {
    EXPECT_NEAR(p.white_density[c], 3e-3 * 20.0, 1e-15);
    EXPECT_DOUBLE_EQ(p.sigma_b0[c], 3e-3);
  }
  EXPECT_IMUDIFF_ERROR(noise_params_from_spec(SensorSpec{"bad", 0.0, 1.0, 1.0, 1.0}), config);
}

TEST(Specs, JsonUnitConversion) {
  const auto j = nlohmann::json::parse(R"js({
    "name": "x",
    "gyro_bias": {"value": 3.0, "unit": "deg/h"},
    "gyro_arw": {"value": 0.15, "unit": "deg/sqrt(h)"},
    "accel_bias": {"value": 0.1, "unit": "mg"},
    "rate_hz": {"value": 200, "unit": "Hz"}})js");
  const auto s = j.get<SensorSpec>();
  const auto b = builtin_specs().lowcost;
  EXPECT_NEAR(s.gyro_bias, b.gyro_bias, 1e-18);
  EXPECT_NEAR(s.gyro_arw, b.gyro_arw, 1e-18);
  EXPECT_NEAR(s.accel_bias, b.accel_bias, 1e-15);
  auto bad = j;
  bad["gyro_bias"]["unit"] = "furlong";
  EXPECT_IMUDIFF_ERROR(bad.get<SensorSpec>(), config);
}

TEST(NoiseParamsJson, RoundTripAndUnitCheck) {
  TempDir dir;
  const auto p = noise_params_from_spec(builtin_specs().lowcost);
  save_noise_params(p, dir / "p.json");
  const auto q = load_noise_params(dir / "p.json");
  EXPECT_EQ(q.white_density, p.white_density);
  EXPECT_EQ(q.sigma_rw, p.sigma_rw);
  EXPECT_EQ(q.sigma_b0, p.sigma_b0);
  nlohmann::json j = p;
  j["sigma_rw"]["units"][0] = "deg/s";
  write_text_file(dir / "bad.json", j.dump());
  EXPECT_IMUDIFF_ERROR(load_noise_params(dir / "bad.json"), config);
}

TEST(Profile, KindStringsAndValidation) {
  for (auto k : {TrajectoryKind::static_pose, TrajectoryKind::constant_rate_turn,
                 TrajectoryKind::figure_eight, TrajectoryKind::piecewise_dynamic}) {
    EXPECT_EQ(trajectory_kind_from_string(to_string(k)), k);
  }
  EXPECT_IMUDIFF_ERROR(trajectory_kind_from_string("loop"), config);
  EXPECT_IMUDIFF_ERROR(nlohmann::json::parse(R"({"kind":"static","duration_s":-1})")
                           .get<TrajectoryProfile>(),
                       config);
  EXPECT_IMUDIFF_ERROR(nlohmann::json::parse(R"({"duration_s":5})").get<TrajectoryProfile>(), config);
}

TEST(Truth, StaticLevelPoseSensesGravityOnly) {
  TrajectoryProfile p;
  p.duration_s = 2.0;
  const auto truth = generate_truth(p, 100.0);
  ASSERT_EQ(truth.imu.size(), 201u);
  for (std::size_t k = 0; k < truth.imu.size(); ++k) {
    for (std::size_t c = 0; c < 5; ++c) ASSERT_NEAR(truth.imu.at(c, k), 0.0, 1e-15);
    ASSERT_NEAR(truth.imu.at(accel_z, k), kGravity, 1e-12);
  }
}

TEST(Truth, TiltedStaticPoseRotatesGravity) {
  TrajectoryProfile p;
  p.duration_s = 1.0;
  p.parameters = {{"roll", 0.3}, {"pitch", -0.2}};
  const auto truth = generate_truth(p, 50.0);
  const Eigen::Vector3d f(truth.imu.at(accel_x, 0), truth.imu.at(accel_y, 0), truth.imu.at(accel_z, 0));
  EXPECT_NEAR(f.norm(), kGravity, 1e-12);
  EXPECT_NEAR(f.x(), -kGravity * std::sin(-0.2), 1e-12);
  EXPECT_NEAR(f.y(), kGravity * std::cos(-0.2) * std::sin(0.3), 1e-12);
}

TEST(Truth, ConstantRateTurnReportsYawRate) {
  TrajectoryProfile p;
  p.kind = TrajectoryKind::constant_rate_turn;
  p.duration_s = 5.0;
  p.parameters = {{"yaw_rate", 0.25}, {"speed", 3.0}};
  const auto truth = generate_truth(p, 200.0);
  for (std::size_t k = 0; k < truth.imu.size(); k += 97) {
    EXPECT_NEAR(truth.imu.at(gyro_z, k), 0.25, 1e-12);
    EXPECT_NEAR(truth.nav[k].velocity.head<2>().norm(), 3.0, 1e-9);
  }
}

class TruthConsistency : public ::testing::TestWithParam<TrajectoryKind> {};

// Integrating the clean IMU stream must reproduce the kinematic truth closely.
TEST_P(TruthConsistency, DeadReckoningTracksTruth) {
  TrajectoryProfile p;
  p.kind = GetParam();
  p.duration_s = 60.0;
  p.seed = 4;
  if (p.kind == TrajectoryKind::constant_rate_turn) p.parameters = {{"speed", 5.0}};
  const auto truth = generate_truth(p, 200.0);
  const auto solution = dead_reckon(truth.imu, truth.nav.front());
  const auto stats = error_stats(solution, truth.nav);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_LT(stats.components[a].max, 1e-3) << a;
  EXPECT_LT(stats.components[3].max, 1e-4);
  EXPECT_LT(stats.components[4].max, 1e-4);
  EXPECT_LT(stats.components[5].max, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Kinds, TruthConsistency,
                         ::testing::Values(TrajectoryKind::static_pose,
                                           TrajectoryKind::constant_rate_turn,
                                           TrajectoryKind::figure_eight));

// Tilted and piecewise profiles excite coning and rate steps, which a
// second-order mechanization follows only to the centimetre level.
TEST(TruthConsistencyLoose, TiltedFigureEightAndPiecewise) {
  TrajectoryProfile tilted;
  tilted.kind = TrajectoryKind::figure_eight;
  tilted.duration_s = 60.0;
  tilted.parameters = {{"pitch_amplitude_rad", 0.05}, {"roll_amplitude_rad", 0.08}};
  TrajectoryProfile piecewise;
  piecewise.kind = TrajectoryKind::piecewise_dynamic;
  piecewise.duration_s = 60.0;
  piecewise.seed = 4;
  for (const auto& p : {tilted, piecewise}) {
    const auto truth = generate_truth(p, 200.0);
    const auto solution = dead_reckon(truth.imu, truth.nav.front());
    const auto stats = error_stats(solution, truth.nav);
    for (std::size_t a = 0; a < 3; ++a) EXPECT_LT(stats.components[a].max, 0.1) << a;
    for (std::size_t a = 3; a < 6; ++a) EXPECT_LT(stats.components[a].max, 1e-3) << a;
  }
}

TEST(Truth, PiecewiseDependsOnProfileSeed) {
  TrajectoryProfile p;
  p.kind = TrajectoryKind::piecewise_dynamic;
  p.duration_s = 20.0;
  p.seed = 1;
  const auto a = generate_truth(p, 100.0);
  const auto b = generate_truth(p, 100.0);
  p.seed = 2;
  const auto c = generate_truth(p, 100.0);
  EXPECT_EQ(a.imu.channels(), b.imu.channels());
  EXPECT_NE(a.imu.channels(), c.imu.channels());
}

TEST(Corrupt, DeterministicPerSeed) {
  const auto clean = testing::constant_series(500, {0, 0, 0, 0, 0, kGravity});
  const auto params = noise_params_from_spec(builtin_specs().lowcost);
  EXPECT_EQ(corrupt(clean, params, 7).channels(), corrupt(clean, params, 7).channels());
  EXPECT_NE(corrupt(clean, params, 7).channels(), corrupt(clean, params, 8).channels());
}

TEST(Corrupt, ZeroParamsIsIdentity) {
  const auto clean = testing::random_series(300, 8);
  EXPECT_EQ(corrupt(clean, NoiseParams{}, 1).channels(), clean.channels());
  EXPECT_IMUDIFF_ERROR(corrupt(ImuSeries{}, NoiseParams{}, 1), insufficient_data);
}

TEST(Corrupt, WhiteOnlyMillionSamples) {
  const std::size_t n = 1000000;
  ChannelData data;
  data[0].assign(n, 0.0);
  for (std::size_t c = 1; c < kChannels; ++c) data[c].assign(n, 0.0);
  const ImuSeries clean(200.0, 0.0, std::move(data));
  NoiseParams p;
  p.set_white_density({1e-3, 0, 0, 0, 0, 0});
  const auto noisy = corrupt(clean, p, 17);
  const auto ch = noisy.channel(0);
  EXPECT_NEAR(sample_std(ch) / p.white_per_sample[0], 1.0, 0.01);
  const double mean = std::accumulate(ch.begin(), ch.end(), 0.0) / n;
  EXPECT_LT(std::abs(mean), 3.0 * p.white_per_sample[0] / std::sqrt(double(n)));
}

// Var(b_k) across seeds grows linearly with slope sigma_rw^2 dt.
TEST(Corrupt, RandomWalkVarianceGrowsLinearly) {
  const std::size_t n = 400, seeds = 100;
  const auto clean = testing::constant_series(n, {0, 0, 0, 0, 0, 0}, 100.0);
  NoiseParams p;
  p.rate_hz = 100.0;
  p.sigma_rw = {0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  std::vector<double> var(n, 0.0);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const auto noisy = corrupt(clean, p, 1000 + s);
    for (std::size_t c = 0; c < kChannels; ++c) {
      for (std::size_t k = 0; k < n; ++k) var[k] += noisy.at(c, k) * noisy.at(c, k);
    }
  }
  for (double& v : var) v /= double(seeds * kChannels);
  double sk = 0, sv = 0, skk = 0, skv = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sk += k; sv += var[k]; skk += double(k) * k; skv += k * var[k];
  }
  const double slope = (n * skv - sk * sv) / (n * skk - sk * sk);
  EXPECT_NEAR(slope / (0.09 * 0.01), 1.0, 0.1);
}

TEST(Corrupt, WhiteNoiseStdMatchesParameter) {
  const std::size_t n = 200000;
  const auto clean = testing::constant_series(n, {0, 0, 0, 0, 0, 0});
  NoiseParams p;
  p.set_white_density({1e-3, 2e-3, 3e-3, 1e-2, 2e-2, 3e-2});
  const auto noisy = corrupt(clean, p, 3);
  for (std::size_t c = 0; c < kChannels; ++c) {
    const double s = sample_std(noisy.channel(c));
    // relative std error of a sample std is ~1/sqrt(2n) = 0.16%; allow 5 sigma
    EXPECT_NEAR(s / p.white_per_sample[c], 1.0, 5.0 / std::sqrt(2.0 * n)) << c;
  }
}

TEST(Corrupt, BiasRandomWalkIncrementVariance) {
  const std::size_t n = 100000;
  const auto clean = testing::constant_series(n, {0, 0, 0, 0, 0, 0}, 100.0);
  NoiseParams p;
  p.rate_hz = 100.0;
  p.sigma_rw = {0.5, 0.5, 0.5, 1.0, 1.0, 1.0};
  const auto noisy = corrupt(clean, p, 5);
  for (std::size_t c = 0; c < kChannels; ++c) {
    std::vector<double> inc(n - 1);
    for (std::size_t k = 1; k < n; ++k) inc[k - 1] = noisy.at(c, k) - noisy.at(c, k - 1);
    const double expected = p.sigma_rw[c] * std::sqrt(0.01);
    EXPECT_NEAR(sample_std(inc) / expected, 1.0, 5.0 / std::sqrt(2.0 * n)) << c;
  }
}

TEST(Corrupt, InitialBiasDistributionAcrossSeeds) {
  const auto clean = testing::constant_series(2, {0, 0, 0, 0, 0, 0});
  NoiseParams p;
  p.sigma_b0 = {1, 1, 1, 2, 2, 2};
  const std::size_t trials = 4000;
  std::vector<double> b(trials);
  for (std::size_t s = 0; s < trials; ++s) b[s] = corrupt(clean, p, s).at(accel_x, 0);
  EXPECT_NEAR(sample_std(b) / 2.0, 1.0, 5.0 / std::sqrt(2.0 * trials));
  const double mean = std::accumulate(b.begin(), b.end(), 0.0) / trials;
  EXPECT_NEAR(mean, 0.0, 5.0 * 2.0 / std::sqrt(trials));
}

TEST(Seeds, DerivedStreamsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (std::uint64_t k = 0; k < 50; ++k) seen.insert(derive_seed(s, k));
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(9, 3), derive_seed(9, 3));
}

TEST(Paired, DatasetSharesTruthAndNormalizesWithReference) {
  TrajectoryProfile p;
  p.kind = TrajectoryKind::figure_eight;
  p.duration_s = 10.0;
  const auto d = make_paired_dataset(p, builtin_specs(), WindowingConfig{200, 100}, 3);
  ASSERT_EQ(d.reference.size(), d.lowcost.size());
  ASSERT_EQ(d.windows_reference.size(), d.windows_lowcost.size());
  EXPECT_EQ(d.windows_reference.size(), window_count(d.reference.size(), WindowingConfig{200, 100}));
  const auto stats = compute_norm_stats(d.windows_reference);
  for (std::size_t c = 0; c < kChannels; ++c) {
    EXPECT_NEAR(stats.mean[c], 0.0, 1e-9);
    EXPECT_NEAR(stats.std[c], 1.0, 1e-9);
  }
  const auto pair = simulate_pair(p, builtin_specs(), 3);
  EXPECT_EQ(pair.reference.channels(), d.reference.channels());
  EXPECT_EQ(pair.lowcost.channels(), d.lowcost.channels());
}

TEST(Paired, LowcostFartherFromTruthThanReference) {
  TrajectoryProfile p;
  p.kind = TrajectoryKind::figure_eight;
  p.duration_s = 60.0;
  const auto pair = simulate_pair(p, builtin_specs(), 12);
  const auto low = rmse_per_axis(pair.lowcost, pair.truth.imu);
  const auto ref = rmse_per_axis(pair.reference, pair.truth.imu);
  for (std::size_t c = 0; c < kChannels; ++c) EXPECT_GT(low[c], ref[c]) << c;
}

TEST(Paired, IdenticalSeriesGiveIdenticalWindowsAtSameOffsets) {
  const auto s = testing::random_series(500, 31);
  std::vector<ImuWindow> a, b;
  NormStats norm;
  window_pair(s, s, WindowingConfig{64, 20}, nullptr, a, b, norm);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t w = 0; w < a.size(); ++w) {
    EXPECT_EQ(a[w].source_offset, b[w].source_offset);
    EXPECT_EQ(a[w].data, b[w].data);
  }
  EXPECT_IMUDIFF_ERROR(window_pair(s, s.slice(0, 400), WindowingConfig{64, 20}, nullptr, a, b, norm),
                       contract);
}

TEST(Paired, MismatchedRatesRejected) {
  auto specs = builtin_specs();
  specs.lowcost.rate_hz = 100.0;
  EXPECT_IMUDIFF_ERROR(simulate_pair(TrajectoryProfile{}, specs, 1), config);
}

}  // namespace
}  // namespace imudiff
