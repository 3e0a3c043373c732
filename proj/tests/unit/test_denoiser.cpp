#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "imudiff/ad/ops.hpp"
#include "imudiff/denoiser.hpp"
#include "imudiff/schedule.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

namespace imudiff {
namespace {

using ad::Tensor;
using testing::TempDir;

Tensor randn(ad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

DenoiserConfig tiny() {
  DenoiserConfig c;
  c.base_channels_C = 4;
  c.heads = 2;
  c.window_L = 16;
  return c;
}

// Hand-derived parameter count for the layer layout documented in the header.
std::size_t closed_form_count(const DenoiserConfig& cfg) {
  const std::size_t C = cfg.base_channels_C, D = 2 * C, F = cfg.ffn_multiplier * D;
  const std::size_t time_mlp = (C * 2 * C + 2 * C) + (2 * C * 2 * C + 2 * C);
  const std::size_t time_proj = 2 * C * C + C;
  const std::size_t in_conv = C * 12 * 3 + C;
  const std::size_t enc1 = C * C * 3 + C + 2 * C;
  const std::size_t enc2 = 2 * C * C * 3 + 2 * C + 2 * 2 * C;
  const std::size_t enc3 = 2 * C * 2 * C * 3 + 2 * C + 2 * 2 * C;
  const std::size_t attn = 4 * (D * D + D);
  const std::size_t ln = 2 * (2 * D);
  const std::size_t ffn = D * F + F + F * D + D;
  const std::size_t dec1 = C * 2 * C * 3 + C + 2 * C;
  const std::size_t dec2 = C * C * 3 + C + 2 * C;
  const std::size_t dec_out = 6 * C * 3 + 6;
  const std::size_t fuse = 6 * (C + 6) + 6;
  return time_mlp + time_proj + in_conv + enc1 + enc2 + enc3 + attn + ln + ffn + dec1 + dec2 +
         dec_out + fuse;
}

TEST(Config, Validation) {
  DenoiserConfig c;
  EXPECT_NO_THROW(c.validate());
  c.base_channels_C = 6;  // 2C = 12 not divisible into 4 heads of even width
  EXPECT_IMUDIFF_ERROR(c.validate(), config);
  c = DenoiserConfig{};
  c.window_L = 3;
  EXPECT_IMUDIFF_ERROR(c.validate(), config);
  c = DenoiserConfig{};
  c.in_channels = 6;
  EXPECT_IMUDIFF_ERROR(c.validate(), config);
  const nlohmann::json j = tiny();
  EXPECT_EQ(j.get<DenoiserConfig>(), tiny());
}

TEST(Parameters, CountMatchesClosedForm) {
  for (const auto& cfg : {tiny(), DenoiserConfig{}, DenoiserConfig{8, 4, 4, 32, 12, 6}}) {
    const auto w = init_weights(cfg, 1);
    EXPECT_EQ(w.parameter_count(), closed_form_count(cfg)) << cfg.base_channels_C;
    std::size_t total = 0;
    for (const auto& p : w.parameters()) total += p.numel();
    EXPECT_EQ(total, w.parameter_count());
  }
  EXPECT_EQ(init_weights(DenoiserConfig{}, 1).parameter_count(), 91728u);
}

TEST(Parameters, NamesAreUniqueAndBuffersSeparate) {
  const auto w = init_weights(tiny(), 2);
  std::set<std::string> names;
  for (const auto& [n, t] : w.named_parameters()) {
    EXPECT_TRUE(names.insert(n).second) << n;
    EXPECT_TRUE(t.requires_grad()) << n;
  }
  for (const auto& [n, t] : w.named_buffers()) {
    EXPECT_TRUE(names.insert(n).second) << n;
    EXPECT_FALSE(t.requires_grad()) << n;
  }
  EXPECT_EQ(w.named_buffers().size(), 10u);
}

TEST(Init, SeedDeterminismAndBounds) {
  const auto a = init_weights(tiny(), 5), b = init_weights(tiny(), 5), c = init_weights(tiny(), 6);
  const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].second.values(), vb = pb[i].second.values(), vc = pc[i].second.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin())) << pa[i].first;
    any_diff |= !std::equal(va.begin(), va.end(), vc.begin());
  }
  EXPECT_TRUE(any_diff);
  EXPECT_TRUE(std::all_of(a.enc1.gamma.values().begin(), a.enc1.gamma.values().end(),
                          [](double v) { return v == 1.0; }));
  EXPECT_TRUE(std::all_of(a.enc1.beta.values().begin(), a.enc1.beta.values().end(),
                          [](double v) { return v == 0.0; }));
  // He-uniform: |w| <= sqrt(6 / fan_in), fan_in = 12 * 3 for the input conv
  const double bound = std::sqrt(6.0 / 36.0);
  for (double v : a.in_w.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(Embedding, SinusoidalProperties) {
  const std::size_t C = 8;
  const std::vector<std::size_t> t0{0};
  const auto e0 = sinusoidal_embedding(t0, C);
  for (std::size_t k = 0; k < C / 2; ++k) {
    EXPECT_EQ(e0.values()[k], 0.0);
    EXPECT_EQ(e0.values()[C / 2 + k], 1.0);
  }
  std::vector<std::size_t> ts(100);
  std::iota(ts.begin(), ts.end(), 0);
  const auto e = sinusoidal_embedding(ts, C);
  for (std::size_t b = 0; b < 100; ++b) {
    double n2 = 0;
    for (std::size_t k = 0; k < C; ++k) n2 += std::pow(e.values()[b * C + k], 2);
    EXPECT_NEAR(n2, C / 2.0, 1e-12);
  }
  bool differ = false;
  for (std::size_t k = 0; k < C; ++k) differ |= e.values()[C + k] != e.values()[2 * C + k];
  EXPECT_TRUE(differ);
  // lowest frequency is 1e-4: its sine at t = 99 is sin(99e-4)
  EXPECT_NEAR(e.values()[99 * C + C / 2 - 1], std::sin(99e-4), 1e-15);
  EXPECT_NEAR(e.values()[99 * C + 0], std::sin(99.0), 1e-12);
}

TEST(Embedding, MlpOutputWidth) {
  const auto cfg = tiny();
  const auto w = init_weights(cfg, 1);
  const std::vector<std::size_t> t{0, 5, 19};
  const auto e = timestep_embedding(t, w, cfg);
  EXPECT_EQ(e.shape(), (ad::Shape{3, 2 * cfg.base_channels_C}));
}

TEST(Forward, OutputShapeDefaultConfig) {
  DenoiserConfig cfg;
  auto w = init_weights(cfg, 1);
  const std::vector<std::size_t> t{3, 50};
  const auto y = denoiser_forward(randn({2, 6, 200}, 1), t, randn({2, 6, 200}, 2), w, cfg, Mode::eval);
  EXPECT_EQ(y.shape(), (ad::Shape{2, 6, 200}));
}

TEST(Forward, ShapeContract) {
  const auto cfg = tiny();
  auto w = init_weights(cfg, 1);
  const std::vector<std::size_t> t{1, 2};
  EXPECT_IMUDIFF_ERROR(denoiser_forward(randn({2, 6, 15}, 1), t, randn({2, 6, 15}, 2), w, cfg, Mode::eval),
                       contract);
  EXPECT_IMUDIFF_ERROR(denoiser_forward(randn({2, 6, 16}, 1), t, randn({1, 6, 16}, 2), w, cfg, Mode::eval),
                       contract);
  const std::vector<std::size_t> t1{1};
  EXPECT_IMUDIFF_ERROR(denoiser_forward(randn({2, 6, 16}, 1), t1, randn({2, 6, 16}, 2), w, cfg, Mode::eval),
                       contract);
}

TEST(Forward, EvalDeterministicAndBatchSizeOneWorks) {
  const auto cfg = tiny();
  auto w = init_weights(cfg, 3);
  const std::vector<std::size_t> t{7};
  const auto x = randn({1, 6, 16}, 4), c = randn({1, 6, 16}, 5);
  const auto a = denoiser_forward(x, t, c, w, cfg, Mode::eval);
  const auto b = denoiser_forward(x, t, c, w, cfg, Mode::eval);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Forward, EvalModeHasNoCrossBatchCoupling) {
  const auto cfg = tiny();
  auto w = init_weights(cfg, 3);
  const std::size_t B = 4, n = 6 * 16;
  const auto x = randn({B, 6, 16}, 6), c = randn({B, 6, 16}, 7);
  const std::vector<std::size_t> t{1, 9, 4, 0};
  const auto y = denoiser_forward(x, t, c, w, cfg, Mode::eval);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<double> xp(B * n), cp(B * n);
  std::vector<std::size_t> tp(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(x.values().begin() + perm[b] * n, n, xp.begin() + b * n);
    std::copy_n(c.values().begin() + perm[b] * n, n, cp.begin() + b * n);
    tp[b] = t[perm[b]];
  }
  const auto yp = denoiser_forward(Tensor::from({B, 6, 16}, xp), tp, Tensor::from({B, 6, 16}, cp), w,
                                   cfg, Mode::eval);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(yp.values()[b * n + i], y.values()[perm[b] * n + i]);
    }
  }
}

TEST(Forward, TrainModeUpdatesRunningStatistics) {
  const auto cfg = tiny();
  auto w = init_weights(cfg, 3);
  const std::vector<double> before(w.enc1.stats.running_mean.values().begin(),
                                   w.enc1.stats.running_mean.values().end());
  const std::vector<std::size_t> t{1, 2};
  denoiser_forward(randn({2, 6, 16}, 1), t, randn({2, 6, 16}, 2), w, cfg, Mode::train);
  const auto after = w.enc1.stats.running_mean.values();
  EXPECT_FALSE(std::equal(before.begin(), before.end(), after.begin()));
}

TEST(Init, InitialOutputScaleIsSane) {
  DenoiserConfig cfg;
  cfg.base_channels_C = 8;
  cfg.window_L = 32;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto w = init_weights(cfg, seed);
    const std::vector<std::size_t> t{0, 5, 10, 19};
    for (auto mode : {Mode::train, Mode::eval}) {
      const auto y = denoiser_forward(randn({4, 6, 32}, 100 + seed), t, randn({4, 6, 32}, 200 + seed),
                                      w, cfg, mode);
      double m = 0, s = 0;
      for (double v : y.values()) m += v;
      m /= y.numel();
      for (double v : y.values()) s += (v - m) * (v - m);
      const double sd = std::sqrt(s / y.numel());
      EXPECT_GE(sd, 0.1) << seed;
      EXPECT_LE(sd, 10.0) << seed;
    }
  }
}

// d L_simple / d theta for every weight tensor against central differences.
TEST(Gradient, EveryWeightTensorMatchesFiniteDifferences) {
  const auto cfg = tiny();
  auto w = init_weights(cfg, 11);
  // Non-trivial norm parameters so their gradients are exercised generically.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, t] : w.named_parameters()) {
    if (name.find("gamma") != std::string::npos) {
      for (double& v : t.mutable_values()) v = u(rng);
    } else if (name.find("beta") != std::string::npos || name.ends_with("_b") ||
               name.find("bias") != std::string::npos) {
      for (double& v : t.mutable_values()) v = 0.1 * (u(rng) - 1.0);
    }
  }
  const auto x = randn({2, 6, 16}, 13), c = randn({2, 6, 16}, 14), eps = randn({2, 6, 16}, 15);
  const std::vector<std::size_t> t{3, 17};
  auto loss = [&] {
    return ad::mean(ad::square(ad::sub(denoiser_forward(x, t, c, w, cfg, Mode::train), eps)));
  };
  for (const auto& [name, p] : w.named_parameters()) {
    const auto r = testing::check_gradients(loss, {p}, 1e-4, std::min<std::size_t>(p.numel(), 6),
                                            std::hash<std::string>{}(name), 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " analytic " << r.worst_analytic << " numeric "
                                     << r.worst_numeric;
  }
}

TEST(Windows, TensorRoundTrip) {
  std::vector<ImuWindow> ws;
  for (std::size_t i = 0; i < 3; ++i) {
    ImuWindow w(5);
    for (std::size_t j = 0; j < w.data.size(); ++j) w.data[j] = 100.0 * i + j;
    ws.push_back(w);
  }
  const auto t = windows_to_tensor(ws);
  EXPECT_EQ(t.shape(), (ad::Shape{3, 6, 5}));
  const auto back = tensor_to_windows(t);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i].data, ws[i].data);
}

TEST(Checkpoint, SaveLoadReproducesForward) {
  TempDir dir;
  DenoiserCheckpoint ck;
  ck.config = tiny();
  ck.weights = init_weights(ck.config, 21);
  const std::vector<std::size_t> t{1, 2};
  denoiser_forward(randn({2, 6, 16}, 1), t, randn({2, 6, 16}, 2), ck.weights, ck.config, Mode::train);
  ck.norm.mean = {1, 2, 3, 4, 5, 6};
  ck.noise_params = noise_params_from_spec(builtin_specs().lowcost);
  ck.schedule = build_schedule(ck.noise_params, 20);
  ck.train_config = {{"epochs", 3}};
  save_checkpoint(ck, dir / "m.ckpt");
  auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.norm.mean, ck.norm.mean);
  EXPECT_EQ(back.schedule.beta, ck.schedule.beta);
  EXPECT_EQ(back.noise_params.sigma_rw, ck.noise_params.sigma_rw);
  EXPECT_EQ(back.train_config.at("epochs"), 3);
  const auto pa = ck.weights.named_parameters(), pb = back.weights.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].second.values().begin(), pa[i].second.values().end(),
                           pb[i].second.values().begin()));
  }
  const auto x = randn({2, 6, 16}, 3), c = randn({2, 6, 16}, 4);
  const auto ya = denoiser_forward(x, t, c, ck.weights, ck.config, Mode::eval);
  const auto yb = denoiser_forward(x, t, c, back.weights, back.config, Mode::eval);
  EXPECT_TRUE(std::equal(ya.values().begin(), ya.values().end(), yb.values().begin()));
}

TEST(Checkpoint, ShapeDisagreementRejected) {
  TempDir dir;
  DenoiserCheckpoint ck;
  ck.config = tiny();
  ck.weights = init_weights(ck.config, 1);
  ck.schedule = build_schedule(noise_params_from_spec(builtin_specs().lowcost), 20);
  save_checkpoint(ck, dir / "m.ckpt");
  // Rewrite the header so the embedded config claims a wider network.
  auto bytes = read_text_file(dir / "m.ckpt");
  const auto nl = bytes.find('\n');
  auto header = nlohmann::json::parse(bytes.substr(0, nl));
  header["meta"]["denoiser_config"]["base_channels_C"] = 8;
  write_text_file(dir / "bad.ckpt", header.dump() + bytes.substr(nl));
  EXPECT_IMUDIFF_ERROR(load_checkpoint(dir / "bad.ckpt"), format);
}

}  // namespace
}  // namespace imudiff
