// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gradcheck.hpp"
#include "imudiff/allan.hpp"
#include "imudiff/core_data.hpp"
#include "imudiff/nav_eval.hpp"
#include "imudiff/sampler.hpp"
#include "imudiff/schedule.hpp"
#include "imudiff/sim.hpp"
#include "imudiff/train.hpp"

namespace {

using namespace imudiff;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ChannelArray filled(double v) {
  ChannelArray a;
  a.fill(v);
  return a;
}

ImuSeries zeros(std::size_t n) {
  ChannelData d;
  for (auto& c : d) c.assign(n, 0.0);
  return ImuSeries(200.0, 0.0, std::move(d));
}

Outcome allan_oracle() {
  const double sigma = 0.01, rate = 200.0;
  NoiseParams p;
  p.rate_hz = rate;
  p.set_white_density(filled(sigma / std::sqrt(rate)));
  const ImuSeries noisy = corrupt(zeros(1'000'000), p, 1);
  const auto taus = default_taus(noisy.size(), rate);
  const AvCurve curve = compute_av(noisy.channel(gyro_x), rate, taus);
  double worst_dev = 0.0, worst_tau = 0.0, worst_short = 0.0;
  for (std::size_t i = 0; i < curve.taus.size(); ++i) {
    const double tau = curve.taus[i];
    if (tau < 0.01 - 1e-12 || tau > 10.0 + 1e-9) continue;
    const double n = std::round(tau * rate);
    const double dev = std::abs(std::sqrt(curve.sigma2[i]) / (sigma / std::sqrt(n)) - 1.0);
    if (dev > worst_dev) {
      worst_dev = dev;
      worst_tau = tau;
    }
    if (tau <= 1.0) worst_short = std::max(worst_short, dev);
  }
  const AvFit fit = fit_noise_coeffs(curve);
  const double arw_err = std::abs(fit.arw / (sigma / std::sqrt(rate)) - 1.0);
  return {worst_dev < 0.05 && fit.has(NoiseTerm::arw) && arw_err < 0.10,
          fmt("worst deviation %.2f%% at tau %.3g s (limit 5%%; %.2f%% for tau <= 1 s), ARW error %.2f%% (limit 10%%)",
              100 * worst_dev, worst_tau, 100 * worst_short, 100 * arw_err)};
}

Outcome error_model_round_trip() {
  const double N = 1e-3, K = 3e-3;
  double worst_n = 0.0, worst_k = 0.0;
  bool all_present = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    NoiseParams p;
    p.set_white_density(filled(N));
    p.sigma_rw = filled(K);
    const SeriesAllan a = analyze_series(corrupt(zeros(1'000'000), p, seed));
    for (const auto& f : a.fits) {
      all_present = all_present && f.has(NoiseTerm::arw) && f.has(NoiseTerm::rrw);
      worst_n = std::max(worst_n, std::abs(f.arw / N - 1.0));
      worst_k = std::max(worst_k, std::abs(f.rrw / K - 1.0));
    }
  }
  return {all_present && worst_n < 0.2 && worst_k < 0.2,
          fmt("20 seeds x 6 axes, worst white error %.1f%%, worst random-walk error %.1f%% (limit 20%%)",
              100 * worst_n, 100 * worst_k)};
}

Outcome schedule_invariants() {
  bool ok = true;
  std::string why;
  const SensorPair specs = builtin_specs();
  for (const auto& spec : {specs.lowcost, specs.reference}) {
    const AxisSchedule s = build_schedule(noise_params_from_spec(spec), 100);
    for (std::size_t c = 0; c < kChannels; ++c) {
      const auto& b = s.beta[c];
      ok = ok && !s.fallback[c];
      ok = ok && std::abs(b.front() - 1e-4) < 1e-15 && std::abs(b.back() - 0.02) < 1e-15;
      for (std::size_t t = 0; t < s.T; ++t) {
        ok = ok && b[t] >= 1e-4 - 1e-18 && b[t] <= 0.02 + 1e-18;
        if (t > 0) ok = ok && s.alpha_bar[c][t] < s.alpha_bar[c][t - 1];
      }
    }
  }
  if (!ok) why = "range, endpoint or monotonicity violated; ";
  NoiseParams degenerate = noise_params_from_spec(specs.lowcost);
  degenerate.sigma_rw[gyro_y] = 0.0;
  const AxisSchedule s = build_schedule(degenerate, 100);
  const bool fallback = s.fallback[gyro_y] && !s.fallback[gyro_x];
  if (!fallback) why += "fallback did not engage; ";
  return {ok && fallback, why.empty() ? "both datasheet sensors, T=100, fallback on zero random walk" : why};
}

TrainingData tiny_data(std::size_t windows, std::size_t L, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  TrainingData d;
  for (std::size_t i = 0; i < windows; ++i) {
    ImuWindow x(L), c(L);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      x.data[k] = nd(rng);
      c.data[k] = x.data[k] + 0.3 * nd(rng);
    }
    d.reference.push_back(x);
    d.lowcost.push_back(c);
  }
  d.norm.mean = {0, 0, 0, 0, 0, 9.8};
  d.norm.std = {0.2, 0.2, 0.3, 0.5, 0.5, 0.1};
  d.lowcost_params = noise_params_from_spec(builtin_specs().lowcost);
  d.lowcost_params.sigma_b0 = filled(1e-3);
  return d;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.base_channels_C = 4;
  cfg.model.heads = 2;
  cfg.model.window_L = 16;
  cfg.windowing = {16, 16};
  cfg.T = 20;
  cfg.batch_size = 2;
  cfg.seed = 3;
  return cfg;
}

Outcome gradient_check() {
  const TrainingData d = tiny_data(2, 16, 5);
  Trainer tr(tiny_config(), d.norm, d.lowcost_params);
  std::mt19937_64 rng(7);
  const StepInputs in = draw_step_inputs(2, tr, rng);
  const auto loss = [&] {
    LossReport r;
    return total_loss(d.lowcost, d.reference, tr, tr.cfg.warmup_epochs + 1, in, r);
  };
  LossReport probe;
  total_loss(d.lowcost, d.reference, tr, tr.cfg.warmup_epochs + 1, in, probe);
  const auto r = testing::check_gradients(loss, tr.params, 1e-4, 64, 11);
  return {probe.physics_active && r.checked >= 50 && r.max_rel_error < 1e-4,
          fmt("%zu parameters, max relative error %.2e (limit 1e-4), physics terms active", r.checked,
              r.max_rel_error)};
}

Outcome loss_identities() {
  bool examples = true;
  const auto z = ad::Tensor::zeros({1, 6, 4});
  examples = examples && loss_simple(z, z).item() == 0.0;
  examples = examples && loss_simple(z, ad::Tensor::full({1, 6, 4}, 1.0)).item() == 1.0;
  examples = examples && loss_smooth(ad::Tensor::zeros({1, 1, 3}), ad::Tensor::from({1, 1, 3}, {0, 1, 0})).item() == 1.0;
  examples = examples && loss_smooth(ad::Tensor::from({1, 1, 3}, {1, 2, 3}), ad::Tensor::from({1, 1, 3}, {3, 4, 5})).item() == 0.0;
  examples = examples && std::abs(loss_integral(ad::Tensor::from({1, 1, 2}, {1, 1}), ad::Tensor::zeros({1, 1, 2}), 0.005).item() - 0.0075) < 1e-15;
  {
    std::vector<ImuWindow> a(2, ImuWindow(4)), b(2, ImuWindow(4));
    for (double& v : a[1].data) v = 2.0;
    for (double v : estimate_b0_std(a, b)) examples = examples && v == 1.0;
  }

  TrainConfig cfg = tiny_config();
  cfg.epochs = 25;
  cfg.warmup_epochs = 10;
  cfg.batch_size = 4;
  const FitResult res = fit(tiny_data(12, 16, 9), cfg);
  std::size_t before = 0, after = 0;
  double worst = 0.0;
  bool gating = true;
  for (const auto& r : res.history) {
    if (r.epoch <= cfg.warmup_epochs) {
      ++before;
      gating = gating && !r.physics_active && r.l_total == r.l_simple;
    } else {
      ++after;
      gating = gating && r.physics_active;
      worst = std::max(worst, std::abs(r.l_total - (r.l_simple + 0.1 * r.l_smooth + 0.1 * r.l_integral)));
    }
  }
  return {examples && gating && worst <= 1e-12 && before > 0 && after > 0,
          fmt("examples %s, %zu warm-up steps exact, %zu later steps max deviation %.1e", examples ? "exact" : "WRONG",
              before, after, worst)};
}

struct SeedResult {
  int axis_wins = 0;
  double horiz_low = 0.0, horiz_virtual = 0.0;
  bool pass() const { return axis_wins >= 5 && horiz_virtual < horiz_low; }
};

// Train on the first 60 s of a figure-eight, evaluate on the following 30 s.
SeedResult end_to_end_seed(std::uint64_t seed) {
  TrajectoryProfile profile;
  profile.kind = TrajectoryKind::figure_eight;
  profile.duration_s = 90.0;
  profile.parameters["period_s"] = 60.0;
  const PairedSeries pair = simulate_pair(profile, builtin_specs(), seed);
  const std::size_t split = 60 * 200;
  const ImuSeries train_low = pair.lowcost.slice(0, split), train_ref = pair.reference.slice(0, split);
  const std::size_t n_test = pair.lowcost.size() - split;
  const ImuSeries test_low = pair.lowcost.slice(split, n_test), test_ref = pair.reference.slice(split, n_test);

  TrainConfig cfg;
  cfg.model.base_channels_C = 8;
  cfg.model.heads = 4;
  cfg.model.window_L = 32;
  cfg.windowing = {32, 32};
  cfg.T = 20;
  cfg.epochs = 500;
  cfg.batch_size = 32;
  cfg.lr = 3e-3;
  cfg.seed = seed;
  const auto raw_low = make_windows(train_low, cfg.windowing);
  const auto raw_ref = make_windows(train_ref, cfg.windowing);
  TrainingData data;
  data.norm = compute_norm_stats(raw_ref);
  data.lowcost = normalize_all(raw_low, data.norm);
  data.reference = normalize_all(raw_ref, data.norm);
  data.lowcost_params = pair.lowcost_params;
  data.lowcost_params.sigma_b0 = estimate_b0_std(raw_low, raw_ref);
  const FitResult model = fit(data, cfg);

  SampleConfig sc;
  sc.seed = seed;
  const GeneratedSeries virt = generate_series(test_low, model.checkpoint, sc);

  SeedResult out;
  const auto rl = rmse_per_axis(test_low, test_ref), rv = rmse_per_axis(virt.series, test_ref);
  for (std::size_t c = 0; c < kChannels; ++c) out.axis_wins += rv[c] < rl[c];
  const Trajectory truth(pair.truth.nav.begin() + static_cast<std::ptrdiff_t>(split), pair.truth.nav.end());
  out.horiz_low = horizontal_rms(dead_reckon(test_low, truth.front()), truth);
  out.horiz_virtual = horizontal_rms(dead_reckon(virt.series, truth.front()), truth);
  return out;
}

Outcome end_to_end() {
  int passing = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const SeedResult r = end_to_end_seed(seed);
    passing += r.pass();
    detail += fmt("seed %llu: %d/6 axes, horizontal RMS %.3g m vs low-cost %.3g m; ",
                  static_cast<unsigned long long>(seed), r.axis_wins, r.horiz_virtual, r.horiz_low);
  }
  detail += fmt("%d/4 seeds pass (need 3)", passing);
  return {passing >= 3, detail};
}

Outcome mechanization_oracle() {
  TrajectoryProfile profile;
  profile.kind = TrajectoryKind::figure_eight;
  profile.duration_s = 60.0;
  const TruthData truth = generate_truth(profile, 200.0);
  const NavErrorStats st = error_stats(dead_reckon(truth.imu, truth.nav.front()), truth.nav);
  double pos = 0.0, att = 0.0;
  for (std::size_t c = 0; c < 3; ++c) pos = std::max(pos, st.components[c].max);
  for (std::size_t c = 3; c < 6; ++c) att = std::max(att, st.components[c].max);

  ChannelData d;
  for (auto& c : d) c.assign(12001, 0.0);
  d[accel_z].assign(12001, kGravity);
  double drift = 0.0;
  for (const auto& s : dead_reckon(ImuSeries(200.0, 0.0, std::move(d)), NavState{})) {
    drift = std::max(drift, s.position.norm());
  }
  return {pos < 1e-3 && att < 1e-4 && drift < 1e-9,
          fmt("figure-eight max position error %.2e m, attitude %.2e rad; static drift %.1e m", pos, att, drift)};
}

int run(const std::string& args) {
  const std::string cmd = std::string("'") + IMUDIFF_CLI_PATH + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("imudiff_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  write_text_file(dir / "profile.json", R"({"kind":"figure-eight","duration_s":20,"parameters":{"period_s":10}})");
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.T = 20;
  cfg.batch_size = 32;
  cfg.model.base_channels_C = 8;
  cfg.model.window_L = 32;
  cfg.windowing = {32, 32};
  write_text_file(dir / "train.json", nlohmann::json(cfg).dump());

  bool ok = true;
  for (const char* run_name : {"a", "b"}) {
    const fs::path r = dir / run_name;
    ok = ok && run("simulate --profile " + q(dir / "profile.json") + " --specs builtin --seed 5 --out-dir " + q(r)) == 0;
    ok = ok && run("train --lowcost " + q(r / "lowcost.csv") + " --reference " + q(r / "reference.csv") +
                   " --noise-params " + q(r / "lowcost_noise.json") + " --config " + q(dir / "train.json") +
                   " --out " + q(r / "model.ckpt")) == 0;
    ok = ok && run("generate --lowcost " + q(r / "lowcost.csv") + " --checkpoint " + q(r / "model.ckpt") +
                   " --seed 6 --out " + q(r / "virtual.csv")) == 0;
  }
  std::size_t compared = 0;
  std::string differing;
  if (ok) {
    for (const char* f : {"truth.csv", "reference.csv", "lowcost.csv", "truth_nav.csv", "lowcost_noise.json",
                          "model.ckpt", "model.ckpt.loss.csv", "model.ckpt.norm.json", "virtual.csv"}) {
      ++compared;
      if (read_text_file(dir / "a" / f) != read_text_file(dir / "b" / f)) differing += std::string(" ") + f;
    }
  }
  fs::remove_all(dir);
  if (!ok) return {false, "a command failed"};
  return {differing.empty(), differing.empty() ? fmt("%zu output files identical across reruns", compared)
                                               : "differing:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"Allan oracle", allan_oracle},
      {"Error-model round trip", error_model_round_trip},
      {"Schedule invariants", schedule_invariants},
      {"Gradient correctness", gradient_check},
      {"Loss identities", loss_identities},
      {"Desk-scale end-to-end", end_to_end},
      {"Mechanization oracle", mechanization_oracle},
      {"Determinism", determinism},
  };
  // Optional argument: criterion numbers to run, e.g. "1237".
  const std::string only = argc > 1 ? argv[1] : "";
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && only.find(char('1' + i)) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::printf("%s %zu. %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), s);
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
