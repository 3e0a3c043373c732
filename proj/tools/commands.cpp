#include "commands.hpp"

#include <cmath>
#include <iostream>

#include <nlohmann/json.hpp>

#include "imudiff/allan.hpp"
#include "imudiff/core_data.hpp"
#include "imudiff/denoiser.hpp"
#include "imudiff/error.hpp"
#include "imudiff/nav_eval.hpp"
#include "imudiff/sampler.hpp"
#include "imudiff/sim.hpp"
#include "imudiff/train.hpp"
#include "support.hpp"

namespace imudiff::cli {

namespace fs = std::filesystem;

namespace {

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + dir.string() + ": " + ec.message());
}

SensorPair load_specs(const std::string& arg, nlohmann::json& canonical) {
  SensorPair specs;
  if (arg == "builtin") {
    specs = builtin_specs();
  } else {
    const auto j = read_json_file(arg);
    if (!j.contains("reference") || !j.contains("lowcost")) {
      fail(ErrorKind::config, "specs: expected objects 'reference' and 'lowcost'");
    }
    specs.reference = j.at("reference").get<SensorSpec>();
    specs.lowcost = j.at("lowcost").get<SensorSpec>();
  }
  canonical = {{"reference", specs.reference}, {"lowcost", specs.lowcost}};
  return specs;
}

void check_paired(const ImuSeries& a, const ImuSeries& b, const std::string& what) {
  if (a.size() != b.size() || a.sample_rate_hz() != b.sample_rate_hz() ||
      std::abs(a.start_time_s() - b.start_time_s()) > 0.5 * a.dt()) {
    fail(ErrorKind::contract, what + ": series are not aligned (" + std::to_string(a.size()) +
                                  " vs " + std::to_string(b.size()) + " samples)");
  }
}

}  // namespace

int run_simulate(const SimulateOptions& o) {
  RunManifest manifest("simulate");
  const auto profile_json = read_json_file(o.profile);
  const auto profile = profile_json.get<TrajectoryProfile>();
  nlohmann::json specs_json;
  const SensorPair specs = load_specs(o.specs, specs_json);
  manifest.add_input(o.profile);
  if (o.specs != "builtin") manifest.add_input(o.specs);
  manifest.set_seed(o.seed);
  manifest.set_config_hash(sha256_text(nlohmann::json{{"profile", profile},
                                                      {"specs", specs_json},
                                                      {"seed", o.seed}}
                                           .dump()));
  log(LogLevel::info, "simulating " + to_string(profile.kind) + " for " +
                          std::to_string(profile.duration_s) + " s");
  const PairedSeries pair = simulate_pair(profile, specs, o.seed);

  ensure_dir(o.out_dir);
  const fs::path truth = o.out_dir / "truth.csv", reference = o.out_dir / "reference.csv",
                 lowcost = o.out_dir / "lowcost.csv", nav = o.out_dir / "truth_nav.csv",
                 ref_noise = o.out_dir / "reference_noise.json",
                 low_noise = o.out_dir / "lowcost_noise.json";
  save_csv(pair.truth.imu, truth);
  save_csv(pair.reference, reference);
  save_csv(pair.lowcost, lowcost);
  save_trajectory_csv(pair.truth.nav, nav);
  save_noise_params(pair.reference_params, ref_noise);
  save_noise_params(pair.lowcost_params, low_noise);
  for (const auto& p : {truth, reference, lowcost, nav, ref_noise, low_noise}) manifest.add_output(p);
  manifest.write(o.out_dir / "manifest.json");
  return 0;
}

int run_allan(const AllanOptions& o) {
  RunManifest manifest("allan");
  const ImuSeries series = load_csv(o.input);
  manifest.add_input(o.input);
  const SeriesAllan result = analyze_series(series);
  nlohmann::json fits = nlohmann::json::object();
  for (std::size_t c = 0; c < kChannels; ++c) fits[std::string(kChannelNames[c])] = result.fits[c];
  const nlohmann::json out = {
      {"schema_version", 1},
      {"sample_rate_hz", series.sample_rate_hz()},
      {"samples", series.size()},
      {"fits", fits},
      {"noise_params", to_noise_params(result.fits, series.sample_rate_hz())}};
  write_text_file(o.out, out.dump(2) + "\n");
  manifest.add_output(o.out);
  if (!o.curve_out.empty()) {
    save_curves_csv(result.curves, o.curve_out);
    manifest.add_output(o.curve_out);
  }
  if (!o.svg_out.empty()) {
    save_curves_svg(result.curves, o.svg_out);
    manifest.add_output(o.svg_out);
  }
  manifest.write(with_suffix(o.out, ".manifest.json"));
  return 0;
}

int run_train(const TrainOptions& o) {
  RunManifest manifest("train");
  const auto cfg_json = read_json_file(o.config);
  const auto cfg = cfg_json.get<TrainConfig>();
  cfg.validate();
  NoiseParams params = load_noise_params(o.noise_params);
  const ImuSeries lowcost = load_csv(o.lowcost);
  const ImuSeries reference = load_csv(o.reference);
  check_paired(lowcost, reference, "train: --lowcost and --reference are unpaired");
  for (const auto& p : {o.lowcost, o.reference, o.noise_params, o.config}) manifest.add_input(p);
  manifest.set_seed(cfg.seed);
  manifest.set_config_hash(sha256_text(nlohmann::json(cfg).dump()));
  if (std::abs(params.rate_hz - lowcost.sample_rate_hz()) > 1e-9 * params.rate_hz) {
    log(LogLevel::warn, "noise params rate differs from the series rate; using the series rate");
    ChannelArray density = params.white_density;
    params.rate_hz = lowcost.sample_rate_hz();
    params.set_white_density(density);
  }

  const auto raw_low = make_windows(lowcost, cfg.windowing);
  const auto raw_ref = make_windows(reference, cfg.windowing);
  TrainingData data;
  data.norm = compute_norm_stats(raw_ref);
  data.lowcost = normalize_all(raw_low, data.norm);
  data.reference = normalize_all(raw_ref, data.norm);
  data.lowcost_params = params;
  if (raw_low.size() >= 2) data.lowcost_params.sigma_b0 = estimate_b0_std(raw_low, raw_ref);
  log(LogLevel::info, "training on " + std::to_string(data.lowcost.size()) + " windows for " +
                          std::to_string(cfg.epochs) + " epochs");

  const std::size_t every = std::max<std::size_t>(1, cfg.epochs / 10);
  const FitResult result = fit(data, cfg, [&](std::size_t epoch, const LossReport& r) {
    const LogLevel level = epoch % every == 0 ? LogLevel::info : LogLevel::debug;
    log(level, "epoch " + std::to_string(epoch) + " l_simple=" + std::to_string(r.l_simple) +
                   " l_total=" + std::to_string(r.l_total));
  });

  const fs::path loss_out = o.loss_out.empty() ? with_suffix(o.out, ".loss.csv") : o.loss_out;
  const fs::path norm_out = with_suffix(o.out, ".norm.json");
  ensure_dir(o.out.parent_path());
  save_checkpoint(result.checkpoint, o.out);
  save_loss_history_csv(result.history, loss_out);
  save_norm_stats(data.norm, norm_out);
  for (const auto& p : {o.out, loss_out, norm_out}) manifest.add_output(p);
  manifest.write(with_suffix(o.out, ".manifest.json"));
  return 0;
}

int run_generate(const GenerateOptions& o) {
  RunManifest manifest("generate");
  SampleConfig cfg;
  cfg.seed = o.seed;
  cfg.stitch_mode = stitch_mode_from_string(o.stitch);
  cfg.stride = o.stride;
  const DenoiserCheckpoint ckpt = load_checkpoint(o.checkpoint);
  const ImuSeries lowcost = load_csv(o.lowcost);
  for (const auto& p : {o.lowcost, o.checkpoint}) manifest.add_input(p);
  manifest.set_seed(o.seed);
  const double rate = ckpt.noise_params.rate_hz;
  if (std::abs(rate - lowcost.sample_rate_hz()) > 1e-6 * rate) {
    fail(ErrorKind::contract, "checkpoint was trained at " + std::to_string(rate) +
                                  " Hz but the input is " +
                                  std::to_string(lowcost.sample_rate_hz()) + " Hz");
  }
  if (lowcost.size() < ckpt.config.window_L) {
    fail(ErrorKind::contract, "input has " + std::to_string(lowcost.size()) +
                                  " samples, shorter than the checkpoint window length " +
                                  std::to_string(ckpt.config.window_L));
  }
  const GeneratedSeries gen = generate_series(lowcost, ckpt, cfg);
  for (const auto& w : gen.warnings) log(LogLevel::warn, w);
  save_csv(gen.series, o.out);

  const fs::path provenance = with_suffix(o.out, ".provenance.json");
  const nlohmann::json prov = {{"schema_version", 1},
                               {"checkpoint", o.checkpoint.string()},
                               {"checkpoint_sha256", sha256_file(o.checkpoint)},
                               {"input", o.lowcost.string()},
                               {"input_sha256", sha256_file(o.lowcost)},
                               {"seed", o.seed},
                               {"stitch_mode", to_string(cfg.stitch_mode)},
                               {"stride", cfg.stitch_mode == StitchMode::non_overlapping
                                              ? ckpt.config.window_L
                                              : (cfg.stride == 0 ? ckpt.config.window_L / 2
                                                                 : cfg.stride)},
                               {"windows", gen.windows},
                               {"passthrough_samples", gen.passthrough_samples},
                               {"warnings", gen.warnings}};
  write_text_file(provenance, prov.dump(2) + "\n");
  manifest.set_config_hash(sha256_text(prov.dump()));
  manifest.add_output(o.out);
  manifest.add_output(provenance);
  manifest.write(with_suffix(o.out, ".manifest.json"));
  return 0;
}

int run_evaluate(const EvaluateOptions& o) {
  RunManifest manifest("evaluate");
  const ImuSeries candidate = load_csv(o.candidate);
  const ImuSeries baseline = load_csv(o.baseline);
  const ImuSeries reference = load_csv(o.reference);
  const Trajectory truth_all = load_trajectory_csv(o.truth_nav);
  for (const auto& p : {o.candidate, o.baseline, o.reference, o.truth_nav}) manifest.add_input(p);
  check_paired(candidate, reference, "evaluate: --candidate vs --reference");
  check_paired(baseline, reference, "evaluate: --baseline vs --reference");

  const std::size_t N = reference.size();
  std::size_t n = N;
  if (o.segment_s) {
    if (!(*o.segment_s > 0.0)) fail(ErrorKind::config, "--segment-s must be positive");
    n = std::min(N, static_cast<std::size_t>(std::llround(*o.segment_s * reference.sample_rate_hz())) + 1);
  }
  if (truth_all.size() < n ||
      std::abs(truth_all.front().time_s - reference.start_time_s()) > 0.5 * reference.dt() ||
      std::abs(truth_all[n - 1].time_s - reference.time(n - 1)) > 0.5 * reference.dt()) {
    fail(ErrorKind::contract, "evaluate: --truth-nav is not time-aligned with the IMU series");
  }
  const Trajectory truth(truth_all.begin(), truth_all.begin() + static_cast<std::ptrdiff_t>(n));

  const auto rmse_c = rmse_per_axis(candidate, reference);
  const auto rmse_b = rmse_per_axis(baseline, reference);
  std::array<double, kChannels> imp{};
  for (std::size_t c = 0; c < kChannels; ++c) imp[c] = improvement_percent(rmse_b[c], rmse_c[c]);

  const Trajectory sol_c = dead_reckon(candidate.slice(0, n), truth.front());
  const Trajectory sol_b = dead_reckon(baseline.slice(0, n), truth.front());
  NavComparison cmp{error_stats(sol_b, truth), error_stats(sol_c, truth)};
  const double h_c = horizontal_rms(sol_c, truth), h_b = horizontal_rms(sol_b, truth);

  nlohmann::json out = {
      {"schema_version", 1},
      {"imu_rmse",
       {{"channel_order", kChannelNames},
        {"candidate", rmse_c},
        {"baseline", rmse_b},
        {"improvement_percent", imp}}},
      {"navigation", comparison_json(cmp)},
      {"horizontal_rms_m",
       {{"candidate", h_c}, {"baseline", h_b}, {"improvement_percent", improvement_percent(h_b, h_c)}}},
      {"segment_s", static_cast<double>(n - 1) * reference.dt()},
      {"samples", n}};
  write_text_file(o.out, out.dump(2) + "\n");
  manifest.add_output(o.out);

  const fs::path dir = o.series_dir.empty() ? o.out.parent_path() : o.series_dir;
  ensure_dir(dir);
  const std::string stem = o.out.stem().string();
  const fs::path err_c = dir / (stem + ".candidate_errors.csv"),
                 err_b = dir / (stem + ".baseline_errors.csv"),
                 traj_c = dir / (stem + ".candidate_trajectory.csv"),
                 traj_b = dir / (stem + ".baseline_trajectory.csv"),
                 svg = dir / (stem + ".horizontal_error.svg");
  save_error_series_csv(sol_c, truth, err_c);
  save_error_series_csv(sol_b, truth, err_b);
  save_trajectory_csv(sol_c, traj_c);
  save_trajectory_csv(sol_b, traj_b);
  save_horizontal_error_svg({{"baseline", sol_b}, {"candidate", sol_c}}, truth, svg);
  for (const auto& p : {err_c, err_b, traj_c, traj_b, svg}) manifest.add_output(p);

  std::cout << "Per-axis RMSE vs reference\n";
  for (std::size_t c = 0; c < kChannels; ++c) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-3s baseline %.6g  candidate %.6g  improvement %.1f%%\n",
                  std::string(kChannelNames[c]).c_str(), rmse_b[c], rmse_c[c], imp[c]);
    std::cout << line;
  }
  std::cout << format_comparison_table(cmp, "baseline", "candidate");
  manifest.write(with_suffix(o.out, ".manifest.json"));
  return 0;
}

}  // namespace imudiff::cli
