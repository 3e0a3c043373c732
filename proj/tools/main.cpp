#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "commands.hpp"
#include "imudiff/error.hpp"
#include "support.hpp"

namespace {

int exit_code(imudiff::ErrorKind kind) {
  switch (kind) {
    case imudiff::ErrorKind::io: return 3;
    case imudiff::ErrorKind::numerical: return 4;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace imudiff::cli;
#if defined(__GLIBC__)
  // Large tensor buffers stay on the heap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Virtual high-grade IMU synthesis with a noise-aware conditional diffusion model"};
  app.set_version_flag("--version", IMUDIFF_VERSION);
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Generate paired synthetic IMU data");
  simulate->add_option("--profile", sim.profile, "Trajectory profile JSON")->required();
  simulate->add_option("--specs", sim.specs, "Sensor spec JSON or 'builtin'");
  simulate->add_option("--out-dir", sim.out_dir, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Noise seed");

  AllanOptions av;
  auto* allan = app.add_subcommand("allan", "Allan variance analysis and noise coefficient fit");
  allan->add_option("--input", av.input, "IMU CSV")->required();
  allan->add_option("--out", av.out, "Fit JSON")->required();
  allan->add_option("--curve-out", av.curve_out, "Curve CSV (one row per tau)");
  allan->add_option("--svg-out", av.svg_out, "Log-log plot of the curves");

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "Train the conditional denoiser");
  train->add_option("--lowcost", tr.lowcost, "Low-cost IMU CSV (condition)")->required();
  train->add_option("--reference", tr.reference, "Reference IMU CSV (target)")->required();
  train->add_option("--noise-params", tr.noise_params, "Low-cost noise params JSON")->required();
  train->add_option("--config", tr.config, "Training config JSON")->required();
  train->add_option("--out", tr.out, "Checkpoint path")->required();
  train->add_option("--loss-out", tr.loss_out, "Loss history CSV");

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate virtual IMU data");
  generate->add_option("--lowcost", gen.lowcost, "Low-cost IMU CSV")->required();
  generate->add_option("--checkpoint", gen.checkpoint, "Trained checkpoint")->required();
  generate->add_option("--out", gen.out, "Virtual IMU CSV")->required();
  generate->add_option("--stitch", gen.stitch, "non-overlapping | overlap-average");
  generate->add_option("--stride", gen.stride, "Window stride for overlap-average");
  generate->add_option("--seed", gen.seed, "Sampling seed");

  EvaluateOptions ev;
  double segment = 0.0;
  auto* evaluate = app.add_subcommand("evaluate", "Per-axis RMSE and dead-reckoning statistics");
  evaluate->add_option("--candidate", ev.candidate, "Candidate IMU CSV")->required();
  evaluate->add_option("--baseline", ev.baseline, "Baseline IMU CSV")->required();
  evaluate->add_option("--reference", ev.reference, "Reference IMU CSV")->required();
  evaluate->add_option("--truth-nav", ev.truth_nav, "Truth trajectory CSV")->required();
  evaluate->add_option("--out", ev.out, "Result JSON")->required();
  auto* seg = evaluate->add_option("--segment-s", segment, "Dead-reckon only the first N seconds");
  evaluate->add_option("--series-dir", ev.series_dir, "Directory for error series files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (*seg) ev.segment_s = segment;

  try {
    if (*simulate) return run_simulate(sim);
    if (*allan) return run_allan(av);
    if (*train) return run_train(tr);
    if (*generate) return run_generate(gen);
    if (*evaluate) return run_evaluate(ev);
  } catch (const imudiff::Error& e) {
    log(LogLevel::error, std::string(imudiff::to_string(e.kind())) + ": " + e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    log(LogLevel::error, std::string("config: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return 1;
  }
  return 2;
}
