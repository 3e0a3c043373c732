#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imudiff/ad/adam.hpp"
#include "imudiff/ad/tensor.hpp"
#include "imudiff/core_data.hpp"
#include "imudiff/denoiser.hpp"
#include "imudiff/schedule.hpp"
#include "imudiff/sim.hpp"

namespace imudiff {

enum class PhysicsNorm { l1, l2 };

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  std::size_t warmup_epochs = 10;
  std::uint64_t seed = 0;
  std::size_t T = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  PhysicsNorm physics_norm = PhysicsNorm::l1;
  bool integral_includes_accel = false;
  bool b0_augmentation = true;
  DenoiserConfig model;
  WindowingConfig windowing;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossReport {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 0-based within the epoch
  double l_simple = 0.0;
  double l_smooth = 0.0;
  double l_integral = 0.0;
  double l_total = 0.0;
  bool physics_active = false;
};

// Mean squared error over all elements.
ad::Tensor loss_simple(const ad::Tensor& eps, const ad::Tensor& eps_hat);
// Bias b = c - x0_hat (physical units); mean norm of first differences along time (last axis).
ad::Tensor loss_smooth(const ad::Tensor& x0_hat_denorm, const ad::Tensor& c_denorm,
                       PhysicsNorm norm = PhysicsNorm::l1);
// Mean norm of the difference of cumulative sums of signal * dt along time (last axis).
ad::Tensor loss_integral(const ad::Tensor& x0_hat_gyro_denorm, const ad::Tensor& gt_gyro_denorm,
                         double dt, PhysicsNorm norm = PhysicsNorm::l1);

// Population std over windows of the per-window mean difference, per channel.
ChannelArray estimate_b0_std(std::span<const ImuWindow> lowcost,
                             std::span<const ImuWindow> reference);

// Normalized, paired training windows plus the statistics that define the space.
struct TrainingData {
  std::vector<ImuWindow> lowcost;    // condition
  std::vector<ImuWindow> reference;  // target
  NormStats norm;
  NoiseParams lowcost_params;  // physical units; sigma_b0 drives augmentation
};

struct Trainer {
  TrainConfig cfg;
  DenoiserWeights weights;
  AxisSchedule schedule;
  NormStats norm;
  NoiseParams lowcost_params;
  ad::AdamState adam;
  std::vector<ad::Tensor> params;

  Trainer(const TrainConfig& cfg, const NormStats& norm, const NoiseParams& lowcost_params);
};

// One optimizer step on a batch of normalized (condition, target) pairs.
LossReport train_step(std::span<const ImuWindow> condition, std::span<const ImuWindow> target,
                      Trainer& trainer, std::size_t epoch, std::mt19937_64& rng);

// Same loss graph without the optimizer update; t, eps and b0 are given explicitly.
struct StepInputs {
  std::vector<std::size_t> t;
  std::vector<double> eps;  // [B, 6, L]
  std::vector<double> b0;   // [B, 6], normalized units
};
StepInputs draw_step_inputs(std::size_t batch, const Trainer& trainer, std::mt19937_64& rng);
ad::Tensor total_loss(std::span<const ImuWindow> condition, std::span<const ImuWindow> target,
                      Trainer& trainer, std::size_t epoch, const StepInputs& inputs,
                      LossReport& report);

struct FitResult {
  DenoiserCheckpoint checkpoint;
  std::vector<LossReport> history;
};

using EpochCallback = std::function<void(std::size_t epoch, const LossReport& last)>;

FitResult fit(const TrainingData& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void save_loss_history_csv(std::span<const LossReport> history, const std::filesystem::path& path);

}  // namespace imudiff
