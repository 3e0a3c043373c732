#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "imudiff/ad/ops.hpp"
#include "imudiff/ad/tensor.hpp"
#include "imudiff/core_data.hpp"
#include "imudiff/schedule.hpp"
#include "imudiff/sim.hpp"

namespace imudiff {

struct DenoiserConfig {
  std::size_t base_channels_C = 32;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t window_L = 200;
  std::size_t in_channels = 12;
  std::size_t out_channels = 6;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

// Convolution (k = 3, same padding) followed by batch norm and ReLU.
struct ConvBlock {
  ad::Tensor weight, bias, gamma, beta;
  ad::BatchNormBuffers stats;
};

struct DenoiserWeights {
  // Timestep MLP: C -> 2C -> 2C with GELU in between.
  ad::Tensor time_w1, time_b1, time_w2, time_b2;
  ad::Tensor time_proj_w, time_proj_b;  // 2C -> C for the C-wide encoder stage
  ad::Tensor in_w, in_b;                 // 12 -> C initial convolution
  ConvBlock enc1, enc2, enc3;            // C -> C, C -> 2C, 2C -> 2C
  ad::AttentionWeights attn;             // width 2C
  ad::Tensor ln1_gamma, ln1_beta, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_gamma, ln2_beta;
  ConvBlock dec1, dec2;                  // 2C -> C, C -> C
  ad::Tensor dec_out_w, dec_out_b;       // C -> 6
  ad::Tensor fuse_w, fuse_b;             // 1x1 conv over concat(enc1, decoder output)

  // Trainable tensors in a fixed order, with stable names.
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  // Batch-norm running statistics.
  std::vector<std::pair<std::string, ad::Tensor>> named_buffers() const;
  std::vector<ad::Tensor> parameters() const;
  std::size_t parameter_count() const;
  // Independent storage with identical values.
  DenoiserWeights deep_copy() const;
};

// He-uniform (fan-in) weights, zero biases, unit norm scales; deterministic in seed.
DenoiserWeights init_weights(const DenoiserConfig& config, std::uint64_t seed);

// Sinusoidal features [B, C]: sin(t f_k) then cos(t f_k), f_k log-spaced from 1 to 1e-4.
ad::Tensor sinusoidal_embedding(std::span<const std::size_t> t, std::size_t C);
// Sinusoidal features passed through the timestep MLP -> [B, 2C].
ad::Tensor timestep_embedding(std::span<const std::size_t> t, const DenoiserWeights& w,
                              const DenoiserConfig& config);

enum class Mode { train, eval };

// eps_hat[B, 6, L] = eps_theta(x_t, t, c). Train mode updates batch-norm buffers.
ad::Tensor denoiser_forward(const ad::Tensor& x_t, std::span<const std::size_t> t,
                            const ad::Tensor& c, DenoiserWeights& w, const DenoiserConfig& config,
                            Mode mode);

// Stacks windows into [B, 6, L] and back.
ad::Tensor windows_to_tensor(std::span<const ImuWindow> windows);
std::vector<ImuWindow> tensor_to_windows(const ad::Tensor& t);

// Everything needed to sample from a trained model.
struct DenoiserCheckpoint {
  DenoiserConfig config;
  DenoiserWeights weights;
  NormStats norm;
  NoiseParams noise_params;  // low-cost sensor, physical units
  AxisSchedule schedule;     // normalized-space schedule used in training
  nlohmann::json train_config = nlohmann::json::object();
};

void save_checkpoint(const DenoiserCheckpoint& ckpt, const std::filesystem::path& path);
DenoiserCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace imudiff
