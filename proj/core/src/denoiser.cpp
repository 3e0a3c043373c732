#include "imudiff/denoiser.hpp"

#include <cmath>
#include <random>

#include "imudiff/ad/checkpoint.hpp"
#include "imudiff/error.hpp"

namespace imudiff {

using ad::Shape;
using ad::Tensor;

namespace {

constexpr int kCheckpointSchema = 1;
constexpr std::size_t kKernel = 3;

Tensor conv_block(const Tensor& x, ConvBlock& b, Mode mode) {
  return ad::relu(ad::batch_norm_1d(ad::conv1d(x, b.weight, b.bias), b.gamma, b.beta, b.stats,
                                    mode == Mode::train));
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  Tensor he_uniform(Shape shape, std::size_t fan_in) {
    std::mt19937_64 rng(derive_seed(seed_, counter_++));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
  }
  static Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
  static Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }

  ConvBlock block(std::size_t cin, std::size_t cout) {
    ConvBlock b;
    b.weight = he_uniform({cout, cin, kKernel}, cin * kKernel);
    b.bias = zeros(cout);
    b.gamma = ones(cout);
    b.beta = zeros(cout);
    b.stats.running_mean = Tensor::zeros({cout});
    b.stats.running_var = Tensor::full({cout}, 1.0);
    return b;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

void add_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
               const ConvBlock& b) {
  out.emplace_back(name + ".weight", b.weight);
  out.emplace_back(name + ".bias", b.bias);
  out.emplace_back(name + ".bn.gamma", b.gamma);
  out.emplace_back(name + ".bn.beta", b.beta);
}

}  // namespace

void DenoiserConfig::validate() const {
  if (base_channels_C < 2 || base_channels_C % 2 != 0) {
    fail(ErrorKind::config, "denoiser: base_channels_C must be even and >= 2");
  }
  if (heads == 0 || base_channels_C % (2 * heads) != 0) {
    fail(ErrorKind::config, "denoiser: base_channels_C must be divisible by 2 * heads");
  }
  if (ffn_multiplier == 0) fail(ErrorKind::config, "denoiser: ffn_multiplier must be >= 1");
  if (window_L < 4) fail(ErrorKind::config, "denoiser: window_L must be >= 4");
  if (in_channels != 2 * kChannels || out_channels != kChannels) {
    fail(ErrorKind::config, "denoiser: in_channels must be 12 and out_channels 6");
  }
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"base_channels_C", c.base_channels_C}, {"heads", c.heads},
       {"ffn_multiplier", c.ffn_multiplier},   {"window_L", c.window_L},
       {"in_channels", c.in_channels},         {"out_channels", c.out_channels}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  DenoiserConfig d;
  c.base_channels_C = j.value("base_channels_C", d.base_channels_C);
  c.heads = j.value("heads", d.heads);
  c.ffn_multiplier = j.value("ffn_multiplier", d.ffn_multiplier);
  c.window_L = j.value("window_L", d.window_L);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.out_channels = j.value("out_channels", d.out_channels);
}

std::vector<std::pair<std::string, Tensor>> DenoiserWeights::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"time.w1", time_w1}, {"time.b1", time_b1},         {"time.w2", time_w2},
      {"time.b2", time_b2}, {"time.proj_w", time_proj_w}, {"time.proj_b", time_proj_b},
      {"in.weight", in_w},  {"in.bias", in_b}};
  add_block(out, "enc1", enc1);
  add_block(out, "enc2", enc2);
  add_block(out, "enc3", enc3);
  out.insert(out.end(), {{"attn.wq", attn.wq},
                         {"attn.bq", attn.bq},
                         {"attn.wk", attn.wk},
                         {"attn.bk", attn.bk},
                         {"attn.wv", attn.wv},
                         {"attn.bv", attn.bv},
                         {"attn.wo", attn.wo},
                         {"attn.bo", attn.bo},
                         {"ln1.gamma", ln1_gamma},
                         {"ln1.beta", ln1_beta},
                         {"ffn.w1", ffn_w1},
                         {"ffn.b1", ffn_b1},
                         {"ffn.w2", ffn_w2},
                         {"ffn.b2", ffn_b2},
                         {"ln2.gamma", ln2_gamma},
                         {"ln2.beta", ln2_beta}});
  add_block(out, "dec1", dec1);
  add_block(out, "dec2", dec2);
  out.insert(out.end(), {{"dec_out.weight", dec_out_w},
                         {"dec_out.bias", dec_out_b},
                         {"fuse.weight", fuse_w},
                         {"fuse.bias", fuse_b}});
  return out;
}

std::vector<std::pair<std::string, Tensor>> DenoiserWeights::named_buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, b] : {std::pair<std::string, const ConvBlock*>{"enc1", &enc1},
                                {"enc2", &enc2},
                                {"enc3", &enc3},
                                {"dec1", &dec1},
                                {"dec2", &dec2}}) {
    out.emplace_back(name + ".bn.running_mean", b->stats.running_mean);
    out.emplace_back(name + ".bn.running_var", b->stats.running_var);
  }
  return out;
}

std::vector<Tensor> DenoiserWeights::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t DenoiserWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

DenoiserWeights DenoiserWeights::deep_copy() const {
  DenoiserWeights c = *this;
  auto fresh = [](Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                     t.requires_grad());
  };
  for (Tensor* t : {&c.time_w1, &c.time_b1, &c.time_w2, &c.time_b2, &c.time_proj_w,
                    &c.time_proj_b, &c.in_w, &c.in_b, &c.attn.wq, &c.attn.bq, &c.attn.wk,
                    &c.attn.bk, &c.attn.wv, &c.attn.bv, &c.attn.wo, &c.attn.bo, &c.ln1_gamma,
                    &c.ln1_beta, &c.ffn_w1, &c.ffn_b1, &c.ffn_w2, &c.ffn_b2, &c.ln2_gamma,
                    &c.ln2_beta, &c.dec_out_w, &c.dec_out_b, &c.fuse_w, &c.fuse_b}) {
    fresh(*t);
  }
  for (ConvBlock* b : {&c.enc1, &c.enc2, &c.enc3, &c.dec1, &c.dec2}) {
    for (Tensor* t : {&b->weight, &b->bias, &b->gamma, &b->beta, &b->stats.running_mean,
                      &b->stats.running_var}) {
      fresh(*t);
    }
  }
  return c;
}

DenoiserWeights init_weights(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t C = config.base_channels_C;
  const std::size_t D = 2 * C;
  const std::size_t F = config.ffn_multiplier * D;
  Initializer init(seed);
  DenoiserWeights w;
  w.time_w1 = init.he_uniform({D, C}, C);
  w.time_b1 = Initializer::zeros(D);
  w.time_w2 = init.he_uniform({D, D}, D);
  w.time_b2 = Initializer::zeros(D);
  w.time_proj_w = init.he_uniform({C, D}, D);
  w.time_proj_b = Initializer::zeros(C);
  w.in_w = init.he_uniform({C, config.in_channels, kKernel}, config.in_channels * kKernel);
  w.in_b = Initializer::zeros(C);
  w.enc1 = init.block(C, C);
  w.enc2 = init.block(C, D);
  w.enc3 = init.block(D, D);
  for (auto [wt, bt] : {std::pair{&w.attn.wq, &w.attn.bq}, std::pair{&w.attn.wk, &w.attn.bk},
                        std::pair{&w.attn.wv, &w.attn.bv}, std::pair{&w.attn.wo, &w.attn.bo}}) {
    *wt = init.he_uniform({D, D}, D);
    *bt = Initializer::zeros(D);
  }
  w.ln1_gamma = Initializer::ones(D);
  w.ln1_beta = Initializer::zeros(D);
  w.ffn_w1 = init.he_uniform({F, D}, D);
  w.ffn_b1 = Initializer::zeros(F);
  w.ffn_w2 = init.he_uniform({D, F}, F);
  w.ffn_b2 = Initializer::zeros(D);
  w.ln2_gamma = Initializer::ones(D);
  w.ln2_beta = Initializer::zeros(D);
  w.dec1 = init.block(D, C);
  w.dec2 = init.block(C, C);
  w.dec_out_w = init.he_uniform({config.out_channels, C, kKernel}, C * kKernel);
  w.dec_out_b = Initializer::zeros(config.out_channels);
  w.fuse_w = init.he_uniform({config.out_channels, C + config.out_channels, 1},
                             C + config.out_channels);
  w.fuse_b = Initializer::zeros(config.out_channels);
  return w;
}

Tensor sinusoidal_embedding(std::span<const std::size_t> t, std::size_t C) {
  if (C < 4 || C % 2 != 0) fail(ErrorKind::config, "timestep embedding needs even C >= 4");
  const std::size_t half = C / 2;
  std::vector<double> out(t.size() * C);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq =
          std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half - 1));
      const double arg = static_cast<double>(t[b]) * freq;
      out[b * C + k] = std::sin(arg);
      out[b * C + half + k] = std::cos(arg);
    }
  }
  return Tensor::from({t.size(), C}, std::move(out));
}

Tensor timestep_embedding(std::span<const std::size_t> t, const DenoiserWeights& w,
                          const DenoiserConfig& config) {
  const Tensor e = sinusoidal_embedding(t, config.base_channels_C);
  return ad::linear(ad::gelu(ad::linear(e, w.time_w1, w.time_b1)), w.time_w2, w.time_b2);
}

Tensor denoiser_forward(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& c,
                        DenoiserWeights& w, const DenoiserConfig& config, Mode mode) {
  const std::size_t L = config.window_L;
  if (x_t.rank() != 3 || x_t.dim(1) != kChannels || x_t.dim(2) != L || c.shape() != x_t.shape() ||
      t.size() != x_t.dim(0)) {
    fail(ErrorKind::contract, "denoiser: expected x_t and c of shape [B, 6, " + std::to_string(L) +
                                  "] and B step indices, got " + ad::shape_string(x_t.shape()) +
                                  " and " + ad::shape_string(c.shape()));
  }
  const Tensor temb = timestep_embedding(t, w, config);  // [B, 2C]
  const Tensor h0 = ad::conv1d(ad::concat({x_t, c}, 1), w.in_w, w.in_b);
  const Tensor e1 =
      ad::broadcast_add(conv_block(h0, w.enc1, mode), ad::linear(temb, w.time_proj_w, w.time_proj_b));
  const Tensor e2 = ad::broadcast_add(conv_block(e1, w.enc2, mode), temb);
  const Tensor e3 = ad::broadcast_add(conv_block(e2, w.enc3, mode), temb);

  Tensor s = ad::permute(e3, {0, 2, 1});  // [B, L, 2C]
  s = ad::layer_norm(ad::add(s, ad::multi_head_attention(s, w.attn, config.heads)), w.ln1_gamma,
                     w.ln1_beta);
  const Tensor ffn =
      ad::linear(ad::gelu(ad::linear(s, w.ffn_w1, w.ffn_b1)), w.ffn_w2, w.ffn_b2);
  s = ad::layer_norm(ad::add(s, ffn), w.ln2_gamma, w.ln2_beta);
  const Tensor h = ad::permute(s, {0, 2, 1});

  const Tensor d = ad::conv1d(conv_block(conv_block(h, w.dec1, mode), w.dec2, mode), w.dec_out_w,
                              w.dec_out_b);
  return ad::conv1d(ad::concat({e1, d}, 1), w.fuse_w, w.fuse_b);
}

Tensor windows_to_tensor(std::span<const ImuWindow> windows) {
  if (windows.empty()) fail(ErrorKind::contract, "no windows to stack");
  const std::size_t L = windows[0].length;
  std::vector<double> v;
  v.reserve(windows.size() * kChannels * L);
  for (const auto& w : windows) {
    if (w.length != L) fail(ErrorKind::contract, "windows of different lengths cannot be stacked");
    v.insert(v.end(), w.data.begin(), w.data.end());
  }
  return Tensor::from({windows.size(), kChannels, L}, std::move(v));
}

std::vector<ImuWindow> tensor_to_windows(const Tensor& t) {
  if (t.rank() != 3 || t.dim(1) != kChannels) {
    fail(ErrorKind::contract, "expected [B, 6, L], got " + ad::shape_string(t.shape()));
  }
  const std::size_t L = t.dim(2);
  std::vector<ImuWindow> out;
  for (std::size_t b = 0; b < t.dim(0); ++b) {
    ImuWindow w(L);
    w.window_index = b;
    std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(b * kChannels * L), kChannels * L,
                w.data.begin());
    out.push_back(std::move(w));
  }
  return out;
}

void save_checkpoint(const DenoiserCheckpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json meta = {{"schema_version", kCheckpointSchema},
                         {"denoiser_config", ckpt.config},
                         {"norm_stats", ckpt.norm},
                         {"noise_params", ckpt.noise_params},
                         {"schedule", ckpt.schedule},
                         {"train_config", ckpt.train_config}};
  std::vector<ad::NamedTensor> tensors;
  auto push = [&](const std::vector<std::pair<std::string, Tensor>>& list) {
    for (const auto& [name, t] : list) {
      tensors.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
    }
  };
  push(ckpt.weights.named_parameters());
  push(ckpt.weights.named_buffers());
  ad::save_tensor_file(path, meta, tensors);
}

DenoiserCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const ad::TensorFile file = ad::load_tensor_file(path);
  DenoiserCheckpoint ckpt;
  try {
    if (file.meta.at("schema_version").get<int>() != kCheckpointSchema) {
      fail(ErrorKind::format, "unsupported checkpoint schema_version");
    }
    ckpt.config = file.meta.at("denoiser_config").get<DenoiserConfig>();
    ckpt.norm = file.meta.at("norm_stats").get<NormStats>();
    ckpt.noise_params = file.meta.at("noise_params").get<NoiseParams>();
    ckpt.schedule = file.meta.at("schedule").get<AxisSchedule>();
    ckpt.train_config = file.meta.value("train_config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "checkpoint metadata: " + std::string(e.what()));
  }
  ckpt.weights = init_weights(ckpt.config, 0);
  auto fill = [&](const std::vector<std::pair<std::string, Tensor>>& list) {
    for (auto [name, t] : list) {
      const ad::NamedTensor& stored = file.find(name);
      if (stored.shape != t.shape()) {
        fail(ErrorKind::format, "checkpoint tensor '" + name + "' has shape " +
                                    ad::shape_string(stored.shape) + ", config expects " +
                                    ad::shape_string(t.shape()));
      }
      std::copy(stored.values.begin(), stored.values.end(), t.mutable_values().begin());
    }
  };
  fill(ckpt.weights.named_parameters());
  fill(ckpt.weights.named_buffers());
  return ckpt;
}

}  // namespace imudiff
