#include "imudiff/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "imudiff/ad/ops.hpp"
#include "imudiff/error.hpp"

namespace imudiff {

using ad::Tensor;

namespace {

Tensor penalty(const Tensor& d, PhysicsNorm norm) {
  return norm == PhysicsNorm::l1 ? ad::abs(d) : ad::square(d);
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

void check_pairs(std::span<const ImuWindow> a, std::span<const ImuWindow> b, std::size_t L) {
  if (a.size() != b.size()) {
    fail(ErrorKind::contract, "condition/target batches differ in size: " +
                                  std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) fail(ErrorKind::insufficient_data, "empty training batch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].length != L || b[i].length != L) {
      fail(ErrorKind::contract, "training window length differs from model window_L " +
                                    std::to_string(L));
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) fail(ErrorKind::config, "train: batch_size must be >= 1");
  if (!(lr > 0.0)) fail(ErrorKind::config, "train: lr must be > 0");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    fail(ErrorKind::config, "train: lambda1 and lambda2 must be >= 0");
  }
  if (T < 2) fail(ErrorKind::config, "train: T must be >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    fail(ErrorKind::config, "train: need 0 < beta_min < beta_max < 1");
  }
  model.validate();
  windowing.validate();
  if (windowing.length_L != model.window_L) {
    fail(ErrorKind::config, "train: windowing.length_L must equal model.window_L");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"schema_version", 1},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"lambda1", c.lambda1},
       {"lambda2", c.lambda2},
       {"warmup_epochs", c.warmup_epochs},
       {"seed", c.seed},
       {"T", c.T},
       {"beta_min", c.beta_min},
       {"beta_max", c.beta_max},
       {"physics_norm", c.physics_norm == PhysicsNorm::l1 ? "l1" : "l2"},
       {"integral_includes_accel", c.integral_includes_accel},
       {"b0_augmentation", c.b0_augmentation},
       {"model", c.model},
       {"windowing", {{"length_L", c.windowing.length_L}, {"stride_S", c.windowing.stride_S}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.lambda1 = j.value("lambda1", d.lambda1);
  c.lambda2 = j.value("lambda2", d.lambda2);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.seed = j.value("seed", d.seed);
  c.T = j.value("T", d.T);
  c.beta_min = j.value("beta_min", d.beta_min);
  c.beta_max = j.value("beta_max", d.beta_max);
  const std::string norm = j.value("physics_norm", std::string("l1"));
  if (norm == "l1") {
    c.physics_norm = PhysicsNorm::l1;
  } else if (norm == "l2") {
    c.physics_norm = PhysicsNorm::l2;
  } else {
    fail(ErrorKind::config, "train config field 'physics_norm' must be \"l1\" or \"l2\"");
  }
  c.integral_includes_accel = j.value("integral_includes_accel", d.integral_includes_accel);
  c.b0_augmentation = j.value("b0_augmentation", d.b0_augmentation);
  c.model = j.contains("model") ? j.at("model").get<DenoiserConfig>() : d.model;
  c.windowing = d.windowing;
  if (j.contains("windowing")) {
    c.windowing.length_L = j.at("windowing").value("length_L", d.windowing.length_L);
    c.windowing.stride_S = j.at("windowing").value("stride_S", d.windowing.stride_S);
  }
}

Tensor loss_simple(const Tensor& eps, const Tensor& eps_hat) {
  return ad::mean(ad::square(ad::sub(eps_hat, eps)));
}

Tensor loss_smooth(const Tensor& x0_hat_denorm, const Tensor& c_denorm, PhysicsNorm norm) {
  const std::size_t axis = x0_hat_denorm.rank() - 1;
  const std::size_t L = x0_hat_denorm.shape().back();
  if (L < 2) fail(ErrorKind::contract, "loss_smooth needs at least 2 samples per channel");
  const Tensor b = ad::sub(c_denorm, x0_hat_denorm);
  const Tensor d = ad::sub(ad::slice(b, axis, 1, L), ad::slice(b, axis, 0, L - 1));
  return ad::mean(penalty(d, norm));
}

Tensor loss_integral(const Tensor& x0_hat_gyro_denorm, const Tensor& gt_gyro_denorm, double dt,
                     PhysicsNorm norm) {
  if (!(dt > 0.0)) fail(ErrorKind::contract, "loss_integral needs dt > 0");
  const std::size_t axis = x0_hat_gyro_denorm.rank() - 1;
  const Tensor a = ad::cumulative_sum(ad::scale(x0_hat_gyro_denorm, dt), axis);
  const Tensor b = ad::cumulative_sum(ad::scale(gt_gyro_denorm, dt), axis);
  return ad::mean(penalty(ad::sub(a, b), norm));
}

ChannelArray estimate_b0_std(std::span<const ImuWindow> lowcost,
                             std::span<const ImuWindow> reference) {
  if (lowcost.size() != reference.size()) {
    fail(ErrorKind::contract, "estimate_b0_std: window sets differ in size");
  }
  if (lowcost.size() < 2) fail(ErrorKind::insufficient_data, "estimate_b0_std needs >= 2 windows");
  ChannelArray out{};
  const double n = static_cast<double>(lowcost.size());
  for (std::size_t c = 0; c < kChannels; ++c) {
    std::vector<double> diffs;
    for (std::size_t w = 0; w < lowcost.size(); ++w) {
      const auto a = lowcost[w].channel(c);
      const auto b = reference[w].channel(c);
      if (a.size() != b.size() || a.empty()) {
        fail(ErrorKind::contract, "estimate_b0_std: paired windows differ in length");
      }
      const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
      const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
      diffs.push_back(ma - mb);
    }
    const double mu = std::accumulate(diffs.begin(), diffs.end(), 0.0) / n;
    double var = 0.0;
    for (double d : diffs) var += (d - mu) * (d - mu);
    out[c] = std::sqrt(var / n);
  }
  return out;
}

Trainer::Trainer(const TrainConfig& cfg_in, const NormStats& norm_in,
                 const NoiseParams& lowcost_params_in)
    : cfg(cfg_in), norm(norm_in), lowcost_params(lowcost_params_in) {
  cfg.validate();
  norm.validate();
  lowcost_params.validate();
  weights = init_weights(cfg.model, derive_seed(cfg.seed, 1));
  schedule = build_schedule(normalized_noise_params(lowcost_params, norm), cfg.T, cfg.beta_min,
                            cfg.beta_max);
  adam.lr = cfg.lr;
  params = weights.parameters();
}

StepInputs draw_step_inputs(std::size_t batch, const Trainer& trainer, std::mt19937_64& rng) {
  const std::size_t L = trainer.cfg.model.window_L;
  StepInputs in;
  std::uniform_int_distribution<std::size_t> step(0, trainer.schedule.T - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  in.t.resize(batch);
  for (auto& t : in.t) t = step(rng);
  in.eps.resize(batch * kChannels * L);
  for (double& e : in.eps) e = normal(rng);
  in.b0.assign(batch * kChannels, 0.0);
  if (trainer.cfg.b0_augmentation) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < kChannels; ++c) {
        in.b0[b * kChannels + c] =
            normal(rng) * trainer.lowcost_params.sigma_b0[c] / trainer.norm.std[c];
      }
    }
  }
  return in;
}

Tensor total_loss(std::span<const ImuWindow> condition, std::span<const ImuWindow> target,
                  Trainer& trainer, std::size_t epoch, const StepInputs& in, LossReport& report) {
  const std::size_t L = trainer.cfg.model.window_L;
  check_pairs(condition, target, L);
  const std::size_t B = condition.size();
  if (in.t.size() != B || in.eps.size() != B * kChannels * L || in.b0.size() != B * kChannels) {
    fail(ErrorKind::contract, "step inputs do not match the batch");
  }
  const auto& sched = trainer.schedule;
  const auto& ns = trainer.norm;
  const std::size_t n = B * kChannels * L;
  std::vector<double> cond(n), x0(n), xt(n), k_const(n), m_coef(n), c_den(n), x0_den(n);
  for (std::size_t b = 0; b < B; ++b) {
    if (in.t[b] >= sched.T) fail(ErrorKind::contract, "diffusion step out of range");
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double ab = sched.alpha_bar[c][in.t[b]];
      const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
      for (std::size_t k = 0; k < L; ++k) {
        const std::size_t i = (b * kChannels + c) * L + k;
        cond[i] = condition[b](c, k) + in.b0[b * kChannels + c];
        x0[i] = target[b](c, k);
        xt[i] = sa * x0[i] + sn * in.eps[i];
        // x0_hat_denorm = k_const - m_coef * eps_hat
        k_const[i] = xt[i] / sa * ns.std[c] + ns.mean[c];
        m_coef[i] = sn / sa * ns.std[c];
        c_den[i] = cond[i] * ns.std[c] + ns.mean[c];
        x0_den[i] = x0[i] * ns.std[c] + ns.mean[c];
      }
    }
  }
  const ad::Shape shape{B, kChannels, L};
  const Tensor eps = Tensor::from(shape, in.eps);
  const Tensor eps_hat = denoiser_forward(Tensor::from(shape, std::move(xt)), in.t,
                                          Tensor::from(shape, std::move(cond)), trainer.weights,
                                          trainer.cfg.model, Mode::train);
  const Tensor l_simple = loss_simple(eps, eps_hat);

  const bool active = epoch > trainer.cfg.warmup_epochs;
  const Tensor eps_for_physics = active ? eps_hat : eps_hat.detach();
  const Tensor x0_hat_den = ad::sub(Tensor::from(shape, std::move(k_const)),
                                    ad::mul(Tensor::from(shape, std::move(m_coef)), eps_for_physics));
  const Tensor l_smooth =
      loss_smooth(x0_hat_den, Tensor::from(shape, std::move(c_den)), trainer.cfg.physics_norm);
  const std::size_t integral_channels = trainer.cfg.integral_includes_accel ? kChannels : 3;
  const Tensor gt = Tensor::from(shape, std::move(x0_den));
  const Tensor l_integral = loss_integral(ad::slice(x0_hat_den, 1, 0, integral_channels),
                                         ad::slice(gt, 1, 0, integral_channels),
                                         1.0 / trainer.lowcost_params.rate_hz,
                                         trainer.cfg.physics_norm);
  const Tensor total =
      active ? ad::add(ad::add(l_simple, ad::scale(l_smooth, trainer.cfg.lambda1)),
                       ad::scale(l_integral, trainer.cfg.lambda2))
             : l_simple;
  report.epoch = epoch;
  report.physics_active = active;
  report.l_simple = l_simple.item();
  report.l_smooth = l_smooth.item();
  report.l_integral = l_integral.item();
  report.l_total = total.item();
  return total;
}

LossReport train_step(std::span<const ImuWindow> condition, std::span<const ImuWindow> target,
                      Trainer& trainer, std::size_t epoch, std::mt19937_64& rng) {
  const StepInputs in = draw_step_inputs(condition.size(), trainer, rng);
  LossReport report;
  const Tensor total = total_loss(condition, target, trainer, epoch, in, report);
  if (!std::isfinite(report.l_total) || !std::isfinite(report.l_smooth) ||
      !std::isfinite(report.l_integral)) {
    fail(ErrorKind::numerical, "non-finite loss at epoch " + std::to_string(epoch) +
                                   ": l_simple=" + fmt(report.l_simple) +
                                   " l_smooth=" + fmt(report.l_smooth) +
                                   " l_integral=" + fmt(report.l_integral));
  }
  for (auto& p : trainer.params) p.zero_grad();
  total.backward();
  ad::adam_step(trainer.params, trainer.adam);
  return report;
}

FitResult fit(const TrainingData& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (data.lowcost.empty()) fail(ErrorKind::insufficient_data, "training set is empty");
  check_pairs(data.lowcost, data.reference, cfg.model.window_L);
  Trainer trainer(cfg, data.norm, data.lowcost_params);
  FitResult result;
  std::mt19937_64 rng(derive_seed(cfg.seed, 2));
  const std::size_t n = data.lowcost.size();
  std::vector<std::size_t> order(n);
  std::vector<ImuWindow> cond, target;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      cond.clear();
      target.clear();
      for (std::size_t i = begin; i < end; ++i) {
        cond.push_back(data.lowcost[order[i]]);
        target.push_back(data.reference[order[i]]);
      }
      LossReport r;
      try {
        r = train_step(cond, target, trainer, epoch, rng);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numerical) throw;
        fail(ErrorKind::numerical, std::string(e.what()) + ", step " + std::to_string(step) +
                                       " (" + std::to_string(result.history.size()) +
                                       " steps completed)");
      }
      r.step = step;
      result.history.push_back(r);
    }
    if (on_epoch) on_epoch(epoch, result.history.back());
  }
  auto& ck = result.checkpoint;
  ck.config = cfg.model;
  ck.weights = trainer.weights;
  ck.norm = data.norm;
  ck.noise_params = data.lowcost_params;
  ck.schedule = trainer.schedule;
  ck.train_config = cfg;
  return result;
}

void save_loss_history_csv(std::span<const LossReport> history, const std::filesystem::path& path) {
  std::string out = "epoch,step,l_simple,l_smooth,l_integral,l_total\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',' + fmt(r.l_simple) + ',' +
           fmt(r.l_smooth) + ',' + fmt(r.l_integral) + ',' + fmt(r.l_total) + '\n';
  }
  write_text_file(path, out);
}

}  // namespace imudiff
