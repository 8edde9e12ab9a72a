#pragma once

#include "fmukf/error.hpp"
#include "fmukf/mlhp.hpp"
#include "fmukf/nn/loss.hpp"
#include "fmukf/nn/seq_model.hpp"
#include "fmukf/rng.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

namespace fmukf {

struct TrainConfig {
  int context_min = 64;
  int context_max = 84;
  double noise_state = 0.01;    ///< input noise, fraction of feature std
  double noise_control = 0.01;
  double base_lr = 1e-3;
  int warmup_epochs = 60;
  double decay_factor = 0.774;
  int decay_every = 50;
  double clip_norm = 1.0;
  std::map<int, int> batch_schedule = {{0, 256}, {40, 2048}, {800, 4096}};
  int epochs = 1000;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int checkpoint_every = 50;  ///< epochs; 0 writes only the final artifact
  bool verbose = false;

  void validate(int max_sequence_length) const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, "train config: " + m); };
    if (context_min < 1 || context_max < context_min || context_max > max_sequence_length - 1) {
      fail("context range must lie within [1, max_sequence_length - 1]");
    }
    if (batch_schedule.empty() || batch_schedule.begin()->first != 0) fail("batch schedule must start at epoch 0");
    for (const auto& [e, b] : batch_schedule)
      if (b < 1) fail("batch sizes must be positive");
    if (!(base_lr > 0) || !(clip_norm > 0) || decay_every < 1 || warmup_epochs < 0 || epochs < 0) {
      fail("learning-rate settings out of range");
    }
    if (!(validation_fraction >= 0 && validation_fraction < 1)) fail("validation_fraction must be in [0, 1)");
  }

  /// Flat for the warmup epochs, then multiplied by decay_factor every decay_every epochs.
  double learning_rate(int epoch) const {
    if (epoch < warmup_epochs) return base_lr;
    return base_lr * std::pow(decay_factor, (epoch - warmup_epochs) / decay_every);
  }

  int effective_batch(int epoch) const {
    auto it = batch_schedule.upper_bound(epoch);
    return std::prev(it)->second;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json sched = nlohmann::json::object();
  for (const auto& [e, b] : c.batch_schedule) sched[std::to_string(e)] = b;
  j = {{"context_min", c.context_min},
       {"context_max", c.context_max},
       {"noise_state", c.noise_state},
       {"noise_control", c.noise_control},
       {"base_lr", c.base_lr},
       {"warmup_epochs", c.warmup_epochs},
       {"decay_factor", c.decay_factor},
       {"decay_every", c.decay_every},
       {"clip_norm", c.clip_norm},
       {"batch_schedule", sched},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"validation_fraction", c.validation_fraction},
       {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.context_min = j.value("context_min", c.context_min);
  c.context_max = j.value("context_max", c.context_max);
  c.noise_state = j.value("noise_state", c.noise_state);
  c.noise_control = j.value("noise_control", c.noise_control);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("batch_schedule")) {
    c.batch_schedule.clear();
    for (const auto& [k, v] : j.at("batch_schedule").items()) c.batch_schedule[std::stoi(k)] = v.get<int>();
  }
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.verbose = j.value("verbose", c.verbose);
}

/// Adam on float parameters.
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(nn::ParamStore<float>& store) : store_(store) {
    for (const auto& p : store.all()) {
      m_.push_back(nn::Mat<float>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(nn::Mat<float>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  /// Applies one update using the current gradients.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, t_), c2 = 1.0 - std::pow(beta2, t_);
    const auto b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto e = static_cast<float>(eps);
    std::size_t i = 0;
    for (auto& p : store_.all()) {
      auto& m = m_[i];
      auto& v = v_[i];
      m = b1 * m + (1 - b1) * p.grad;
      v = b2 * v + (1 - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + e);
      ++i;
    }
  }

  long steps() const { return t_; }

 private:
  nn::ParamStore<float>& store_;
  std::vector<nn::Mat<float>> m_, v_;
  long t_ = 0;
};

/// Global L2 norm of all gradients.
inline double grad_norm(const nn::ParamStore<float>& store) {
  double sq = 0;
  for (const auto& p : store.all()) sq += p.grad.cast<double>().squaredNorm();
  return std::sqrt(sq);
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  int batch = 0;
  long optimizer_steps = 0;
  int skipped = 0;
  double seconds = 0;
};

struct TrainHistory {
  double initial_val_loss = 0;
  std::vector<EpochStats> epochs;

  double final_val_loss() const { return epochs.empty() ? initial_val_loss : epochs.back().val_loss; }
};

/// Sample source: returns a raw (unpadded) sample for training item i, or
/// nullopt to skip it.
using SampleFn = std::function<std::optional<Sample>(std::size_t item, Rng& rng)>;

/// Loss and output gradient of one padded sample; throws NonFiniteLoss.
inline double sample_loss(const nn::SeqModel<float>& model, const Sample& s, Rng* dropout_rng,
                          bool accumulate_grad) {
  typename nn::SeqModel<float>::Cache cache;
  const Matrix pred = model.forward(s.input.cast<float>(), cache, dropout_rng).cast<double>();
  Matrix grad;
  const double loss = nn::normalized_loss(pred, s.target, s.valid_begin, s.target.rows(),
                                          accumulate_grad ? &grad : nullptr);
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "non-finite loss");
  if (accumulate_grad) model.backward(cache, grad.cast<float>());
  return loss;
}

inline double validation_loss(const nn::SeqModel<float>& model, const std::vector<Sample>& val) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0;
  for (const auto& s : val) sum += sample_loss(model, s, nullptr, false);
  return sum / static_cast<double>(val.size());
}

/// Mini-batch training with gradient accumulation. Each epoch visits every
/// item once in a seeded random order; a partial batch carries over into the
/// next epoch. Validation samples must already be padded.
inline TrainHistory train_model(nn::SeqModel<float>& model, std::size_t n_items, const SampleFn& make_sample,
                                const std::vector<Sample>& val, const TrainConfig& cfg,
                                const std::function<void(const TrainHistory&)>& on_epoch = {}) {
  cfg.validate(model.config().max_sequence_length);
  auto& store = model.params();
  Adam adam(store);
  Rng order_rng(derive_seed(cfg.seed, streams::training, 0));
  Rng sample_rng(derive_seed(cfg.seed, streams::training, 1));
  Rng dropout_rng(derive_seed(cfg.seed, streams::training, 2));
  const int p = model.config().patch_size;

  TrainHistory hist;
  hist.initial_val_loss = validation_loss(model, val);
  store.zero_grad();
  int pending = 0;
  std::vector<std::size_t> order(n_items);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats es;
    es.epoch = epoch;
    es.lr = cfg.learning_rate(epoch);
    es.batch = cfg.effective_batch(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    int used = 0;
    for (std::size_t item : order) {
      std::optional<Sample> raw;
      try {
        raw = make_sample(item, sample_rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateFeature) throw;
      }
      if (!raw) {
        ++es.skipped;
        continue;
      }
      const Sample s = pad_sample(std::move(*raw), p, &sample_rng);
      double loss;
      try {
        loss = sample_loss(model, s, &dropout_rng, true);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::DegenerateFeature) {
          ++es.skipped;
          continue;
        }
        if (e.code() == ErrorCode::NonFiniteLoss) {
          throw Error(ErrorCode::NonFiniteLoss,
                      "non-finite loss at epoch " + std::to_string(epoch) + ", item " + std::to_string(item));
        }
        throw;
      }
      loss_sum += loss;
      ++used;
      if (++pending >= es.batch) {
        for (auto& prm : store.all()) prm.grad /= static_cast<float>(pending);
        const double norm = grad_norm(store);
        if (!std::isfinite(norm)) {
          throw Error(ErrorCode::NonFiniteLoss, "non-finite gradient at epoch " + std::to_string(epoch));
        }
        if (norm > cfg.clip_norm) {
          for (auto& prm : store.all()) prm.grad *= static_cast<float>(cfg.clip_norm / norm);
        }
        adam.step(es.lr);
        store.zero_grad();
        pending = 0;
      }
    }
    es.train_loss = used > 0 ? loss_sum / used : std::numeric_limits<double>::quiet_NaN();
    es.val_loss = validation_loss(model, val);
    es.optimizer_steps = adam.steps();
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(es);
    if (cfg.verbose) {
      std::cerr << "epoch " << epoch << " lr " << es.lr << " batch " << es.batch << " train " << es.train_loss
                << " val " << es.val_loss << " steps " << es.optimizer_steps << " (" << es.seconds << " s)\n";
    }
    if (on_epoch) on_epoch(hist);
  }
  return hist;
}

}  // namespace fmukf
