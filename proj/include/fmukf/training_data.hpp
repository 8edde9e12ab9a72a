#pragma once

#include "fmukf/dataset.hpp"
#include "fmukf/e2e.hpp"
#include "fmukf/sequence_model.hpp"

namespace fmukf {

/// Training instances split further into fitting and validation instances,
/// so validation trajectories come from ships the optimizer never sees.
struct TrainingSplit {
  std::vector<std::int64_t> fit_ids, validation_ids;
  std::vector<Series> fit, validation;
};

inline std::vector<Series> load_series(const DatasetManifest& m, const std::vector<std::int64_t>& ids) {
  std::vector<Series> out;
  for (const auto& r : m.records) {
    if (std::find(ids.begin(), ids.end(), r.instance_id) != ids.end()) out.push_back(to_series(load_record(m, r)));
  }
  return out;
}

inline TrainingSplit training_split(const DatasetManifest& m, double validation_fraction, std::uint64_t seed) {
  check_split_hygiene(m);
  if (m.train_instances.empty()) throw Error(ErrorCode::ConfigError, "manifest has no training instances");
  std::vector<std::int64_t> ids = m.train_instances;
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, streams::split, 1));
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(ids.size())));
  if (validation_fraction > 0 && ids.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
  TrainingSplit s;
  s.validation_ids.assign(ids.end() - static_cast<std::ptrdiff_t>(n_val), ids.end());
  s.fit_ids.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_val));
  std::sort(s.fit_ids.begin(), s.fit_ids.end());
  std::sort(s.validation_ids.begin(), s.validation_ids.end());
  s.fit = load_series(m, s.fit_ids);
  s.validation = load_series(m, s.validation_ids);
  return s;
}

inline nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"lr", e.lr},
                      {"batch", e.batch},
                      {"optimizer_steps", e.optimizer_steps},
                      {"skipped", e.skipped},
                      {"seconds", e.seconds}});
  }
  return {{"initial_val_loss", h.initial_val_loss}, {"epochs", epochs}};
}

struct TrainedModel {
  SequenceModel model;
  TrainHistory history;
};

/// Trains a next-state model on the manifest's training instances and writes
/// the artifact (with periodic checkpoints) to `out_dir`.
inline TrainedModel train_fm(const DatasetManifest& m, const nn::SeqModelConfig& model_cfg, const TrainConfig& cfg,
                             const std::filesystem::path& out_dir) {
  const auto split = training_split(m, cfg.validation_fraction, cfg.seed);
  TrainedModel out{make_dynamics_model(fit_stats(split.fit, FeatureLayout::ship()), model_cfg, cfg.seed), {}};
  SequenceModel& model = out.model;
  model.extra["fit_instances"] = split.fit_ids;
  model.extra["validation_instances"] = split.validation_ids;
  auto checkpoint = [&](const TrainHistory& h) {
    const int epoch = h.epochs.back().epoch;
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      model.extra["history"] = history_json(h);
      save_model(model, out_dir);
    }
  };
  out.history = train_dynamics(model, split.fit, split.validation, cfg, checkpoint);
  model.extra["history"] = history_json(out.history);
  save_model(model, out_dir);
  return out;
}

/// Trains an End2End estimator on the training instances with measurements
/// drawn from `sensors`, writing the artifact to `out_dir`.
inline TrainedModel train_e2e(const DatasetManifest& m, const nn::SeqModelConfig& model_cfg, const TrainConfig& cfg,
                              const std::vector<SensorConfig>& sensors, const std::filesystem::path& out_dir) {
  const auto split = training_split(m, cfg.validation_fraction, cfg.seed);
  TrainedModel out{make_e2e_model(fit_stats(split.fit, FeatureLayout::ship()), SlotLayout::ship(), model_cfg, cfg.seed),
                   {}};
  SequenceModel& model = out.model;
  model.extra["fit_instances"] = split.fit_ids;
  model.extra["validation_instances"] = split.validation_ids;
  auto checkpoint = [&](const TrainHistory& h) {
    const int epoch = h.epochs.back().epoch;
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      model.extra["history"] = history_json(h);
      save_model(model, out_dir);
    }
  };
  out.history = train_e2e(model, split.fit, split.validation, sensors, cfg, checkpoint);
  model.extra["history"] = history_json(out.history);
  save_model(model, out_dir);
  return out;
}

}  // namespace fmukf
