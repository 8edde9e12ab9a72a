#pragma once

#include "fmukf/features.hpp"
#include "fmukf/mlhp.hpp"
#include "fmukf/nn/param_io.hpp"
#include "fmukf/nn/seq_model.hpp"
#include "fmukf/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

namespace fmukf {

/// A trained network together with its feature scaling. `kind` is
/// "dynamics" (next-state model) or "end2end" (state estimator).
struct SequenceModel {
  std::string kind = "dynamics";
  NormStats stats;
  nn::SeqModel<float> net;
  nlohmann::json extra = nlohmann::json::object();

  SequenceModel(std::string k, NormStats s, const nn::SeqModelConfig& cfg, std::uint64_t seed = 0)
      : kind(std::move(k)), stats(std::move(s)), net(cfg, seed) {}

  const nn::SeqModelConfig& config() const { return net.config(); }
};

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  write_file_atomic(p, j.dump(2) + "\n");
}

/// Directory with config.json, norm_stats.json and params.bin.
inline void save_model(const SequenceModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(dir / "config.json", {{"kind", m.kind},
                                   {"model", m.config()},
                                   {"parameter_count", m.net.parameter_count()},
                                   {"extra", m.extra}});
  write_json(dir / "norm_stats.json", m.stats);
  nn::save_params(m.net.params(), dir / "params.bin");
}

inline SequenceModel load_model(const std::filesystem::path& dir) {
  const auto cfg = read_json(dir / "config.json");
  SequenceModel m(cfg.at("kind").get<std::string>(), read_json(dir / "norm_stats.json").get<NormStats>(),
                  cfg.at("model").get<nn::SeqModelConfig>());
  m.extra = cfg.value("extra", nlohmann::json::object());
  nn::load_params(m.net.params(), dir / "params.bin");
  return m;
}

/// Builds an untrained next-state model for the given layout.
inline SequenceModel make_dynamics_model(const NormStats& stats, nn::SeqModelConfig cfg, std::uint64_t seed) {
  cfg.input_dim = stats.layout.encoded_input_dim();
  cfg.output_dim = stats.layout.encoded_state_dim();
  return SequenceModel("dynamics", stats, cfg, seed);
}

/// Next-state prediction from a state/control history (teacher-forced, no
/// masking). Only the most recent max_sequence_length steps are used. Angle
/// outputs are unwrapped to lie within pi of the last input angle.
template <typename StateRange, typename ControlRange>
Vector predict_next(const SequenceModel& m, const StateRange& states, const ControlRange& controls) {
  const auto len = static_cast<std::size_t>(std::size(states));
  if (len == 0 || len != static_cast<std::size_t>(std::size(controls))) {
    throw Error(ErrorCode::LengthMismatch, "history must be non-empty with one control per state");
  }
  const auto& lay = m.stats.layout;
  const std::size_t n = std::min<std::size_t>(len, static_cast<std::size_t>(m.config().max_sequence_length));
  const int ds = lay.encoded_state_dim();
  Matrix a(static_cast<Eigen::Index>(n), lay.encoded_input_dim());
  auto s_it = std::begin(states);
  auto c_it = std::begin(controls);
  std::advance(s_it, len - n);
  std::advance(c_it, len - n);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(n); ++r, ++s_it, ++c_it) {
    a.row(r).head(ds) = m.stats.encode_state(*s_it).transpose();
    a.row(r).tail(lay.control_dim) = m.stats.encode_control(*c_it).transpose();
  }
  const auto padded = pad_and_mask(a, m.config().patch_size);
  const Vector z = m.net.forward(padded.data.cast<float>()).bottomRows(1).transpose().cast<double>();
  Vector x = m.stats.decode_state(z);
  const Vector& last = *std::prev(std::end(states));
  for (int i : lay.angle_indices) x[i] = last[i] + wrap_angle(x[i] - last[i]);
  return x;
}

/// Training windows for a next-state model: a random window per trajectory,
/// random context length, input noise.
struct DynamicsWindows {
  const std::vector<Series>* data;
  const NormStats* stats;
  TrainConfig cfg;
  int max_length;

  int window_length(const Series& s) const {
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(max_length), s.size() - 1));
  }

  std::optional<Sample> operator()(std::size_t item, Rng& rng) const {
    const Series& s = (*data)[item];
    if (s.size() < 3) return std::nullopt;
    const int L = window_length(s);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, s.size() - 1 - L)(rng);
    const int context = std::min(L, std::uniform_int_distribution<int>(cfg.context_min, cfg.context_max)(rng));
    return mlhp_batch(s, start, L, context, *stats, {cfg.noise_state, cfg.noise_control}, &rng);
  }

  /// Deterministic validation window: start 0, mid-range context, no noise.
  std::optional<Sample> validation(const Series& s, int p) const {
    if (s.size() < 3) return std::nullopt;
    const int L = window_length(s);
    const int context = std::min(L, (cfg.context_min + cfg.context_max) / 2);
    auto raw = mlhp_batch(s, 0, L, context, *stats, {}, nullptr);
    return pad_sample(std::move(raw), p, nullptr);
  }
};

inline std::vector<Sample> dynamics_validation_set(const DynamicsWindows& w, const std::vector<Series>& val,
                                                   int p) {
  std::vector<Sample> out;
  for (const auto& s : val) {
    auto v = w.validation(s, p);
    if (!v) continue;
    try {
      nn::step_normalizer(v->target, v->valid_begin, v->target.rows());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateFeature) continue;
      throw;
    }
    out.push_back(std::move(*v));
  }
  return out;
}

/// Fits scaling on `train`, then trains a next-state model.
inline TrainHistory train_dynamics(SequenceModel& model, const std::vector<Series>& train,
                                   const std::vector<Series>& val, const TrainConfig& cfg,
                                   const std::function<void(const TrainHistory&)>& on_epoch = {}) {
  if (train.empty()) throw Error(ErrorCode::ConfigError, "training split is empty");
  DynamicsWindows windows{&train, &model.stats, cfg, model.config().max_sequence_length};
  const auto val_set = dynamics_validation_set(windows, val, model.config().patch_size);
  model.extra["train_config"] = cfg;
  return train_model(model.net, train.size(), windows, val_set, cfg, on_epoch);
}

inline NormStats fit_stats(const std::vector<Series>& data, const FeatureLayout& layout) {
  std::vector<const Series*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  return NormStats::fit(ptrs, layout);
}

}  // namespace fmukf
