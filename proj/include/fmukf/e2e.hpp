#pragma once

#include "fmukf/sensors.hpp"
#include "fmukf/sequence_model.hpp"

namespace fmukf {

/// Fixed-width measurement embedding shared by all sensor configurations:
/// one slot per state index of the fullest sensor (angles as sin/cos), one
/// validity flag per slot, then the controls.
struct SlotLayout {
  std::vector<int> slots;  ///< state indices, in slot order

  int slot_of(int state_index) const {
    const auto it = std::find(slots.begin(), slots.end(), state_index);
    if (it == slots.end()) {
      throw Error(ErrorCode::UnknownSensorConfig,
                  "state " + std::to_string(state_index) + " has no measurement slot");
    }
    return static_cast<int>(it - slots.begin());
  }

  int value_width(const FeatureLayout& lay) const {
    int w = 0;
    for (int i : slots) w += lay.is_angle(i) ? 2 : 1;
    return w;
  }

  int input_dim(const FeatureLayout& lay) const {
    return value_width(lay) + static_cast<int>(slots.size()) + lay.control_dim;
  }

  static SlotLayout ship() { return {make_sensor(SensorId::H1).observed_indices}; }
};

/// One input row: scaled measured values in their slots, zeros elsewhere,
/// mask, scaled control.
inline Vector e2e_input_row(const Vector& y, const SensorConfig& sensor, const Vector& u, const NormStats& stats,
                            const SlotLayout& slots) {
  const auto& lay = stats.layout;
  const int width = slots.value_width(lay);
  Vector row = Vector::Zero(slots.input_dim(lay));
  std::vector<int> value_offset;
  int o = 0;
  for (int i : slots.slots) {
    value_offset.push_back(o);
    o += lay.is_angle(i) ? 2 : 1;
  }
  for (int c = 0; c < sensor.size(); ++c) {
    const int i = sensor.observed_indices[static_cast<std::size_t>(c)];
    const int s = slots.slot_of(i);
    const int e = lay.encoded_offset(i);
    const int v = value_offset[static_cast<std::size_t>(s)];
    if (lay.is_angle(i)) {
      row[v] = (std::sin(y[c]) - stats.state_mean[e]) / stats.state_std[e];
      row[v + 1] = (std::cos(y[c]) - stats.state_mean[e + 1]) / stats.state_std[e + 1];
    } else {
      row[v] = (y[c] - stats.state_mean[e]) / stats.state_std[e];
    }
    row[width + s] = 1.0;
  }
  row.tail(lay.control_dim) = stats.encode_control(u);
  return row;
}

inline SlotLayout slot_layout_of(const SequenceModel& m) {
  return {m.extra.at("slots").get<std::vector<int>>()};
}

inline SequenceModel make_e2e_model(const NormStats& stats, const SlotLayout& slots, nn::SeqModelConfig cfg,
                                    std::uint64_t seed) {
  cfg.input_dim = slots.input_dim(stats.layout);
  cfg.output_dim = stats.layout.encoded_state_dim();
  SequenceModel m("end2end", stats, cfg, seed);
  m.extra["slots"] = slots.slots;
  return m;
}

/// Causal estimates: the estimate at step k sees measurements and controls
/// up to k only (one forward pass per step, history ending on a patch boundary).
inline std::vector<Vector> e2e_estimate(const SequenceModel& m, const std::vector<Vector>& measurements,
                                        const std::vector<Vector>& controls, const SensorConfig& sensor) {
  if (measurements.size() != controls.size()) throw Error(ErrorCode::LengthMismatch, "histories not aligned");
  const SlotLayout slots = slot_layout_of(m);
  const auto L = static_cast<Eigen::Index>(measurements.size());
  Matrix rows(L, slots.input_dim(m.stats.layout));
  for (Eigen::Index k = 0; k < L; ++k) {
    rows.row(k) = e2e_input_row(measurements[static_cast<std::size_t>(k)], sensor,
                                controls[static_cast<std::size_t>(k)], m.stats, slots)
                      .transpose();
  }
  const Eigen::Index window = m.config().max_sequence_length;
  std::vector<Vector> out;
  out.reserve(measurements.size());
  for (Eigen::Index k = 0; k < L; ++k) {
    const Eigen::Index begin = std::max<Eigen::Index>(0, k + 1 - window);
    const auto padded = pad_and_mask(rows.middleRows(begin, k + 1 - begin), m.config().patch_size);
    const Vector z = m.net.forward(padded.data.cast<float>()).bottomRows(1).transpose().cast<double>();
    out.push_back(m.stats.decode_state(z));
  }
  return out;
}

/// Training windows for the estimator: each sample draws a sensor and
/// synthesizes noisy measurements; targets are the encoded true states.
struct E2EWindows {
  const std::vector<Series>* data;
  const NormStats* stats;
  SlotLayout slots;
  std::vector<SensorConfig> sensors;
  int max_length;

  Sample make(const Series& s, std::size_t start, int L, const SensorConfig& sensor, Rng& rng) const {
    Sample out;
    out.input.resize(L, slots.input_dim(stats->layout));
    out.target.resize(L, stats->layout.encoded_state_dim());
    for (int k = 0; k < L; ++k) {
      const std::size_t t = start + static_cast<std::size_t>(k);
      const Vector y = measure(s.states[t], sensor, rng).values;
      out.input.row(k) = e2e_input_row(y, sensor, s.controls[t], *stats, slots).transpose();
      out.target.row(k) = stats->encode_state(s.states[t]).transpose();
    }
    return out;
  }

  int window_length(const Series& s) const {
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(max_length), s.size()));
  }

  std::optional<Sample> operator()(std::size_t item, Rng& rng) const {
    const Series& s = (*data)[item];
    if (s.size() < 2) return std::nullopt;
    const int L = window_length(s);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, s.size() - L)(rng);
    const auto& sensor = sensors[std::uniform_int_distribution<std::size_t>(0, sensors.size() - 1)(rng)];
    return make(s, start, L, sensor, rng);
  }
};

/// Trains an estimator model on all configured sensors at once. Validation
/// uses a fixed measurement seed and cycles through the sensors.
inline TrainHistory train_e2e(SequenceModel& model, const std::vector<Series>& train, const std::vector<Series>& val,
                              const std::vector<SensorConfig>& sensors, const TrainConfig& cfg,
                              const std::function<void(const TrainHistory&)>& on_epoch = {}) {
  if (train.empty()) throw Error(ErrorCode::ConfigError, "training split is empty");
  if (sensors.empty()) throw Error(ErrorCode::ConfigError, "no sensors to train on");
  E2EWindows windows{&train, &model.stats, slot_layout_of(model), sensors, model.config().max_sequence_length};
  std::vector<Sample> val_set;
  Rng val_rng(derive_seed(cfg.seed, streams::measurement, 0xe2e));
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (val[i].size() < 3) continue;
    auto s = windows.make(val[i], 0, windows.window_length(val[i]), sensors[i % sensors.size()], val_rng);
    s = pad_sample(std::move(s), model.config().patch_size, nullptr);
    try {
      nn::step_normalizer(s.target, s.valid_begin, s.target.rows());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateFeature) continue;
      throw;
    }
    val_set.push_back(std::move(s));
  }
  model.extra["train_config"] = cfg;
  nlohmann::json sj = nlohmann::json::array();
  for (const auto& s : sensors) sj.push_back(to_json(s));
  model.extra["sensors"] = sj;
  return train_model(model.net, train.size(), windows, val_set, cfg, on_epoch);
}

}  // namespace fmukf
