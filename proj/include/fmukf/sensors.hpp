#pragma once

#include "fmukf/error.hpp"
#include "fmukf/rng.hpp"
#include "fmukf/types.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <string>
#include <vector>

namespace fmukf {

enum class SensorId { H1, H2 };

inline std::string to_string(SensorId id) { return id == SensorId::H1 ? "H1" : "H2"; }

inline SensorId sensor_id_from_string(const std::string& s) {
  if (s == "H1" || s == "h1") return SensorId::H1;
  if (s == "H2" || s == "h2") return SensorId::H2;
  throw Error(ErrorCode::UnknownSensorConfig, "unknown sensor '" + s + "'");
}

struct SensorConfig {
  SensorId id = SensorId::H1;
  std::vector<int> observed_indices;  ///< canonical state indices, ascending
  Vector noise_std;                   ///< one entry per observed channel

  int size() const { return static_cast<int>(observed_indices.size()); }

  Matrix noise_cov() const { return noise_std.array().square().matrix().asDiagonal(); }

  /// Channel mask for angle residuals (wrapped on the circle).
  std::vector<bool> angle_channels() const {
    std::vector<bool> out;
    for (int i : observed_indices) out.push_back(is_angle_index(i));
    return out;
  }
};

/// Default per-state noise levels: velocities 0.05 m/s, rates 0.005 rad/s,
/// positions 1 m, angles 0.01 rad.
inline double default_noise_std(int state_index) {
  switch (state_index) {
    case idx::u:
    case idx::v: return 0.05;
    case idx::p:
    case idx::r: return 0.005;
    case idx::x:
    case idx::y: return 1.0;
    case idx::phi:
    case idx::psi: return 0.01;
    default: return 0.01;
  }
}

/// H1: every state except the actuators. H2: H1 without surge and sway.
inline SensorConfig make_sensor(SensorId id) {
  SensorConfig cfg;
  cfg.id = id;
  if (id == SensorId::H1) {
    cfg.observed_indices = {idx::u, idx::v, idx::p, idx::r, idx::x, idx::y, idx::phi, idx::psi};
  } else {
    cfg.observed_indices = {idx::p, idx::r, idx::x, idx::y, idx::phi, idx::psi};
  }
  cfg.noise_std.resize(cfg.size());
  for (int c = 0; c < cfg.size(); ++c) cfg.noise_std[c] = default_noise_std(cfg.observed_indices[c]);
  return cfg;
}

inline void validate(const SensorConfig& cfg) {
  if (cfg.noise_std.size() != cfg.size()) {
    throw Error(ErrorCode::UnknownSensorConfig, "noise_std length differs from observed channels");
  }
  if (!(cfg.noise_std.array() > 0.0).all()) {
    throw Error(ErrorCode::UnknownSensorConfig, "noise_std must be strictly positive");
  }
}

struct Measurement {
  Vector values;
  int k = 0;
  SensorId id = SensorId::H1;
};

/// Noise-free measurement: observed components with angles wrapped.
inline Vector h(const Vector& state, const SensorConfig& cfg) {
  Vector y(cfg.size());
  for (int c = 0; c < cfg.size(); ++c) {
    const int i = cfg.observed_indices[c];
    y[c] = is_angle_index(i) ? wrap_angle(state[i]) : state[i];
  }
  return y;
}

/// h(state) plus independent zero-mean Gaussian noise per channel. A zero
/// std leaves its channel exactly noise-free.
inline Measurement measure(const Vector& state, const SensorConfig& cfg, Rng& rng, int k = 0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Measurement m{h(state, cfg), k, cfg.id};
  for (int c = 0; c < cfg.size(); ++c) {
    const double e = normal(rng);
    if (cfg.noise_std[c] != 0.0) m.values[c] += cfg.noise_std[c] * e;
  }
  for (int c = 0; c < cfg.size(); ++c) {
    if (is_angle_index(cfg.observed_indices[c])) m.values[c] = wrap_angle(m.values[c]);
  }
  return m;
}

inline nlohmann::json to_json(const SensorConfig& cfg) {
  return {{"id", to_string(cfg.id)},
          {"noise_std", std::vector<double>(cfg.noise_std.data(), cfg.noise_std.data() + cfg.noise_std.size())}};
}

/// `{"id": "H2", "noise_std": [...]}`; noise_std is optional.
inline SensorConfig sensor_from_json(const nlohmann::json& j) {
  auto cfg = make_sensor(sensor_id_from_string(j.at("id").get<std::string>()));
  if (j.contains("noise_std")) {
    const auto stds = j["noise_std"].get<std::vector<double>>();
    if (static_cast<int>(stds.size()) != cfg.size()) {
      throw Error(ErrorCode::UnknownSensorConfig, "noise_std override has wrong length");
    }
    cfg.noise_std = Eigen::Map<const Vector>(stds.data(), static_cast<Eigen::Index>(stds.size()));
  }
  validate(cfg);
  return cfg;
}

}  // namespace fmukf
