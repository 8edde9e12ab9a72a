#pragma once

#include "fmukf/pink_noise.hpp"
#include "fmukf/rng.hpp"
#include "fmukf/ship_params.hpp"
#include "fmukf/types.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace fmukf {

/// Command and initial-condition distribution used for probing, dissimilarity
/// sampling and dataset generation.
struct ExcitationConfig {
  double dt = 1.0;
  double low_cut = 0.0;
  double rudder_std_frac = 0.5;    ///< std of delta_c as a fraction of delta_max
  double rudder_clamp_frac = 0.8;  ///< |delta_c| <= frac * delta_max
  double shaft_nominal_rpm = 80.0;
  double shaft_std_frac = 0.15;  ///< std of n_c relative to nominal
  double shaft_lo_frac = 0.6;
  double shaft_hi_frac = 1.4;
  /// Cruise speed reached by the base hull at the nominal shaft speed.
  double cruise_speed = 8.3767;
  double init_u_std = 0.3;
  double init_v_std = 0.05;
  double init_p_std = 0.0005;
  double init_r_std = 0.001;
};

inline std::vector<ControlInput> pink_noise_commands(const ShipParams& params,
                                                     const ExcitationConfig& cfg, int length,
                                                     std::uint64_t seed) {
  const double dmax = params.delta_max();
  const double n0 = cfg.shaft_nominal_rpm / 60.0;
  PinkNoiseConfig rudder{.length = length,
                         .dt = cfg.dt,
                         .low_cut = cfg.low_cut,
                         .amplitude = cfg.rudder_std_frac * dmax,
                         .offset = 0.0,
                         .clamp_lo = -cfg.rudder_clamp_frac * dmax,
                         .clamp_hi = cfg.rudder_clamp_frac * dmax,
                         .seed = derive_seed(seed, streams::rudder)};
  PinkNoiseConfig shaft{.length = length,
                        .dt = cfg.dt,
                        .low_cut = cfg.low_cut,
                        .amplitude = cfg.shaft_std_frac * n0,
                        .offset = n0,
                        .clamp_lo = cfg.shaft_lo_frac * n0,
                        .clamp_hi = std::min(cfg.shaft_hi_frac * n0, params.n_max()),
                        .seed = derive_seed(seed, streams::shaft)};
  const auto rd = pink_noise(rudder);
  const auto sh = pink_noise(shaft);
  std::vector<ControlInput> out(static_cast<std::size_t>(length));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = ControlInput(rd[k], sh[k]);
  return out;
}

/// Nominal cruise: straight ahead at the configured speed, actuators at rest.
inline ShipState cruise_state(const ExcitationConfig& cfg) {
  ShipState s = ShipState::Zero();
  s[idx::u] = cfg.cruise_speed;
  s[idx::n] = cfg.shaft_nominal_rpm / 60.0;
  return s;
}

/// Cruise state with Gaussian perturbations on the velocity block.
inline ShipState sample_initial_state(const ExcitationConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, streams::init_state));
  std::normal_distribution<double> normal(0.0, 1.0);
  ShipState s = cruise_state(cfg);
  s[idx::u] += cfg.init_u_std * normal(rng);
  s[idx::v] += cfg.init_v_std * normal(rng);
  s[idx::p] += cfg.init_p_std * normal(rng);
  s[idx::r] += cfg.init_r_std * normal(rng);
  return s;
}

inline nlohmann::json to_json(const ExcitationConfig& c) {
  return {{"dt", c.dt},
          {"low_cut", c.low_cut},
          {"rudder_std_frac", c.rudder_std_frac},
          {"rudder_clamp_frac", c.rudder_clamp_frac},
          {"shaft_nominal_rpm", c.shaft_nominal_rpm},
          {"shaft_std_frac", c.shaft_std_frac},
          {"shaft_lo_frac", c.shaft_lo_frac},
          {"shaft_hi_frac", c.shaft_hi_frac},
          {"cruise_speed", c.cruise_speed},
          {"init_u_std", c.init_u_std},
          {"init_v_std", c.init_v_std},
          {"init_p_std", c.init_p_std},
          {"init_r_std", c.init_r_std}};
}

inline ExcitationConfig excitation_from_json(const nlohmann::json& j) {
  ExcitationConfig c;
  c.dt = j.value("dt", c.dt);
  c.low_cut = j.value("low_cut", c.low_cut);
  c.rudder_std_frac = j.value("rudder_std_frac", c.rudder_std_frac);
  c.rudder_clamp_frac = j.value("rudder_clamp_frac", c.rudder_clamp_frac);
  c.shaft_nominal_rpm = j.value("shaft_nominal_rpm", c.shaft_nominal_rpm);
  c.shaft_std_frac = j.value("shaft_std_frac", c.shaft_std_frac);
  c.shaft_lo_frac = j.value("shaft_lo_frac", c.shaft_lo_frac);
  c.shaft_hi_frac = j.value("shaft_hi_frac", c.shaft_hi_frac);
  c.cruise_speed = j.value("cruise_speed", c.cruise_speed);
  c.init_u_std = j.value("init_u_std", c.init_u_std);
  c.init_v_std = j.value("init_v_std", c.init_v_std);
  c.init_p_std = j.value("init_p_std", c.init_p_std);
  c.init_r_std = j.value("init_r_std", c.init_r_std);
  return c;
}

}  // namespace fmukf
