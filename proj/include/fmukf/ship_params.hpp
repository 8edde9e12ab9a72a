#pragma once

#include "fmukf/error.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fmukf {

/// Parameter record of the coupled surge/sway/roll/yaw container-ship model.
/// Hydrodynamic coefficients are nondimensional (prime system); main
/// dimensions are in metres. Values are loaded from a parameter file.
struct ShipParams {
  std::int64_t instance_id = 0;

  // Main dimensions and actuator limits.
  double L{}, B{}, dF{}, dA{}, d{}, nabla{}, KM{}, KB{}, AR{}, Delta{}, D{}, GM{}, rho{}, g{}, t{};
  double delta_max_deg{}, ddelta_max_deg{}, n_max_rpm{};

  // Masses and moments of inertia.
  double m{}, mx{}, my{}, Ix{}, Iz{}, Jx{}, Jz{}, alphay{}, lx{}, ly{}, xG{};

  // Surge.
  double Xuu{}, Xvr{}, Xrr{}, Xphiphi{}, Xvv{};
  // Roll.
  double Kv{}, Kr{}, Kp{}, Kphi{}, Kvvv{}, Krrr{}, Kvvr{}, Kvrr{}, Kvvphi{}, Kvphiphi{}, Krrphi{},
      Krphiphi{};
  // Sway.
  double Yv{}, Yr{}, Yp{}, Yphi{}, Yvvv{}, Yrrr{}, Yvvr{}, Yvrr{}, Yvvphi{}, Yvphiphi{}, Yrrphi{},
      Yrphiphi{};
  // Yaw.
  double Nv{}, Nr{}, Np{}, Nphi{}, Nvvv{}, Nrrr{}, Nvvr{}, Nvrr{}, Nvvphi{}, Nvphiphi{}, Nrrphi{},
      Nrphiphi{};

  // Propeller, rudder and hull interaction.
  double kk{}, epsilon{}, xR{}, wp{}, tau{}, xp{}, cpv{}, cpr{}, ga{}, cRr{}, cRrrr{}, cRrrv{},
      cRX{}, aH{}, zR{}, xH{};

  // Actuator time constants: Tm = shaft_tm_num / n above shaft_tm_switch, else shaft_tm_low.
  double shaft_tm_num{}, shaft_tm_switch{}, shaft_tm_low{};

  double delta_max() const { return delta_max_deg * std::numbers::pi / 180.0; }
  double ddelta_max() const { return ddelta_max_deg * std::numbers::pi / 180.0; }
  /// Shaft speed limit in rev/s.
  double n_max() const { return n_max_rpm / 60.0; }
};

using ParamField = std::pair<std::string_view, double ShipParams::*>;

// clang-format off
inline constexpr std::array kShipParamFields = {
    ParamField{"L", &ShipParams::L}, ParamField{"B", &ShipParams::B},
    ParamField{"dF", &ShipParams::dF}, ParamField{"dA", &ShipParams::dA},
    ParamField{"d", &ShipParams::d}, ParamField{"nabla", &ShipParams::nabla},
    ParamField{"KM", &ShipParams::KM}, ParamField{"KB", &ShipParams::KB},
    ParamField{"AR", &ShipParams::AR}, ParamField{"Delta", &ShipParams::Delta},
    ParamField{"D", &ShipParams::D}, ParamField{"GM", &ShipParams::GM},
    ParamField{"rho", &ShipParams::rho}, ParamField{"g", &ShipParams::g},
    ParamField{"t", &ShipParams::t},
    ParamField{"delta_max_deg", &ShipParams::delta_max_deg},
    ParamField{"ddelta_max_deg", &ShipParams::ddelta_max_deg},
    ParamField{"n_max_rpm", &ShipParams::n_max_rpm},
    ParamField{"m", &ShipParams::m}, ParamField{"mx", &ShipParams::mx},
    ParamField{"my", &ShipParams::my}, ParamField{"Ix", &ShipParams::Ix},
    ParamField{"Iz", &ShipParams::Iz}, ParamField{"Jx", &ShipParams::Jx},
    ParamField{"Jz", &ShipParams::Jz}, ParamField{"alphay", &ShipParams::alphay},
    ParamField{"lx", &ShipParams::lx}, ParamField{"ly", &ShipParams::ly},
    ParamField{"xG", &ShipParams::xG},
    ParamField{"Xuu", &ShipParams::Xuu}, ParamField{"Xvr", &ShipParams::Xvr},
    ParamField{"Xrr", &ShipParams::Xrr}, ParamField{"Xphiphi", &ShipParams::Xphiphi},
    ParamField{"Xvv", &ShipParams::Xvv},
    ParamField{"Kv", &ShipParams::Kv}, ParamField{"Kr", &ShipParams::Kr},
    ParamField{"Kp", &ShipParams::Kp}, ParamField{"Kphi", &ShipParams::Kphi},
    ParamField{"Kvvv", &ShipParams::Kvvv}, ParamField{"Krrr", &ShipParams::Krrr},
    ParamField{"Kvvr", &ShipParams::Kvvr}, ParamField{"Kvrr", &ShipParams::Kvrr},
    ParamField{"Kvvphi", &ShipParams::Kvvphi}, ParamField{"Kvphiphi", &ShipParams::Kvphiphi},
    ParamField{"Krrphi", &ShipParams::Krrphi}, ParamField{"Krphiphi", &ShipParams::Krphiphi},
    ParamField{"Yv", &ShipParams::Yv}, ParamField{"Yr", &ShipParams::Yr},
    ParamField{"Yp", &ShipParams::Yp}, ParamField{"Yphi", &ShipParams::Yphi},
    ParamField{"Yvvv", &ShipParams::Yvvv}, ParamField{"Yrrr", &ShipParams::Yrrr},
    ParamField{"Yvvr", &ShipParams::Yvvr}, ParamField{"Yvrr", &ShipParams::Yvrr},
    ParamField{"Yvvphi", &ShipParams::Yvvphi}, ParamField{"Yvphiphi", &ShipParams::Yvphiphi},
    ParamField{"Yrrphi", &ShipParams::Yrrphi}, ParamField{"Yrphiphi", &ShipParams::Yrphiphi},
    ParamField{"Nv", &ShipParams::Nv}, ParamField{"Nr", &ShipParams::Nr},
    ParamField{"Np", &ShipParams::Np}, ParamField{"Nphi", &ShipParams::Nphi},
    ParamField{"Nvvv", &ShipParams::Nvvv}, ParamField{"Nrrr", &ShipParams::Nrrr},
    ParamField{"Nvvr", &ShipParams::Nvvr}, ParamField{"Nvrr", &ShipParams::Nvrr},
    ParamField{"Nvvphi", &ShipParams::Nvvphi}, ParamField{"Nvphiphi", &ShipParams::Nvphiphi},
    ParamField{"Nrrphi", &ShipParams::Nrrphi}, ParamField{"Nrphiphi", &ShipParams::Nrphiphi},
    ParamField{"kk", &ShipParams::kk}, ParamField{"epsilon", &ShipParams::epsilon},
    ParamField{"xR", &ShipParams::xR}, ParamField{"wp", &ShipParams::wp},
    ParamField{"tau", &ShipParams::tau}, ParamField{"xp", &ShipParams::xp},
    ParamField{"cpv", &ShipParams::cpv}, ParamField{"cpr", &ShipParams::cpr},
    ParamField{"ga", &ShipParams::ga}, ParamField{"cRr", &ShipParams::cRr},
    ParamField{"cRrrr", &ShipParams::cRrrr}, ParamField{"cRrrv", &ShipParams::cRrrv},
    ParamField{"cRX", &ShipParams::cRX}, ParamField{"aH", &ShipParams::aH},
    ParamField{"zR", &ShipParams::zR}, ParamField{"xH", &ShipParams::xH},
    ParamField{"shaft_tm_num", &ShipParams::shaft_tm_num},
    ParamField{"shaft_tm_switch", &ShipParams::shaft_tm_switch},
    ParamField{"shaft_tm_low", &ShipParams::shaft_tm_low},
};
// clang-format on

inline double* find_param(ShipParams& p, std::string_view name) {
  for (const auto& [key, member] : kShipParamFields) {
    if (key == name) return &(p.*member);
  }
  return nullptr;
}

inline double get_param(const ShipParams& p, std::string_view name) {
  for (const auto& [key, member] : kShipParamFields) {
    if (key == name) return p.*member;
  }
  throw Error(ErrorCode::InvalidParams, "unknown parameter '" + std::string(name) + "'");
}

/// Throws InvalidParams unless every parameter is finite and the
/// dimension, mass and inertia entries are strictly positive.
inline void validate(const ShipParams& p) {
  for (const auto& [key, member] : kShipParamFields) {
    if (!std::isfinite(p.*member)) {
      throw Error(ErrorCode::InvalidParams, "parameter '" + std::string(key) + "' is not finite");
    }
  }
  constexpr std::array<std::string_view, 14> positive = {
      "L", "D", "AR", "nabla", "rho", "g", "m", "Ix", "Iz", "delta_max_deg", "ddelta_max_deg",
      "n_max_rpm", "shaft_tm_num", "shaft_tm_low"};
  for (auto key : positive) {
    if (!(get_param(p, key) > 0.0)) {
      throw Error(ErrorCode::InvalidParams, "parameter '" + std::string(key) + "' must be > 0");
    }
  }
  const double m11 = p.m + p.mx, m22 = p.m + p.my, m33 = p.Ix + p.Jx, m44 = p.Iz + p.Jz;
  if (!(m11 > 0 && m22 > 0 && m33 > 0 && m44 > 0)) {
    throw Error(ErrorCode::InvalidParams, "mass matrix diagonal must be positive");
  }
}

/// A parameter file: the base record plus the names of the varied parameters.
struct ParamFile {
  ShipParams params;
  std::vector<std::string> variation_params;
};

inline nlohmann::json params_to_json(const ShipParams& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, member] : kShipParamFields) j[std::string(key)] = p.*member;
  j["instance_id"] = p.instance_id;
  return j;
}

inline ShipParams params_from_json(const nlohmann::json& j) {
  ShipParams p;
  for (const auto& [key, member] : kShipParamFields) {
    auto it = j.find(std::string(key));
    if (it == j.end() || !it->is_number()) {
      throw Error(ErrorCode::InvalidParams, "missing parameter '" + std::string(key) + "'");
    }
    p.*member = it->get<double>();
  }
  p.instance_id = j.value("instance_id", std::int64_t{0});
  validate(p);
  return p;
}

inline ParamFile load_param_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open parameter file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, path + ": " + e.what());
  }
  ParamFile file;
  file.params = params_from_json(j.at("params"));
  for (const auto& name : j.at("variation_params")) {
    auto key = name.get<std::string>();
    if (!find_param(file.params, key)) {
      throw Error(ErrorCode::InvalidParams, "unknown variation parameter '" + key + "'");
    }
    file.variation_params.push_back(std::move(key));
  }
  return file;
}

}  // namespace fmukf
