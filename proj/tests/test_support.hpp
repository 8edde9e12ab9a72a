#pragma once

#include "fmukf/ship_params.hpp"

#include <string>

namespace fmukf::testing {

inline const ParamFile& base_param_file() {
  static const ParamFile file = load_param_file(std::string(FMUKF_DATA_DIR) + "/container_ship.json");
  return file;
}

inline const ShipParams& base_params() { return base_param_file().params; }

}  // namespace fmukf::testing
