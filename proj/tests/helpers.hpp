#pragma once

// Test helpers: locate shipped scenario files from the source tree.

#include <string>

#include "h2jet/scenario_io.hpp"

inline std::string scenario_path(const std::string& name) {
  return std::string(H2JET_SOURCE_DIR) + "/scenarios/" + name;
}

inline h2jet::ScenarioConfig load_cfg(const std::string& name) {
  return h2jet::load_scenario(scenario_path(name)).cfg;
}
