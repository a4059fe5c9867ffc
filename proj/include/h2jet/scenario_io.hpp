#pragma once

// Scenario config files (flat `key = value` lines, '#' comments) and the
// delimited text artifacts: trajectory tables, sensor/evaluation files and
// prediction curves.  Keys carry unit suffixes so the files read unambiguously.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "oracle.hpp"

namespace h2jet {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double to_number(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw parse_error("scenario key '" + key + "': cannot parse number from '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw parse_error("scenario key '" + key + "': cannot parse boolean from '" + v + "'");
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

struct ParsedScenario {
  ScenarioConfig cfg;
  std::vector<std::string> warnings;  // e.g. unknown keys (non-fatal)
};

// Parses scenario text.  Mandatory keys: orientation, diameter_mm,
// eval_min_s_over_d, eval_max_s_over_d, and either the direct source pair
// (exit_velocity_m_s, exit_density_kg_m3) or vessel_pressure_bar for
// under-expanded releases (which are routed through the notional nozzle).
inline ParsedScenario parse_scenario_text(const std::string& text,
                                          const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw parse_error(origin + ":" + std::to_string(lineno) + ": empty key or value");
    if (kv.count(key))
      throw parse_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = val;
  }

  ParsedScenario out;
  ScenarioConfig& cfg = out.cfg;
  std::map<std::string, bool> used;
  auto take = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    used[key] = true;
    return &it->second;
  };
  auto take_number = [&](const char* key, double* dst) {
    if (const auto* v = take(key)) *dst = detail::to_number(key, *v);
  };
  auto require = [&](const char* key) -> const std::string& {
    const auto* v = take(key);
    if (!v) throw parse_error(origin + ": missing mandatory key '" + std::string(key) + "'");
    return *v;
  };

  if (const auto* v = take("name")) cfg.name = *v;

  const std::string& orient = require("orientation");
  if (orient == "vertical") cfg.orientation = Orientation::Vertical;
  else if (orient == "horizontal") cfg.orientation = Orientation::Horizontal;
  else throw parse_error(origin + ": orientation must be 'vertical' or 'horizontal'");

  // Constant-block overrides.
  take_number("ambient_pressure_pa", &cfg.ambient.pressure);
  take_number("ambient_temperature_k", &cfg.ambient.temperature);
  take_number("ambient_density_kg_m3", &cfg.ambient.rho_inf);
  take_number("gravity_m_s2", &cfg.ambient.gravity);
  take_number("gas_constant_j_mol_k", &cfg.gas.R);
  take_number("molar_mass_h2_kg_mol", &cfg.gas.M_h2);
  take_number("molar_mass_air_kg_mol", &cfg.gas.M_air);
  take_number("heat_capacity_ratio", &cfg.gas.gamma);
  take_number("spreading_ratio", &cfg.model.lambda);
  take_number("entrainment_beta", &cfg.model.beta_a);
  take_number("entrainment_alpha_cap", &cfg.model.alpha_cap);

  double d_mm = 0.0;
  d_mm = detail::to_number("diameter_mm", require("diameter_mm"));
  cfg.d_physical = d_mm * 1e-3;

  // Source route.
  const auto* u_exit = take("exit_velocity_m_s");
  const auto* rho_exit = take("exit_density_kg_m3");
  const auto* p_vessel = take("vessel_pressure_bar");
  if (p_vessel && (u_exit || rho_exit))
    throw parse_error(origin + ": give either the exit pair or vessel_pressure_bar, not both");
  if (p_vessel) {
    cfg.underexpanded = true;
    double p_bar = detail::to_number("vessel_pressure_bar", *p_vessel);
    bool gauge = false;
    if (const auto* g = take("vessel_pressure_is_gauge"))
      gauge = detail::to_bool("vessel_pressure_is_gauge", *g);
    cfg.vessel.pressure = p_bar * 1e5 + (gauge ? cfg.ambient.pressure : 0.0);
    cfg.vessel.temperature = cfg.ambient.temperature;
    take_number("vessel_temperature_k", &cfg.vessel.temperature);
    cfg.throat = choked_state(cfg.vessel, cfg.gas, cfg.ambient);
    cfg.notional = notional_exit(cfg.throat, cfg.d_physical, cfg.ambient, cfg.gas);
    cfg.source = notional_source(cfg.notional, cfg.ambient);
  } else {
    if (!u_exit) throw parse_error(origin + ": missing mandatory key 'exit_velocity_m_s'");
    if (!rho_exit) throw parse_error(origin + ": missing mandatory key 'exit_density_kg_m3'");
    cfg.source = direct_source(cfg.d_physical,
                               detail::to_number("exit_velocity_m_s", *u_exit),
                               detail::to_number("exit_density_kg_m3", *rho_exit),
                               cfg.ambient);
  }

  // Evaluation band and march length, in source diameters (notional diameter
  // for under-expanded releases).
  cfg.eval_lo = detail::to_number("eval_min_s_over_d", require("eval_min_s_over_d"));
  cfg.eval_hi = detail::to_number("eval_max_s_over_d", require("eval_max_s_over_d"));
  double march_sd = cfg.eval_hi;
  take_number("march_end_s_over_d", &march_sd);
  cfg.s_end = march_sd * cfg.source.d;

  double h_over_d = 0.0625;
  take_number("step_h_over_d", &h_over_d);
  if (h_over_d <= 0.0) throw parse_error(origin + ": step_h_over_d must be positive");
  cfg.step.h = h_over_d * cfg.source.d;
  take_number("sensor_noise_sigma", &cfg.sensor_noise);
  take_number("cfd_reference_s", &cfg.cfd_reference_seconds);

  for (const auto& [key, val] : kv)
    if (!used.count(key))
      out.warnings.push_back(origin + ": unknown key '" + key + "' ignored");

  cfg.validate();
  return out;
}

inline ParsedScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open scenario file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Delimited text artifacts.  All numbers are written with %.12g so reruns
// with identical inputs are byte-identical.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_row(std::ofstream& out, const std::vector<double>& vals) {
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i) out << ", ";
    out << format_number(vals[i]);
  }
  out << "\n";
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw parse_error("cannot open output file '" + path + "'");
  return out;
}

}  // namespace detail

inline void write_trajectory_file(const std::string& path, const Trajectory& traj) {
  auto out = detail::open_out(path);
  out << "s, s_over_d, u_cl, b, rho_cl, Y_cl, X_cl, theta, x, z\n";
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const auto& st = traj.states[i];
    detail::write_row(out, {st.s, st.s / traj.cfg.source.d, st.u, st.b, st.rho,
                            traj.mass_fraction(i), traj.mole_fraction(i), st.theta,
                            st.x, st.z});
  }
}

inline void write_sensor_file(const std::string& path,
                              const std::vector<SensorReading>& readings) {
  auto out = detail::open_out(path);
  out << "s_over_d, mole_frac_pct, mass_frac, rho_cl\n";
  for (const auto& r : readings)
    detail::write_row(out, {r.s_over_d, 100.0 * r.x_mole, r.y, r.rho});
}

inline std::vector<SensorReading> read_sensor_file(const std::string& path,
                                                   const ScenarioConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open sensor file '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw parse_error("sensor file '" + path + "' is empty");
  if (line.rfind("s_over_d", 0) != 0)
    throw parse_error("sensor file '" + path + "' has unexpected header '" + line + "'");
  std::vector<SensorReading> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::vector<double> vals;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ','))
      vals.push_back(detail::to_number("sensor row", detail::trim(cell)));
    if (vals.size() != 4)
      throw parse_error(path + ":" + std::to_string(lineno) + ": expected 4 columns");
    SensorReading r;
    r.s_over_d = vals[0];
    r.s = vals[0] * cfg.source.d;
    r.x_mole = vals[1] / 100.0;
    r.y = vals[2];
    r.rho = vals[3];
    out.push_back(r);
  }
  if (out.empty()) throw parse_error("sensor file '" + path + "' has no readings");
  return out;
}

struct CurveRow {
  double s_over_d = 0.0;
  double y_pred = 0.0;
  double y_oracle = 0.0;
  double x_pred_pct = 0.0;
  double u_pred = 0.0;
  double u_oracle = 0.0;
  double b_pred = 0.0;
  double rho_pred = 0.0;
  double theta_pred = 0.0;
};

inline void write_curve_file(const std::string& path, const std::vector<CurveRow>& rows) {
  auto out = detail::open_out(path);
  out << "s_over_d, Y_pred, Y_oracle, X_pred_pct, u_pred, u_oracle, b_pred, rho_pred, "
         "theta_pred\n";
  for (const auto& r : rows)
    detail::write_row(out, {r.s_over_d, r.y_pred, r.y_oracle, r.x_pred_pct, r.u_pred,
                            r.u_oracle, r.b_pred, r.rho_pred, r.theta_pred});
}

}  // namespace h2jet
