#pragma once

// Under-expanded releases are mapped onto an equivalent fully expanded
// "notional" exit so the same subsonic centerline model can be integrated
// downstream.  The mapping has two stages: isentropic choked flow from the
// vessel to the physical throat, then a momentum-balance expansion from the
// throat to ambient pressure over a widened pseudo-diameter.

#include <cmath>
#include <string>

#include "errors.hpp"
#include "physics.hpp"

namespace h2jet {

struct StagnationState {
  double pressure = 0.0;     // vessel absolute pressure [Pa]
  double temperature = 0.0;  // vessel temperature [K]
};

struct ThroatState {
  double pressure = 0.0;     // [Pa]
  double temperature = 0.0;  // [K]
  double rho = 0.0;          // [kg/m^3]
  double u = 0.0;            // sonic speed at throat conditions [m/s]
};

struct NotionalExit {
  double d = 0.0;    // pseudo-diameter [m]
  double u = 0.0;    // fully expanded velocity [m/s]
  double rho = 0.0;  // hydrogen density at ambient (P, T) [kg/m^3]
};

// Pressure ratio below which the orifice flow is no longer choked.
inline double critical_pressure_ratio(const GasConstants& gas) {
  const double g = gas.gamma;
  return std::pow((g + 1.0) / 2.0, g / (g - 1.0));
}

// Isentropic expansion from stagnation to the sonic throat.
inline ThroatState choked_state(const StagnationState& stag, const GasConstants& gas,
                                const Ambient& amb) {
  if (stag.pressure <= 0.0 || stag.temperature <= 0.0)
    throw domain_error("choked_state: stagnation state must be positive");
  if (stag.pressure <= amb.pressure * critical_pressure_ratio(gas))
    throw domain_error("choked_state: vessel pressure " + std::to_string(stag.pressure) +
                       " Pa is below the choking threshold; release is not under-expanded");
  const double g = gas.gamma;
  const double ratio = 2.0 / (g + 1.0);
  ThroatState t;
  t.pressure = stag.pressure * std::pow(ratio, g / (g - 1.0));
  t.temperature = stag.temperature * ratio;
  t.rho = stag.pressure * gas.M_h2 / (gas.R * stag.temperature) *
          std::pow(ratio, 1.0 / (g - 1.0));
  t.u = std::sqrt(g * gas.R * t.temperature / gas.M_h2);
  return t;
}

// Conservation-based expansion from the throat to ambient pressure.  The
// construction conserves mass flux and streamwise momentum flux exactly:
//   rho2 * u2 * A2 = rho1 * u1 * A1
//   rho2 * u2^2 * A2 = rho1 * u1^2 * A1 + (P1 - Pinf) * A1
inline NotionalExit notional_exit(const ThroatState& throat, double d_exit,
                                  const Ambient& amb, const GasConstants& gas) {
  if (d_exit <= 0.0)
    throw domain_error("notional_exit: exit diameter must be positive");
  if (throat.pressure < amb.pressure)
    throw domain_error("notional_exit: throat pressure below ambient");
  NotionalExit n;
  n.rho = amb.pressure * gas.M_h2 / (gas.R * amb.temperature);
  const double dp = throat.pressure - amb.pressure;
  const double ru = throat.rho * throat.u;
  n.u = throat.u + dp / ru;
  n.d = d_exit * ru / std::sqrt(n.rho * (dp + ru * throat.u));
  return n;
}

}  // namespace h2jet
