#pragma once

// Shared physical closures for a round turbulent hydrogen jet described by
// self-similar Gaussian profiles of centerline velocity, density deficit and
// species concentration.  Everything here is written against a generic scalar
// type so the identical closure code serves both the double-precision ODE
// integrator and the autodiff variables used inside the training loss.

#include <cmath>
#include <string>

#include "errors.hpp"

namespace h2jet {

// value_of: collapse a scalar-like quantity to its primal double value.
// Overloads for autodiff variables are picked up by argument-dependent
// lookup; this is what lets templated closures branch on magnitudes.
inline double value_of(double x) { return x; }

// ---------------------------------------------------------------------------
// Constant blocks (SI units).  Conventional engineering values; all of them
// can be overridden per scenario from the config file.
// ---------------------------------------------------------------------------

struct GasConstants {
  double R = 8.314;        // universal gas constant [J/(mol K)]
  double M_h2 = 2.016e-3;  // hydrogen molar mass [kg/mol]
  double M_air = 28.966e-3;  // air molar mass [kg/mol]
  double gamma = 1.405;    // hydrogen ratio of specific heats

  void validate() const {
    if (R <= 0.0 || M_h2 <= 0.0 || M_air <= 0.0)
      throw domain_error("gas constants must be positive");
    if (M_air <= M_h2)
      throw domain_error("air molar mass must exceed hydrogen molar mass");
    if (gamma <= 1.0 || gamma >= 2.0)
      throw domain_error("heat capacity ratio out of range (1, 2)");
  }

  // Mass-fraction <-> density conversion constant M_h2 / (M_air - M_h2).
  double deficit_coeff() const { return M_h2 / (M_air - M_h2); }
};

struct Ambient {
  double pressure = 101325.0;   // [Pa]
  double temperature = 293.0;   // [K]
  double rho_inf = 1.205;       // quiescent air density [kg/m^3]
  double gravity = 9.81;        // [m/s^2]

  void validate(const GasConstants& gas) const {
    if (pressure <= 0.0 || temperature <= 0.0 || rho_inf <= 0.0 || gravity <= 0.0)
      throw domain_error("ambient fields must be positive");
    // Guard against config typos: the quoted air density has to be close to
    // the ideal-gas value at (pressure, temperature).
    const double ideal = pressure * gas.M_air / (gas.R * temperature);
    if (std::abs(rho_inf / ideal - 1.0) > 0.02)
      throw domain_error("ambient density inconsistent with P*M_air/(R*T) by >2%: rho_inf=" +
                         std::to_string(rho_inf) + " vs ideal " + std::to_string(ideal));
  }
};

// Gaussian profile family.  The density/species profiles spread wider than
// the velocity profile by the factor lambda; lambda1/lambda2 are the moment
// ratios that appear when the profiles are integrated across the jet.
struct SpreadingModel {
  double lambda = 1.16;      // concentration-to-velocity spreading ratio
  double beta_a = 0.282;     // momentum-driven entrainment coefficient
  double alpha_cap = 0.082;  // ceiling on the combined entrainment coefficient

  double lambda1() const {
    const double l2 = lambda * lambda;
    return l2 / (1.0 + l2);
  }
  double lambda2() const {
    const double l2 = lambda * lambda;
    return 2.0 * l2 / (1.0 + 2.0 * l2);
  }

  void validate() const {
    if (lambda < 1.0 || lambda > 1.5)
      throw domain_error("spreading ratio lambda out of range [1.0, 1.5]");
    if (beta_a <= 0.0 || alpha_cap <= 0.0)
      throw domain_error("entrainment coefficients must be positive");
  }
};

// ---------------------------------------------------------------------------
// Radial profiles (used for audits and documentation plots).
// ---------------------------------------------------------------------------

inline double velocity_profile(double u_cl, double r, double b) {
  return u_cl * std::exp(-(r * r) / (b * b));
}

inline double density_profile(double rho_cl, double r, double b, double lambda,
                              double rho_inf) {
  const double w = lambda * b;
  return rho_inf - (rho_inf - rho_cl) * std::exp(-(r * r) / (w * w));
}

// rho*Y profile: the species mass per volume decays with the wide width.
inline double species_profile(double rho_y_cl, double r, double b, double lambda) {
  const double w = lambda * b;
  return rho_y_cl * std::exp(-(r * r) / (w * w));
}

// ---------------------------------------------------------------------------
// Densimetric Froude number and flow-regime classification.
// ---------------------------------------------------------------------------

enum class FlowRegime { Plume, BuoyancyDominated, MomentumDominated };

inline const char* to_string(FlowRegime r) {
  switch (r) {
    case FlowRegime::Plume: return "plume";
    case FlowRegime::BuoyancyDominated: return "buoyancy-dominated";
    case FlowRegime::MomentumDominated: return "momentum-dominated";
  }
  return "unknown";
}

inline double froude_number(double u_exit, double d_exit, double rho_exit,
                            const Ambient& amb) {
  if (u_exit <= 0.0 || d_exit <= 0.0 || rho_exit <= 0.0)
    throw domain_error("froude_number requires positive u, d, rho");
  const double drho = std::abs(rho_exit - amb.rho_inf);
  if (drho == 0.0)
    throw domain_error("froude_number undefined for neutral density release");
  return u_exit / std::sqrt(amb.gravity * d_exit * drho / rho_exit);
}

inline FlowRegime classify_regime(double froude) {
  if (froude < 10.0) return FlowRegime::Plume;
  if (froude <= 1000.0) return FlowRegime::BuoyancyDominated;
  return FlowRegime::MomentumDominated;
}

// ---------------------------------------------------------------------------
// Centerline mass fraction <-> centerline density, and mole fraction.
//
// The mixture is treated as ideal with both components at ambient (P, T), so
// the centerline hydrogen mass fraction follows from the density deficit:
//   Y = c * (rho_inf / rho - 1),   c = M_h2 / (M_air - M_h2)
// and identically rho * Y = c * (rho_inf - rho).
// ---------------------------------------------------------------------------

inline constexpr double mass_fraction_clamp_tol = 1e-3;

inline double mass_fraction_from_density(double rho_cl, const Ambient& amb,
                                         const GasConstants& gas,
                                         bool* clamped = nullptr) {
  if (clamped) *clamped = false;
  if (rho_cl <= 0.0)
    throw domain_error("mass_fraction_from_density: density must be positive");
  const double y = gas.deficit_coeff() * (amb.rho_inf / rho_cl - 1.0);
  if (y < -mass_fraction_clamp_tol || y > 1.0 + mass_fraction_clamp_tol)
    throw domain_error("mass_fraction_from_density: density " + std::to_string(rho_cl) +
                       " maps to mass fraction " + std::to_string(y) +
                       " outside [0,1] beyond tolerance");
  if (y < 0.0 || y > 1.0) {
    if (clamped) *clamped = true;
    return y < 0.0 ? 0.0 : 1.0;
  }
  return y;
}

inline double density_from_mass_fraction(double y, const Ambient& amb,
                                         const GasConstants& gas) {
  if (y < 0.0 || y > 1.0)
    throw domain_error("density_from_mass_fraction: mass fraction outside [0,1]");
  return amb.rho_inf / (1.0 + y / gas.deficit_coeff());
}

inline double mole_from_mass(double y, const GasConstants& gas) {
  if (y < 0.0 || y > 1.0)
    throw domain_error("mole_from_mass: mass fraction outside [0,1]");
  const double n_h2 = y / gas.M_h2;
  const double n_air = (1.0 - y) / gas.M_air;
  return n_h2 / (n_h2 + n_air);
}

inline double mass_from_mole(double x, const GasConstants& gas) {
  if (x < 0.0 || x > 1.0)
    throw domain_error("mass_from_mole: mole fraction outside [0,1]");
  const double m = x * gas.M_h2;
  return m / (m + (1.0 - x) * gas.M_air);
}

// Reporting-path variant: saturates instead of throwing, so that badly
// trained models still produce a (poor) metric rather than an abort.
inline double mass_fraction_from_density_saturating(double rho_cl, const Ambient& amb,
                                                    const GasConstants& gas) {
  if (rho_cl <= 0.0) return 1.0;
  const double y = gas.deficit_coeff() * (amb.rho_inf / rho_cl - 1.0);
  return y < 0.0 ? 0.0 : (y > 1.0 ? 1.0 : y);
}

// ---------------------------------------------------------------------------
// Entrainment closure.
//
// E has units of volume flow per unit jet length [m^2/s] and combines a
// momentum-driven part fed by source quantities with a buoyancy-driven part
// fed by the local state:
//   E_mom  = beta_a * sqrt(pi * d0^2 * u0^2 / 4)     (source density cancels)
//   E_buoy = (alpha2 / Fr_local) * 2*pi*u_cl*b,
//   Fr_local = u_cl^2 / (g * b * (rho_inf - rho_cl) / rho0)
// E_buoy is evaluated in the equivalent division-free form
//   E_buoy = 2*pi * alpha2 * g * b^2 * (rho_inf - rho_cl) / (rho0 * u_cl)
// which makes the neutral-density limit (E_buoy -> 0) automatic.  The
// combined coefficient alpha = E / (2*pi*b*u_cl) is capped at
// model.alpha_cap; when the cap engages, E is recomputed from the cap.
// ---------------------------------------------------------------------------

// Buoyancy gain as a function of the source Froude number: a decaying
// quadratic for low Froude, a constant plateau beyond 268 (the quadratic's
// value at the seam differs from the plateau by under 1e-2).
inline double alpha2_gain(double source_froude) {
  if (source_froude <= 0.0)
    throw domain_error("alpha2_gain requires a positive Froude number");
  if (source_froude < 268.0)
    return 17.313 - 0.11665 * source_froude + 2.0771e-4 * source_froude * source_froude;
  return 0.97;
}

// Source conditions entering the entrainment closure (after any notional
// nozzle mapping for under-expanded releases).
struct SourceConditions {
  double d = 0.0;       // outlet diameter [m]
  double u = 0.0;       // outlet velocity [m/s]
  double rho = 0.0;     // outlet density [kg/m^3]
  double froude = 0.0;  // outlet densimetric Froude number

  void validate() const {
    if (d <= 0.0 || u <= 0.0 || rho <= 0.0 || froude <= 0.0)
      throw domain_error("source conditions must be positive");
  }
};

template <class S>
struct EntrainmentResult {
  S rate;              // E [m^2/s]
  bool capped = false; // whether the alpha ceiling engaged
};

template <class S>
EntrainmentResult<S> entrainment(const S& u_cl, const S& b, const S& rho_cl,
                                 const SourceConditions& src, const Ambient& amb,
                                 const SpreadingModel& model) {
  constexpr double pi = 3.14159265358979323846;
  const double e_mom =
      model.beta_a * std::sqrt(pi * src.d * src.d * src.u * src.u / 4.0);
  const double a2 = alpha2_gain(src.froude);
  const S e_buoy = 2.0 * pi * a2 * amb.gravity * b * b * (amb.rho_inf - rho_cl) /
                   (src.rho * u_cl);
  S rate = e_mom + e_buoy;
  // Cap the combined coefficient alpha = E/(2*pi*b*u).  The branch is taken
  // on primal magnitudes; the capped rate stays a smooth function of (b, u).
  const double alpha_now =
      value_of(rate) / (2.0 * pi * value_of(b) * value_of(u_cl));
  if (alpha_now > model.alpha_cap) {
    return {(2.0 * pi * model.alpha_cap) * (b * u_cl), true};
  }
  return {rate, false};
}

// Effective combined entrainment coefficient implied by a rate (audit aid).
inline double entrainment_alpha(double u_cl, double b, double rate) {
  constexpr double pi = 3.14159265358979323846;
  return rate / (2.0 * pi * b * u_cl);
}

}  // namespace h2jet
