#pragma once

// Reference solver: marches the centerline conservation system with
// fixed-step RK4, solving the small linear system A(y)*dy/ds = r(y) at every
// stage by Gaussian elimination with partial pivoting.  The resulting
// trajectories serve as ground truth for sensor generation, for the learned
// models' evaluation, and for the conservation audits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "jet_system.hpp"
#include "linsolve.hpp"
#include "notional_nozzle.hpp"
#include "physics.hpp"
#include "rng.hpp"

namespace h2jet {

enum class Orientation { Vertical, Horizontal };

inline const char* to_string(Orientation o) {
  return o == Orientation::Vertical ? "vertical" : "horizontal";
}

// Default step d/16: RK4's flux drift shrinks ~16x per halving, and d/16 is
// the first step that holds the hydrogen-flux audit below 1e-6 with margin
// (measured ~8e-8 across the shipped scenarios, vs ~1.3e-5 at d/4).
struct StepControl {
  double h = 0.0;       // base step [m]; <= 0 means the default d/16
  bool refine = false;  // step-halving certification pass
  double tol = 1e-4;    // certification threshold (relative, on Y_cl)
  double condition_limit = 1e12;  // linear-solve conditioning guard
};

struct ScenarioConfig {
  std::string name = "scenario";
  Orientation orientation = Orientation::Vertical;
  GasConstants gas;
  Ambient ambient;
  SpreadingModel model;

  SourceConditions source;   // conditions governing the march (post-mapping)
  double d_physical = 0.0;   // physical orifice diameter [m]
  bool underexpanded = false;
  StagnationState vessel;    // populated for under-expanded releases
  ThroatState throat;        //   "
  NotionalExit notional;     //   "

  StepControl step;
  double s_end = 0.0;              // march length [m]
  double eval_lo = 0.0;            // default evaluation band [s / source d]
  double eval_hi = 0.0;
  double sensor_noise = 0.0;       // multiplicative sigma for sensor generation
  double cfd_reference_seconds = 0.0;  // external CFD wall-clock (reporting only)

  double step_h() const { return step.h > 0.0 ? step.h : source.d / 16.0; }

  void validate() const {
    gas.validate();
    ambient.validate(gas);
    model.validate();
    source.validate();
    if (d_physical <= 0.0) throw domain_error("scenario: physical diameter must be positive");
    if (s_end <= 0.0) throw domain_error("scenario: march length must be positive");
    if (!(eval_lo >= 0.0 && eval_hi > eval_lo))
      throw domain_error("scenario: evaluation band must satisfy 0 <= lo < hi");
    if (eval_hi * source.d > s_end * (1.0 + 1e-9))
      throw domain_error("scenario: evaluation band extends past the march length");
    if (sensor_noise < 0.0) throw domain_error("scenario: sensor noise must be >= 0");
  }
};

// Source constructors for the two ingestion routes.
inline SourceConditions direct_source(double d, double u, double rho, const Ambient& amb) {
  SourceConditions s{d, u, rho, froude_number(u, d, rho, amb)};
  s.validate();
  return s;
}

inline SourceConditions notional_source(const NotionalExit& n, const Ambient& amb) {
  SourceConditions s{n.d, n.u, n.rho, froude_number(n.u, n.d, n.rho, amb)};
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Trajectory storage.
// ---------------------------------------------------------------------------

struct JetState {
  double s = 0.0;      // arc length from the source [m]
  double u = 0.0;      // centerline velocity [m/s]
  double b = 0.0;      // velocity profile 1/e half-width [m]
  double rho = 0.0;    // centerline density [kg/m^3]
  double theta = 0.0;  // local trajectory angle from horizontal [rad]
  double x = 0.0;      // horizontal position [m]
  double z = 0.0;      // vertical position [m]
};

struct Trajectory {
  ScenarioConfig cfg;
  std::vector<JetState> states;

  double mass_fraction(std::size_t i) const {
    return mass_fraction_from_density(states[i].rho, cfg.ambient, cfg.gas);
  }
  double mole_fraction(std::size_t i) const {
    return mole_from_mass(mass_fraction(i), cfg.gas);
  }
};

// Conserved hydrogen flux u * rho * Y * b^2, evaluated through the deficit
// identity rho*Y = c*(rho_inf - rho) (exact, clamp-free).
inline double hydrogen_flux(const JetState& st, const ScenarioConfig& cfg) {
  return st.u * cfg.gas.deficit_coeff() * (cfg.ambient.rho_inf - st.rho) * st.b * st.b;
}

// Horizontal-component momentum flux cos(theta) * u^2 b^2 (rho_inf - L2*deficit);
// conserved exactly for horizontal releases (no streamwise force component).
inline double x_momentum_flux(const JetState& st, const ScenarioConfig& cfg) {
  const double deficit = cfg.ambient.rho_inf - st.rho;
  return std::cos(st.theta) * st.u * st.u * st.b * st.b *
         (cfg.ambient.rho_inf - cfg.model.lambda2() * deficit);
}

template <class FluxFn>
double max_relative_drift(const Trajectory& traj, FluxFn&& flux) {
  const double q0 = flux(traj.states.front(), traj.cfg);
  if (q0 == 0.0) throw domain_error("max_relative_drift: zero initial flux");
  double worst = 0.0;
  for (const auto& st : traj.states)
    worst = std::max(worst, std::abs(flux(st, traj.cfg) / q0 - 1.0));
  return worst;
}

// ---------------------------------------------------------------------------
// Right-hand sides.
// ---------------------------------------------------------------------------

inline JetState initial_state(const ScenarioConfig& cfg) {
  JetState st;
  st.s = 0.0;
  st.u = cfg.source.u;
  st.b = cfg.source.d / 2.0;
  st.rho = cfg.source.rho;
  st.theta = cfg.orientation == Orientation::Vertical ? 1.57079632679489661923 : 0.0;
  st.x = 0.0;
  st.z = 0.0;
  return st;
}

inline Vec<3> vertical_rhs(double u, double b, double rho, const ScenarioConfig& cfg,
                           SolveInfo* info = nullptr) {
  const auto rows = vertical_rows(u, b, rho, cfg.source, cfg.ambient, cfg.model, cfg.gas);
  return solve_linear<3>(rows.a, rows.rhs, info, cfg.step.condition_limit);
}

inline Vec<4> horizontal_rhs(double u, double b, double rho, double theta,
                             const ScenarioConfig& cfg, SolveInfo* info = nullptr) {
  const auto rows =
      horizontal_rows(u, b, rho, theta, cfg.source, cfg.ambient, cfg.model, cfg.gas);
  return solve_linear<4>(rows.a, rows.rhs, info, cfg.step.condition_limit);
}

namespace detail {

// Full state derivative (u, b, rho, theta, x, z).  Vertical releases keep
// theta pinned at pi/2 and rise straight up (x identically zero).
inline std::array<double, 6> state_derivative(const std::array<double, 6>& y,
                                              const ScenarioConfig& cfg) {
  std::array<double, 6> d{};
  if (cfg.orientation == Orientation::Vertical) {
    const auto v = vertical_rhs(y[0], y[1], y[2], cfg);
    d = {v[0], v[1], v[2], 0.0, 0.0, 1.0};
  } else {
    const auto v = horizontal_rhs(y[0], y[1], y[2], y[3], cfg);
    d = {v[0], v[1], v[2], v[3], std::cos(y[3]), std::sin(y[3])};
  }
  return d;
}

inline void validate_state(const std::array<double, 6>& y, const ScenarioConfig& cfg,
                           double s) {
  const double rho_tol = 1e-9 * cfg.ambient.rho_inf;
  if (!(y[0] > 0.0) || !(y[1] > 0.0) || !(y[2] > 0.0) || !std::isfinite(y[0]) ||
      !std::isfinite(y[1]) || !std::isfinite(y[2]) || !std::isfinite(y[3]))
    throw domain_error("integrate: state became non-physical at s=" + std::to_string(s));
  if (y[2] > cfg.ambient.rho_inf + rho_tol)
    throw domain_error("integrate: centerline density exceeded ambient at s=" +
                       std::to_string(s));
  constexpr double half_pi = 1.57079632679489661923;
  if (y[3] < -1e-9 || y[3] > half_pi + 1e-9)
    throw domain_error("integrate: trajectory angle left [0, pi/2] at s=" +
                       std::to_string(s));
}

inline Trajectory integrate_fixed(const ScenarioConfig& cfg, double h) {
  Trajectory traj;
  traj.cfg = cfg;
  const JetState st0 = initial_state(cfg);
  std::array<double, 6> y{st0.u, st0.b, st0.rho, st0.theta, st0.x, st0.z};
  const std::size_t n_steps =
      static_cast<std::size_t>(std::ceil(cfg.s_end / h - 1e-9));
  traj.states.reserve(n_steps + 1);
  traj.states.push_back(st0);
  double s = 0.0;
  for (std::size_t i = 1; i <= n_steps; ++i) {
    const double s_next = std::min(static_cast<double>(i) * h, cfg.s_end);
    const double hs = s_next - s;
    const auto k1 = state_derivative(y, cfg);
    std::array<double, 6> y2{}, y3{}, y4{};
    for (int j = 0; j < 6; ++j) y2[j] = y[j] + 0.5 * hs * k1[j];
    const auto k2 = state_derivative(y2, cfg);
    for (int j = 0; j < 6; ++j) y3[j] = y[j] + 0.5 * hs * k2[j];
    const auto k3 = state_derivative(y3, cfg);
    for (int j = 0; j < 6; ++j) y4[j] = y[j] + hs * k3[j];
    const auto k4 = state_derivative(y4, cfg);
    for (int j = 0; j < 6; ++j)
      y[j] += hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    // Snap roundoff-level ambient overshoot back onto the admissible set.
    if (y[2] > cfg.ambient.rho_inf &&
        y[2] <= cfg.ambient.rho_inf * (1.0 + 1e-9))
      y[2] = cfg.ambient.rho_inf;
    s = s_next;
    validate_state(y, cfg, s);
    traj.states.push_back({s, y[0], y[1], y[2], y[3], y[4], y[5]});
  }
  return traj;
}

}  // namespace detail

// Marches the scenario with fixed-step RK4.  With ctrl.refine set, a second
// march at half the step certifies that the centerline mass fraction agrees
// at every shared station beyond one source diameter within ctrl.tol
// (relative); the coarse trajectory is returned.  The first diameter is
// excluded because the entrainment cap engages there: the cap switch is a
// kink in the right-hand side whose pointwise effect depends on where it
// lands relative to the grid, while everything downstream of it (and every
// sampling band, which starts at several diameters) converges at the full
// RK4 rate.
inline Trajectory integrate(const ScenarioConfig& cfg_in, const StepControl& ctrl) {
  ScenarioConfig cfg = cfg_in;
  cfg.step = ctrl;
  cfg.validate();
  const double h = cfg.step_h();
  Trajectory coarse = detail::integrate_fixed(cfg, h);
  if (ctrl.refine) {
    const Trajectory fine = detail::integrate_fixed(cfg, h / 2.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < coarse.states.size(); ++i) {
      if (coarse.states[i].s < cfg.source.d) continue;
      const std::size_t j = std::min(2 * i, fine.states.size() - 1);
      if (std::abs(fine.states[j].s - coarse.states[i].s) > 1e-9 * cfg.s_end) continue;
      const double yc = coarse.mass_fraction(i);
      const double yf = fine.mass_fraction(j);
      worst = std::max(worst, std::abs(yc - yf) / std::max(std::abs(yf), 1e-12));
    }
    if (worst > ctrl.tol)
      throw domain_error("integrate: step-halving certification failed (max relative "
                         "mass-fraction change " + std::to_string(worst) + ")");
  }
  return coarse;
}

inline Trajectory integrate(const ScenarioConfig& cfg) { return integrate(cfg, cfg.step); }

// ---------------------------------------------------------------------------
// Sampling.
// ---------------------------------------------------------------------------

struct SamplePoint {
  double s_over_d = 0.0;  // position in source diameters
  double s = 0.0;         // arc length [m]
  double u = 0.0;
  double b = 0.0;
  double rho = 0.0;
  double theta = 0.0;
  double y = 0.0;       // centerline mass fraction
  double x_mole = 0.0;  // centerline mole fraction
};

inline SamplePoint sample_point(const Trajectory& traj, double s_over_d) {
  const double d = traj.cfg.source.d;
  const double s = s_over_d * d;
  if (s < -1e-12 || s > traj.cfg.s_end * (1.0 + 1e-9))
    throw domain_error("sample_point: position " + std::to_string(s_over_d) +
                       " diameters is outside the marched range");
  const auto& st = traj.states;
  auto it = std::lower_bound(st.begin(), st.end(), s,
                             [](const JetState& a, double v) { return a.s < v; });
  SamplePoint p;
  p.s_over_d = s_over_d;
  p.s = s;
  const JetState* lo;
  const JetState* hi;
  if (it == st.begin()) {
    lo = hi = &st.front();
  } else if (it == st.end()) {
    lo = hi = &st.back();
  } else {
    hi = &*it;
    lo = &*(it - 1);
  }
  const double w = (hi->s > lo->s) ? (s - lo->s) / (hi->s - lo->s) : 0.0;
  p.u = lo->u + w * (hi->u - lo->u);
  p.b = lo->b + w * (hi->b - lo->b);
  p.rho = lo->rho + w * (hi->rho - lo->rho);
  p.theta = lo->theta + w * (hi->theta - lo->theta);
  p.y = mass_fraction_from_density(p.rho, traj.cfg.ambient, traj.cfg.gas);
  p.x_mole = mole_from_mass(p.y, traj.cfg.gas);
  return p;
}

// Uniformly spaced positions (inclusive endpoints) in s/d units.
inline std::vector<double> uniform_positions(double lo, double hi, int count) {
  if (count < 2 || hi <= lo)
    throw domain_error("uniform_positions: need count >= 2 and hi > lo");
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return out;
}

// Evenly strided subset used to pick sensors from the evaluation grid:
// k of total, indices floor(i * total / k).
inline std::vector<int> strided_indices(int k, int total) {
  if (k < 1 || k > total) throw domain_error("strided_indices: need 1 <= k <= total");
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i * total / k;
  return idx;
}

struct SensorReading {
  double s_over_d = 0.0;
  double s = 0.0;
  double y = 0.0;       // mass fraction (possibly noisy)
  double rho = 0.0;     // density consistent with y
  double x_mole = 0.0;  // mole fraction consistent with y
};

// Samples the oracle trajectory at the given positions.  Optional
// multiplicative Gaussian noise perturbs the measured mass fraction; the
// density and mole fraction are re-derived so each reading stays consistent.
inline std::vector<SensorReading> sample_sensors(const Trajectory& traj,
                                                 const std::vector<double>& positions,
                                                 double noise_sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SensorReading> out;
  out.reserve(positions.size());
  for (double pos : positions) {
    const SamplePoint p = sample_point(traj, pos);
    SensorReading r;
    r.s_over_d = pos;
    r.s = p.s;
    r.y = p.y;
    if (noise_sigma > 0.0) {
      r.y = std::clamp(p.y * (1.0 + noise_sigma * rng.gaussian()), 0.0, 1.0);
    }
    r.rho = density_from_mass_fraction(r.y, traj.cfg.ambient, traj.cfg.gas);
    r.x_mole = mole_from_mass(r.y, traj.cfg.gas);
    out.push_back(r);
  }
  return out;
}

}  // namespace h2jet
