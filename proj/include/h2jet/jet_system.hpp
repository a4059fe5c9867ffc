#pragma once

// Coefficient assembly for the centerline conservation system
//   A(y) * dy/ds = r(y),  y = (u_cl, b, rho_cl[, theta])
// obtained by integrating the Gaussian profiles across the jet:
//   continuity   d/ds[ u b^2 (rho_inf - L1 (rho_inf - rho)) ]           = rho_inf E / pi
//   momentum     d/ds[ u^2 b^2 (rho_inf - L2 (rho_inf - rho)) ] / 2rho_inf = g l^2 b^2 (rho_inf - rho)/rho_inf
//   species      d/ds[ u b^2 c (rho_inf - rho) ]                         = 0
// with L1, L2 the Gaussian moment ratios and c the mass-fraction/density
// deficit coefficient.  The horizontal variant splits momentum into x/z
// components of the trajectory angle theta.
//
// This assembly is shared verbatim between the ODE reference solver (plain
// doubles, rows solved for dy/ds) and the learned-model physics residual
// (autodiff scalars, rows contracted against predicted derivatives).

#include <array>
#include <cmath>

#include "physics.hpp"

namespace h2jet {

// make_like: materialize a double constant "in the world of" a prototype
// scalar (for autodiff variables this records a tape constant).
inline double make_like(double /*proto*/, double v) { return v; }

template <class S>
struct VerticalRows {
  std::array<std::array<S, 3>, 3> a;  // columns: d(u)/ds, d(b)/ds, d(rho)/ds
  std::array<S, 3> rhs;
  bool entrainment_capped = false;
};

template <class S>
struct HorizontalRows {
  std::array<std::array<S, 4>, 4> a;  // columns: du, db, drho, dtheta
  std::array<S, 4> rhs;
  bool entrainment_capped = false;
};

namespace detail {

// Terms common to both orientations.
template <class S>
struct RowIngredients {
  S drho;     // density deficit rho_inf - rho_cl
  S p1;       // rho_inf - L1 * deficit  (continuity profile factor)
  S p2;       // 1 - L2 * deficit / rho_inf (momentum profile factor)
  S e_rate;   // entrainment E
  bool capped;
};

template <class S>
RowIngredients<S> row_ingredients(const S& u, const S& b, const S& rho,
                                  const SourceConditions& src, const Ambient& amb,
                                  const SpreadingModel& model) {
  RowIngredients<S> w{};
  w.drho = amb.rho_inf - rho;
  w.p1 = amb.rho_inf - model.lambda1() * w.drho;
  w.p2 = 1.0 - model.lambda2() * w.drho / amb.rho_inf;
  auto ent = entrainment(u, b, rho, src, amb, model);
  w.e_rate = ent.rate;
  w.capped = ent.capped;
  return w;
}

}  // namespace detail

template <class S>
VerticalRows<S> vertical_rows(const S& u, const S& b, const S& rho,
                              const SourceConditions& src, const Ambient& amb,
                              const SpreadingModel& model, const GasConstants& gas) {
  constexpr double pi = 3.14159265358979323846;
  const auto w = detail::row_ingredients(u, b, rho, src, amb, model);
  const double l1 = model.lambda1();
  const double l2 = model.lambda2();
  const double ll = model.lambda * model.lambda;
  const double c = gas.deficit_coeff();

  VerticalRows<S> out;
  out.entrainment_capped = w.capped;
  // Continuity.
  out.a[0][0] = b * b * w.p1;
  out.a[0][1] = 2.0 * u * b * w.p1;
  out.a[0][2] = u * b * b * l1;
  out.rhs[0] = amb.rho_inf * w.e_rate / pi;
  // Streamwise momentum (row divided through by rho_inf).
  out.a[1][0] = u * b * b * w.p2;
  out.a[1][1] = u * u * b * w.p2;
  out.a[1][2] = u * u * (b * b / 2.0) * l2 / amb.rho_inf;
  out.rhs[1] = amb.gravity * ll * b * b * w.drho / amb.rho_inf;
  // Species.  rho*Y is expanded through the identity rho*Y = c*(rho_inf-rho),
  // the unclamped inverse of the mass-fraction map, which keeps the conserved
  // hydrogen flux exact even where the reported mass fraction saturates.
  out.a[2][0] = c * w.drho * b * b;
  out.a[2][1] = 2.0 * u * c * w.drho * b;
  out.a[2][2] = -u * b * b * c;
  out.rhs[2] = make_like(u, 0.0);
  return out;
}

template <class S>
HorizontalRows<S> horizontal_rows(const S& u, const S& b, const S& rho, const S& theta,
                                  const SourceConditions& src, const Ambient& amb,
                                  const SpreadingModel& model, const GasConstants& gas) {
  using std::cos;
  using std::sin;
  constexpr double pi = 3.14159265358979323846;
  const auto w = detail::row_ingredients(u, b, rho, src, amb, model);
  const double l1 = model.lambda1();
  const double l2 = model.lambda2();
  const double ll = model.lambda * model.lambda;
  const double c = gas.deficit_coeff();
  const S ct = cos(theta);
  const S st = sin(theta);

  HorizontalRows<S> out;
  out.entrainment_capped = w.capped;
  // Continuity (no theta dependence).
  out.a[0][0] = b * b * w.p1;
  out.a[0][1] = 2.0 * u * b * w.p1;
  out.a[0][2] = u * b * b * l1;
  out.a[0][3] = make_like(u, 0.0);
  out.rhs[0] = amb.rho_inf * w.e_rate / pi;
  // Horizontal momentum component: d/ds[cos(theta) * flux] = 0.
  out.a[1][0] = u * ct * b * b * w.p2;
  out.a[1][1] = u * u * ct * b * w.p2;
  out.a[1][2] = u * u * ct * (b * b / 2.0) * l2 / amb.rho_inf;
  out.a[1][3] = -(u * u) * st * (b * b / 2.0) * w.p2;
  out.rhs[1] = make_like(u, 0.0);
  // Vertical momentum component: buoyancy bends the trajectory upward.
  out.a[2][0] = u * st * b * b * w.p2;
  out.a[2][1] = u * u * st * b * w.p2;
  out.a[2][2] = u * u * st * (b * b / 2.0) * l2 / amb.rho_inf;
  out.a[2][3] = (u * u) * ct * (b * b / 2.0) * w.p2;
  out.rhs[2] = amb.gravity * ll * b * b * w.drho / amb.rho_inf;
  // Species (same deficit identity as the vertical case).
  out.a[3][0] = c * w.drho * b * b;
  out.a[3][1] = 2.0 * u * c * w.drho * b;
  out.a[3][2] = -u * b * b * c;
  out.a[3][3] = make_like(u, 0.0);
  out.rhs[3] = make_like(u, 0.0);
  return out;
}

}  // namespace h2jet
