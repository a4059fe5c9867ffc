#pragma once

// Dense Gaussian elimination with partial pivoting for the small (3x3 / 4x4)
// systems produced by the centerline model.  Kept hand-rolled and explicit so
// each integration step is auditable; a condition estimate (infinity norm of
// A times the explicitly formed inverse) guards against near-singular states.

#include <array>
#include <cmath>
#include <string>

#include "errors.hpp"

namespace h2jet {

template <int N>
using Mat = std::array<std::array<double, N>, N>;
template <int N>
using Vec = std::array<double, N>;

template <int N>
double norm_inf(const Mat<N>& a) {
  double best = 0.0;
  for (int i = 0; i < N; ++i) {
    double row = 0.0;
    for (int j = 0; j < N; ++j) row += std::abs(a[i][j]);
    best = std::max(best, row);
  }
  return best;
}

struct SolveInfo {
  double condition = 0.0;  // norm_inf(A) * norm_inf(inv(A))
};

// Solves a*x = r.  Eliminates the right-hand side together with the identity
// so the inverse (for the condition estimate) costs no extra factorization.
template <int N>
Vec<N> solve_linear(const Mat<N>& a, const Vec<N>& r, SolveInfo* info = nullptr,
                    double condition_limit = 1e12) {
  // Augmented system [A | r | I].
  constexpr int M = N + 1 + N;
  std::array<std::array<double, M>, N> w{};
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) w[i][j] = a[i][j];
    w[i][N] = r[i];
    w[i][N + 1 + i] = 1.0;
  }
  for (int col = 0; col < N; ++col) {
    int piv = col;
    for (int i = col + 1; i < N; ++i)
      if (std::abs(w[i][col]) > std::abs(w[piv][col])) piv = i;
    if (w[piv][col] == 0.0)
      throw domain_error("solve_linear: singular coefficient matrix (zero pivot in column " +
                         std::to_string(col) + ")");
    if (piv != col) std::swap(w[piv], w[col]);
    const double inv_p = 1.0 / w[col][col];
    for (int j = col; j < M; ++j) w[col][j] *= inv_p;
    for (int i = 0; i < N; ++i) {
      if (i == col) continue;
      const double f = w[i][col];
      if (f == 0.0) continue;
      for (int j = col; j < M; ++j) w[i][j] -= f * w[col][j];
    }
  }
  // Condition estimate from the explicitly formed inverse.
  double inv_norm = 0.0;
  for (int i = 0; i < N; ++i) {
    double row = 0.0;
    for (int j = 0; j < N; ++j) row += std::abs(w[i][N + 1 + j]);
    inv_norm = std::max(inv_norm, row);
  }
  const double cond = norm_inf<N>(a) * inv_norm;
  if (info) info->condition = cond;
  if (!(cond < condition_limit))
    throw domain_error("solve_linear: ill-conditioned coefficient matrix (estimate " +
                       std::to_string(cond) + ")");
  Vec<N> x{};
  for (int i = 0; i < N; ++i) x[i] = w[i][N];
  return x;
}

}  // namespace h2jet
