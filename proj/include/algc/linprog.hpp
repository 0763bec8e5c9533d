#pragma once

#include "algc/types.hpp"

#include <cmath>

namespace algc {

struct LinProgResult {
  bool solved = false;      // optimum found
  bool unbounded = false;   // primal unbounded (dual infeasible)
  VecX<double> z;           // primal solution
  double value = 0;         // c . z
};

/// Maximise c.z subject to A z <= b with z free. Solved through the dual
///   min b.y  s.t.  A^T y = c,  y >= 0
/// by a two-phase revised simplex with Bland's rule (the primal dimension is
/// tiny here, so each iteration refactorises the basis). The caller must
/// supply rows bounding every coordinate of z (the separation problems below
/// always carry unit-box rows), which keeps the primal bounded and the dual
/// basis free of artificial columns at the end.
inline LinProgResult linprog_max(const MatX<double>& A, const VecX<double>& b,
                                 const VecX<double>& c) {
  const Index m = A.rows();
  const Index n = A.cols();
  if (b.size() != m || c.size() != n) throw DimensionError("linprog: shape mismatch");

  const double eps = 1e-11;
  std::vector<Index> basis(static_cast<size_t>(n));
  VecX<double> art_sign(n);
  for (Index j = 0; j < n; ++j) {
    basis[static_cast<size_t>(j)] = m + j;  // artificial
    art_sign[j] = (c[j] >= 0) ? 1.0 : -1.0;
  }

  auto column = [&](Index j) -> VecX<double> {
    if (j < m) return A.row(j).transpose();
    VecX<double> e = VecX<double>::Zero(n);
    e[j - m] = art_sign[j - m];
    return e;
  };

  auto basis_matrix = [&]() {
    MatX<double> M(n, n);
    for (Index r = 0; r < n; ++r) M.col(r) = column(basis[static_cast<size_t>(r)]);
    return M;
  };

  auto simplex = [&](const auto& cost_of, bool allow_artificial) -> bool {
    for (int iter = 0; iter < 200000; ++iter) {
      MatX<double> M = basis_matrix();
      Eigen::PartialPivLU<MatX<double>> lu(M);
      VecX<double> cb(n);
      for (Index r = 0; r < n; ++r) cb[r] = cost_of(basis[static_cast<size_t>(r)]);
      const VecX<double> pi = lu.transpose().solve(cb);
      const VecX<double> xb = lu.solve(c);

      // Bland: smallest-index entering column with negative reduced cost
      Index enter = -1;
      const Index limit = allow_artificial ? m + n : m;
      for (Index j = 0; j < limit; ++j) {
        bool in_basis = false;
        for (Index r = 0; r < n; ++r)
          if (basis[static_cast<size_t>(r)] == j) in_basis = true;
        if (in_basis) continue;
        const double red = cost_of(j) - pi.dot(column(j));
        if (red < -eps) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;  // optimal

      const VecX<double> dir = lu.solve(column(enter));
      Index leave = -1;
      double best_ratio = 0;
      for (Index r = 0; r < n; ++r) {
        if (dir[r] > eps) {
          const double ratio = std::max(xb[r], 0.0) / dir[r];
          if (leave < 0 || ratio < best_ratio - 1e-15 ||
              (std::abs(ratio - best_ratio) <= 1e-15 &&
               basis[static_cast<size_t>(r)] < basis[static_cast<size_t>(leave)])) {
            leave = r;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return false;  // dual unbounded
      basis[static_cast<size_t>(leave)] = enter;
    }
    throw NumericalError("linprog: iteration limit exceeded");
  };

  // Phase 1: drive the artificial variables to zero.
  auto cost1 = [&](Index j) { return j >= m ? 1.0 : 0.0; };
  if (!simplex(cost1, true)) throw NumericalError("linprog: phase-1 unbounded");
  {
    MatX<double> M = basis_matrix();
    const VecX<double> xb = M.partialPivLu().solve(c);
    double art_total = 0;
    for (Index r = 0; r < n; ++r)
      if (basis[static_cast<size_t>(r)] >= m) art_total += std::abs(xb[r]);
    if (art_total > 1e-8) {
      LinProgResult res;
      res.unbounded = true;  // dual infeasible
      return res;
    }
  }
  // Pivot any zero-valued artificial out of the basis.
  for (Index r = 0; r < n; ++r) {
    if (basis[static_cast<size_t>(r)] < m) continue;
    MatX<double> M = basis_matrix();
    Eigen::PartialPivLU<MatX<double>> lu(M);
    bool done = false;
    for (Index j = 0; j < m && !done; ++j) {
      bool in_basis = false;
      for (Index rr = 0; rr < n; ++rr)
        if (basis[static_cast<size_t>(rr)] == j) in_basis = true;
      if (in_basis) continue;
      const VecX<double> dir = lu.solve(column(j));
      if (std::abs(dir[r]) > 1e-9) {
        basis[static_cast<size_t>(r)] = j;
        done = true;
      }
    }
    if (!done)
      throw NumericalError("linprog: could not remove an artificial column (add box rows)");
  }

  // Phase 2: optimise the true dual objective.
  auto cost2 = [&](Index j) { return j >= m ? 1e30 : b[j]; };
  if (!simplex(cost2, false)) {
    LinProgResult res;
    res.unbounded = true;
    return res;
  }

  LinProgResult res;
  MatX<double> M = basis_matrix();
  VecX<double> bB(n);
  for (Index r = 0; r < n; ++r) bB[r] = b[basis[static_cast<size_t>(r)]];
  res.z = M.transpose().partialPivLu().solve(bB);
  res.value = c.dot(res.z);
  res.solved = true;
  return res;
}

}  // namespace algc
