#pragma once

#include "algc/dynamics.hpp"

#include <cmath>

namespace algc {

/// A two-parameter sheet (x(t,s), a(t,s), b(t,s)) discretised on a
/// rectangular grid; a is admissible along t-slices, b along s-slices.
template <typename Scalar>
struct HomotopySheetT {
  VecX<Scalar> t_grid;
  VecX<Scalar> s_grid;
  std::vector<MatX<Scalar>> x;  // per s: Nt x n
  std::vector<MatX<Scalar>> a;  // per s: Nt x m
  std::vector<MatX<Scalar>> b;  // per s: Nt x m

  Index nt() const { return t_grid.size(); }
  Index ns() const { return s_grid.size(); }
  Index n() const { return x.empty() ? 0 : x.front().cols(); }
  Index m() const { return a.empty() ? 0 : a.front().cols(); }

  std::string to_csv() const {
    CsvWriter w;
    std::vector<std::string> names = {"t", "s"};
    for (Index j = 0; j < n(); ++j) names.push_back("x_" + std::to_string(j + 1));
    for (Index j = 0; j < m(); ++j) names.push_back("a_" + std::to_string(j + 1));
    for (Index j = 0; j < m(); ++j) names.push_back("b_" + std::to_string(j + 1));
    w.header(names);
    for (Index js = 0; js < ns(); ++js)
      for (Index it = 0; it < nt(); ++it) {
        std::vector<double> row = {static_cast<double>(t_grid[it]),
                                   static_cast<double>(s_grid[js])};
        for (Index j = 0; j < n(); ++j)
          row.push_back(static_cast<double>(x[static_cast<size_t>(js)](it, j)));
        for (Index j = 0; j < m(); ++j)
          row.push_back(static_cast<double>(a[static_cast<size_t>(js)](it, j)));
        for (Index j = 0; j < m(); ++j)
          row.push_back(static_cast<double>(b[static_cast<size_t>(js)](it, j)));
        w.row(row);
      }
    return w.str();
  }
};

namespace detail {

/// Central differences along the s direction (one-sided at the ends),
/// applied to one component grid stored per-s.
template <typename Scalar>
std::vector<MatX<Scalar>> d_ds(const std::vector<MatX<Scalar>>& field,
                               const VecX<Scalar>& s_grid) {
  const Index ns = s_grid.size();
  std::vector<MatX<Scalar>> out(static_cast<size_t>(ns));
  for (Index j = 0; j < ns; ++j) {
    const Index jm = std::max<Index>(j - 1, 0);
    const Index jp = std::min<Index>(j + 1, ns - 1);
    out[static_cast<size_t>(j)] = (field[static_cast<size_t>(jp)] -
                                   field[static_cast<size_t>(jm)]) /
                                  (s_grid[jp] - s_grid[jm]);
  }
  return out;
}

}  // namespace detail

/// Generates the unique sheet b(t,s) accompanying a one-parameter family of
/// admissible paths, by integrating
///   d_t b^i = d_s a^i + c^i_{jk}(x) b^j a^k
/// in t for every s from the initial-point data b(t0, s) = b0(s). The
/// s-derivative of a is taken by central differences on the family's own
/// s-grid.
template <typename Scalar>
HomotopySheetT<Scalar> generate_homotopy(
    const LocalAlgebroidT<Scalar>& alg,
    const std::function<SampledPathT<Scalar>(Scalar)>& family,
    const std::function<VecX<Scalar>(Scalar)>& b0, const VecX<Scalar>& s_grid,
    Scalar tol_adm = Scalar(1e-3)) {
  const Index ns = s_grid.size();
  if (ns < 2) throw DimensionError("generate_homotopy: need at least two s values");

  HomotopySheetT<Scalar> sheet;
  sheet.s_grid = s_grid;
  sheet.x.resize(static_cast<size_t>(ns));
  sheet.a.resize(static_cast<size_t>(ns));
  sheet.b.resize(static_cast<size_t>(ns));

  for (Index j = 0; j < ns; ++j) {
    SampledPathT<Scalar> p = family(s_grid[j]);
    if (!p.has_fiber()) throw DimensionError("generate_homotopy: family path lacks fibre samples");
    if (j == 0) {
      sheet.t_grid = p.times;
    } else if (p.times.size() != sheet.t_grid.size() ||
               (p.times - sheet.t_grid).template lpNorm<Eigen::Infinity>() > Scalar(1e-12)) {
      throw DimensionError("generate_homotopy: family slices must share one t grid");
    }
    const Scalar adm = admissibility_residual(alg, p);
    if (adm > tol_adm)
      throw NumericalError("generate_homotopy: family slice not admissible, residual " +
                           format_number(static_cast<double>(adm)));
    sheet.x[static_cast<size_t>(j)] = p.x;
    sheet.a[static_cast<size_t>(j)] = p.a;
  }

  const auto ds_a = detail::d_ds(sheet.a, s_grid);
  const Index nt = sheet.nt();
  const Index m = alg.m;

  for (Index j = 0; j < ns; ++j) {
    const MatX<Scalar>& X = sheet.x[static_cast<size_t>(j)];
    const MatX<Scalar>& A = sheet.a[static_cast<size_t>(j)];
    const MatX<Scalar>& dA = ds_a[static_cast<size_t>(j)];
    MatX<Scalar> B(nt, m);
    VecX<Scalar> bcur = b0(s_grid[j]);
    if (bcur.size() != m) throw DimensionError("generate_homotopy: b0 has wrong dimension");
    B.row(0) = bcur.transpose();

    auto row_interp = [&](const MatX<Scalar>& table, Index it, Scalar w) {
      return ((Scalar(1) - w) * table.row(it) + w * table.row(it + 1)).transpose().eval();
    };
    for (Index it = 0; it + 1 < nt; ++it) {
      const Scalar h = sheet.t_grid[it + 1] - sheet.t_grid[it];
      auto rhs = [&](Scalar tloc, const VecX<Scalar>& bb) {
        const Scalar w = std::clamp((tloc - sheet.t_grid[it]) / h, Scalar(0), Scalar(1));
        const VecX<Scalar> xv = row_interp(X, it, w);
        const VecX<Scalar> av = row_interp(A, it, w);
        const VecX<Scalar> dav = row_interp(dA, it, w);
        const auto c = alg.bracket(xv);
        VecX<Scalar> out = dav;
        for (Index i = 0; i < m; ++i) out[i] += bb.dot(c[static_cast<size_t>(i)] * av);
        return out;
      };
      bcur = detail::rk4_step(rhs, sheet.t_grid[it], bcur, h);
      B.row(it + 1) = bcur.transpose();
    }
    sheet.b[static_cast<size_t>(j)] = std::move(B);
  }
  return sheet;
}

/// Max interior-grid residual of d_t b - d_s a - c(x) b a via central
/// differences in both directions.
template <typename Scalar>
Scalar homotopy_residual(const LocalAlgebroidT<Scalar>& alg,
                         const HomotopySheetT<Scalar>& sheet) {
  Scalar worst = 0;
  const Index nt = sheet.nt(), ns = sheet.ns(), m = sheet.m();
  for (Index j = 1; j + 1 < ns; ++j)
    for (Index it = 1; it + 1 < nt; ++it) {
      const Scalar dt = sheet.t_grid[it + 1] - sheet.t_grid[it - 1];
      const Scalar ds = sheet.s_grid[j + 1] - sheet.s_grid[j - 1];
      const VecX<Scalar> dbdt =
          (sheet.b[static_cast<size_t>(j)].row(it + 1) -
           sheet.b[static_cast<size_t>(j)].row(it - 1)).transpose() / dt;
      const VecX<Scalar> dads =
          (sheet.a[static_cast<size_t>(j + 1)].row(it) -
           sheet.a[static_cast<size_t>(j - 1)].row(it)).transpose() / ds;
      const VecX<Scalar> xv = sheet.x[static_cast<size_t>(j)].row(it).transpose();
      const VecX<Scalar> av = sheet.a[static_cast<size_t>(j)].row(it).transpose();
      const VecX<Scalar> bv = sheet.b[static_cast<size_t>(j)].row(it).transpose();
      const auto c = alg.bracket(xv);
      VecX<Scalar> res = dbdt - dads;
      for (Index i = 0; i < m; ++i) res[i] -= bv.dot(c[static_cast<size_t>(i)] * av);
      worst = std::max(worst, res.template lpNorm<Eigen::Infinity>());
    }
  return worst;
}

/// Max of chi^a(t,s) = d_s x^a - rho^a_i b^i over the grid. For almost-Lie
/// structure functions this vanishes to discretisation order; it is the
/// numerical witness that a generated sheet consists of admissible s-slices.
template <typename Scalar>
Scalar anchor_compatibility_residual(const LocalAlgebroidT<Scalar>& alg,
                                     const HomotopySheetT<Scalar>& sheet) {
  Scalar worst = 0;
  const Index nt = sheet.nt(), ns = sheet.ns();
  for (Index j = 1; j + 1 < ns; ++j)
    for (Index it = 0; it < nt; ++it) {
      const Scalar ds = sheet.s_grid[j + 1] - sheet.s_grid[j - 1];
      const VecX<Scalar> dxds =
          (sheet.x[static_cast<size_t>(j + 1)].row(it) -
           sheet.x[static_cast<size_t>(j - 1)].row(it)).transpose() / ds;
      const VecX<Scalar> xv = sheet.x[static_cast<size_t>(j)].row(it).transpose();
      const VecX<Scalar> bv = sheet.b[static_cast<size_t>(j)].row(it).transpose();
      const VecX<Scalar> chi = dxds - alg.anchor(xv) * bv;
      if (chi.size() > 0) worst = std::max(worst, chi.template lpNorm<Eigen::Infinity>());
    }
  return worst;
}

template <typename Scalar>
struct FinalPointHomotopyT {
  VecX<Scalar> s_grid;
  MatX<Scalar> x;  // Ns x n, base points x(t1, s)
  MatX<Scalar> b;  // Ns x m, fibre b(t1, s)
  Scalar sup_norm = 0;
};

/// The final-point slice s -> b(t1, s); its sup norm is reported as a proxy
/// for the triviality of the corresponding homotopy class.
template <typename Scalar>
FinalPointHomotopyT<Scalar> final_point_homotopy(const HomotopySheetT<Scalar>& sheet) {
  FinalPointHomotopyT<Scalar> out;
  const Index ns = sheet.ns(), nt = sheet.nt();
  out.s_grid = sheet.s_grid;
  out.x.resize(ns, sheet.n());
  out.b.resize(ns, sheet.m());
  for (Index j = 0; j < ns; ++j) {
    out.x.row(j) = sheet.x[static_cast<size_t>(j)].row(nt - 1);
    out.b.row(j) = sheet.b[static_cast<size_t>(j)].row(nt - 1);
    out.sup_norm = std::max(out.sup_norm,
                            out.b.row(j).template lpNorm<Eigen::Infinity>());
  }
  return out;
}

/// Stacks two sheets in the t direction; the junction slices of x and b must
/// agree.
template <typename Scalar>
HomotopySheetT<Scalar> stack_sheets(const HomotopySheetT<Scalar>& s1,
                                    const HomotopySheetT<Scalar>& s2,
                                    Scalar tol = Defaults<Scalar>::tol_join) {
  if (s1.ns() != s2.ns() ||
      (s1.s_grid - s2.s_grid).template lpNorm<Eigen::Infinity>() > tol)
    throw DimensionError("stack_sheets: s grids differ");
  if (std::abs(s1.t_grid[s1.nt() - 1] - s2.t_grid[0]) > tol)
    throw DimensionError("stack_sheets: t grids not contiguous");
  for (Index j = 0; j < s1.ns(); ++j) {
    const auto dx = (s1.x[static_cast<size_t>(j)].row(s1.nt() - 1) -
                     s2.x[static_cast<size_t>(j)].row(0)).norm();
    const auto db = (s1.b[static_cast<size_t>(j)].row(s1.nt() - 1) -
                     s2.b[static_cast<size_t>(j)].row(0)).norm();
    if (dx > tol || db > tol)
      throw NumericalError("stack_sheets: junction slices do not match");
  }
  HomotopySheetT<Scalar> out;
  const Index nt = s1.nt() + s2.nt() - 1;
  out.s_grid = s1.s_grid;
  out.t_grid.resize(nt);
  out.t_grid.head(s1.nt()) = s1.t_grid;
  out.t_grid.tail(s2.nt() - 1) = s2.t_grid.tail(s2.nt() - 1);
  out.x.resize(static_cast<size_t>(s1.ns()));
  out.a.resize(static_cast<size_t>(s1.ns()));
  out.b.resize(static_cast<size_t>(s1.ns()));
  for (Index j = 0; j < s1.ns(); ++j) {
    auto stack = [&](const MatX<Scalar>& top, const MatX<Scalar>& bot) {
      MatX<Scalar> M(nt, top.cols());
      M.topRows(s1.nt()) = top;
      M.bottomRows(s2.nt() - 1) = bot.bottomRows(s2.nt() - 1);
      return M;
    };
    out.x[static_cast<size_t>(j)] =
        stack(s1.x[static_cast<size_t>(j)], s2.x[static_cast<size_t>(j)]);
    out.a[static_cast<size_t>(j)] =
        stack(s1.a[static_cast<size_t>(j)], s2.a[static_cast<size_t>(j)]);
    out.b[static_cast<size_t>(j)] =
        stack(s1.b[static_cast<size_t>(j)], s2.b[static_cast<size_t>(j)]);
  }
  return out;
}

using HomotopySheet = HomotopySheetT<double>;
using FinalPointHomotopy = FinalPointHomotopyT<double>;

}  // namespace algc
