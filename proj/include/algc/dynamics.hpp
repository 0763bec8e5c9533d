#pragma once

#include "algc/algebroid.hpp"
#include "algc/csv.hpp"

#include <algorithm>
#include <cmath>

namespace algc {

/// Piecewise-constant control: value values[k] on (breakpoints[k], breakpoints[k+1]].
template <typename Scalar>
struct PiecewiseControlT {
  std::vector<Scalar> breakpoints;   // strictly increasing, size K+1
  std::vector<VecX<Scalar>> values;  // size K

  Scalar t0() const { return breakpoints.front(); }
  Scalar t1() const { return breakpoints.back(); }
  Index segments() const { return static_cast<Index>(values.size()); }

  void validate() const {
    if (breakpoints.size() < 2 || values.size() + 1 != breakpoints.size())
      throw DimensionError("piecewise control: need K+1 breakpoints for K segments");
    for (size_t k = 0; k + 1 < breakpoints.size(); ++k)
      if (!(breakpoints[k] < breakpoints[k + 1]))
        throw DimensionError("piecewise control: breakpoints must be strictly increasing");
  }

  static PiecewiseControlT constant(Scalar ta, Scalar tb, VecX<Scalar> u) {
    PiecewiseControlT c;
    c.breakpoints = {ta, tb};
    c.values = {std::move(u)};
    return c;
  }

  Index segment_of(Scalar t) const {
    // value on (s_k, s_{k+1}]; t0 belongs to the first segment
    if (t <= breakpoints.front()) return 0;
    auto it = std::lower_bound(breakpoints.begin(), breakpoints.end(), t);
    Index k = static_cast<Index>(it - breakpoints.begin()) - 1;
    return std::clamp<Index>(k, 0, segments() - 1);
  }

  const VecX<Scalar>& value_at(Scalar t) const {
    return values[static_cast<size_t>(segment_of(t))];
  }
};

/// Time grid plus samples of the base path x(t), the fibre part a(t) and the
/// accumulated cost. The grid contains every control breakpoint; seg_begin
/// lists the node index where each segment starts. At a joint node the fibre
/// sample a(t) carries the left segment's control, matching the convention
/// that u takes its k-th value on (s_k, s_{k+1}].
template <typename Scalar>
struct SampledPathT {
  VecX<Scalar> times;
  MatX<Scalar> x;     // N x n
  MatX<Scalar> a;     // N x m (may have 0 cols)
  VecX<Scalar> cost;  // N (may be empty)
  std::vector<Index> seg_begin = {0};

  Index nodes() const { return times.size(); }
  Scalar t0() const { return times[0]; }
  Scalar t1() const { return times[times.size() - 1]; }
  VecX<Scalar> x_at(Index i) const { return x.row(i).transpose(); }
  VecX<Scalar> a_at(Index i) const { return a.row(i).transpose(); }

  bool has_fiber() const { return a.cols() > 0 && a.rows() == times.size(); }
  bool has_cost() const { return cost.size() == times.size(); }

  bool near_segment_boundary(Index i, Index margin = 1) const {
    for (Index b : seg_begin)
      if (std::abs(i - b) <= margin) return true;
    return std::abs(i - (nodes() - 1)) <= margin;
  }

  VecX<Scalar> x_interp(Scalar t) const { return interp(x, t); }
  VecX<Scalar> a_interp(Scalar t) const { return interp(a, t); }

  Scalar cost_interp(Scalar t) const {
    const Index N = nodes();
    if (t <= times[0]) return cost[0];
    if (t >= times[N - 1]) return cost[N - 1];
    const auto [lo, w] = bracket_index(t);
    return (Scalar(1) - w) * cost[lo] + w * cost[lo + 1];
  }

  std::string to_csv() const {
    CsvWriter w;
    std::vector<std::string> names = {"t"};
    for (Index j = 0; j < x.cols(); ++j) names.push_back("x_" + std::to_string(j + 1));
    for (Index j = 0; j < a.cols(); ++j) names.push_back("a_" + std::to_string(j + 1));
    if (has_cost()) names.push_back("cost");
    w.header(names);
    for (Index i = 0; i < nodes(); ++i) {
      std::vector<double> row = {static_cast<double>(times[i])};
      for (Index j = 0; j < x.cols(); ++j) row.push_back(static_cast<double>(x(i, j)));
      for (Index j = 0; j < a.cols(); ++j) row.push_back(static_cast<double>(a(i, j)));
      if (has_cost()) row.push_back(static_cast<double>(cost[i]));
      w.row(row);
    }
    return w.str();
  }

 private:
  std::pair<Index, Scalar> bracket_index(Scalar t) const {
    Index lo = 0, hi = nodes() - 1;
    while (hi - lo > 1) {
      Index mid = (lo + hi) / 2;
      if (times[mid] <= t)
        lo = mid;
      else
        hi = mid;
    }
    return {lo, (t - times[lo]) / (times[lo + 1] - times[lo])};
  }

  VecX<Scalar> interp(const MatX<Scalar>& table, Scalar t) const {
    const Index N = nodes();
    if (t <= times[0]) return table.row(0).transpose();
    if (t >= times[N - 1]) return table.row(N - 1).transpose();
    const auto [lo, w] = bracket_index(t);
    return ((Scalar(1) - w) * table.row(lo) + w * table.row(lo + 1)).transpose();
  }
};

namespace detail {

/// One classical RK4 step for y' = f(t, y).
template <typename Scalar, typename Rhs>
VecX<Scalar> rk4_step(const Rhs& f, Scalar t, const VecX<Scalar>& y, Scalar h) {
  const VecX<Scalar> k1 = f(t, y);
  const VecX<Scalar> k2 = f(t + h / 2, (y + (h / 2) * k1).eval());
  const VecX<Scalar> k3 = f(t + h / 2, (y + (h / 2) * k2).eval());
  const VecX<Scalar> k4 = f(t + h, (y + h * k3).eval());
  return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
}

}  // namespace detail

/// Fixed-step RK4 for xdot = rho(x) f(x, u(t)), optionally accumulating the
/// running cost cdot = L(x, u(t)). Each control segment is integrated with
/// steps_per_segment uniform steps, so no step crosses a control jump.
template <typename Scalar, typename FFun, typename LFun>
SampledPathT<Scalar> integrate_base_raw(const LocalAlgebroidT<Scalar>& alg, const FFun& f,
                                        const LFun& cost_rate,
                                        const PiecewiseControlT<Scalar>& u,
                                        const VecX<Scalar>& x0, int steps_per_segment,
                                        bool with_cost) {
  u.validate();
  if (x0.size() != alg.n) throw DimensionError("integrate_base: x0 dimension mismatch");
  if (steps_per_segment < 1) throw DimensionError("integrate_base: need at least one step");

  const Index K = u.segments();
  const Index N = K * steps_per_segment + 1;
  SampledPathT<Scalar> path;
  path.times.resize(N);
  path.x.resize(N, alg.n);
  path.a.resize(N, alg.m);
  if (with_cost) path.cost.resize(N);
  path.seg_begin.clear();

  const Scalar guard = Defaults<Scalar>::overflow_guard;
  VecX<Scalar> state(alg.n + (with_cost ? 1 : 0));
  state.head(alg.n) = x0;
  if (with_cost) state[alg.n] = Scalar(0);

  auto write = [&](Index node, Scalar t, const VecX<Scalar>& uk) {
    path.times[node] = t;
    path.x.row(node) = state.head(alg.n).transpose();
    path.a.row(node) = f(state.head(alg.n).eval(), uk).transpose();
    if (with_cost) path.cost[node] = state[alg.n];
  };

  write(0, u.breakpoints[0], u.values[0]);
  Index node = 0;
  for (Index k = 0; k < K; ++k) {
    path.seg_begin.push_back(k * steps_per_segment);
    const Scalar ta = u.breakpoints[static_cast<size_t>(k)];
    const Scalar tb = u.breakpoints[static_cast<size_t>(k + 1)];
    const Scalar h = (tb - ta) / Scalar(steps_per_segment);
    const VecX<Scalar>& uk = u.values[static_cast<size_t>(k)];

    auto rhs = [&](Scalar, const VecX<Scalar>& s) {
      const VecX<Scalar> xx = s.head(alg.n);
      VecX<Scalar> ds(s.size());
      ds.head(alg.n) = alg.anchor(xx) * f(xx, uk);
      if (with_cost) ds[alg.n] = cost_rate(xx, uk);
      return ds;
    };

    for (int s = 0; s < steps_per_segment; ++s) {
      const Scalar t = ta + h * Scalar(s);
      state = detail::rk4_step(rhs, t, state, h);
      ++node;
      const Scalar tn = (s + 1 == steps_per_segment) ? tb : t + h;
      write(node, tn, uk);
      if (!state.allFinite() || (alg.n > 0 && state.head(alg.n).template lpNorm<Eigen::Infinity>() > guard))
        throw NumericalError("integrate_base: trajectory diverged near t = " +
                             format_number(static_cast<double>(tn)));
    }
  }
  return path;
}

/// Max-norm defect of the admissibility relation rho(a(t)) = xdot(t),
/// with xdot from centered differences interior to each control segment.
template <typename Scalar>
Scalar admissibility_residual(const LocalAlgebroidT<Scalar>& alg,
                              const SampledPathT<Scalar>& path) {
  if (!path.has_fiber())
    throw DimensionError("admissibility_residual: path has no fibre samples");
  Scalar worst = 0;
  const Index N = path.nodes();
  for (Index i = 1; i + 1 < N; ++i) {
    if (path.near_segment_boundary(i)) continue;
    const Scalar dt = path.times[i + 1] - path.times[i - 1];
    const VecX<Scalar> xdot = (path.x.row(i + 1) - path.x.row(i - 1)).transpose() / dt;
    const VecX<Scalar> r = alg.anchor(path.x_at(i)) * path.a_at(i) - xdot;
    if (r.size() > 0) worst = std::max(worst, r.template lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/// Reparametrised path a~(t) = hdot(t) a(h(t)) over x~(t) = x(h(t)), sampled
/// on a uniform grid of [0,1]. h : [0,1] -> [t0,t1] must be C^1 and strictly
/// monotone (either orientation).
template <typename Scalar>
SampledPathT<Scalar> reparametrize(const SampledPathT<Scalar>& path,
                                   const std::function<Scalar(Scalar)>& h,
                                   std::function<Scalar(Scalar)> dh = {},
                                   Index nodes = 0) {
  const Index N = nodes > 0 ? nodes : path.nodes();
  auto hdot = [&](Scalar s) {
    if (dh) return dh(s);
    const Scalar e = Defaults<Scalar>::fd_step;
    const Scalar sp = std::min(Scalar(1), s + e), sm = std::max(Scalar(0), s - e);
    return (h(sp) - h(sm)) / (sp - sm);
  };
  const Scalar d0 = hdot(Scalar(0.5));
  for (Index i = 0; i <= 16; ++i) {
    const Scalar s = Scalar(i) / Scalar(16);
    const Scalar d = hdot(s);
    if (d == Scalar(0) || (d > 0) != (d0 > 0))
      throw NumericalError("reparametrize: h must be monotone with nonvanishing derivative");
  }

  SampledPathT<Scalar> out;
  out.times.resize(N);
  out.x.resize(N, path.x.cols());
  out.a.resize(N, path.a.cols());
  if (path.has_cost()) out.cost.resize(N);
  for (Index i = 0; i < N; ++i) {
    const Scalar s = Scalar(i) / Scalar(N - 1);
    const Scalar t = h(s);
    out.times[i] = s;
    out.x.row(i) = path.x_interp(t).transpose();
    if (path.has_fiber()) out.a.row(i) = (hdot(s) * path.a_interp(t)).transpose();
    if (path.has_cost()) out.cost[i] = path.cost_interp(t);
  }
  out.seg_begin = {0};
  return out;
}

/// Concatenation of two composable paths (matching junction time and base point).
template <typename Scalar>
SampledPathT<Scalar> compose(const SampledPathT<Scalar>& p1, const SampledPathT<Scalar>& p2,
                             Scalar tol_join = Defaults<Scalar>::tol_join) {
  if (std::abs(p1.t1() - p2.t0()) > tol_join)
    throw NumericalError("compose: paths are not time-aligned at the junction");
  const VecX<Scalar> gap = (p1.x.row(p1.nodes() - 1) - p2.x.row(0)).transpose();
  if (gap.size() > 0 && gap.template lpNorm<Eigen::Infinity>() > tol_join)
    throw NumericalError("compose: base points do not match at the junction");

  SampledPathT<Scalar> out;
  const Index N1 = p1.nodes(), N2 = p2.nodes();
  const Index N = N1 + N2 - 1;
  out.times.resize(N);
  out.x.resize(N, p1.x.cols());
  out.a.resize(N, p1.a.cols());
  const bool with_cost = p1.has_cost() && p2.has_cost();
  if (with_cost) out.cost.resize(N);

  out.times.head(N1) = p1.times;
  out.x.topRows(N1) = p1.x;
  if (p1.has_fiber()) out.a.topRows(N1) = p1.a;
  out.times.tail(N2 - 1) = p2.times.tail(N2 - 1);
  out.x.bottomRows(N2 - 1) = p2.x.bottomRows(N2 - 1);
  if (p2.has_fiber()) out.a.bottomRows(N2 - 1) = p2.a.bottomRows(N2 - 1);
  if (with_cost) {
    out.cost.head(N1) = p1.cost;
    out.cost.tail(N2 - 1) = p2.cost.tail(N2 - 1).array() + p1.cost[N1 - 1];
  }
  out.seg_begin = p1.seg_begin;
  out.seg_begin.push_back(N1 - 1);
  for (Index b : p2.seg_begin)
    if (b != 0) out.seg_begin.push_back(b + N1 - 1);
  std::sort(out.seg_begin.begin(), out.seg_begin.end());
  out.seg_begin.erase(std::unique(out.seg_begin.begin(), out.seg_begin.end()),
                      out.seg_begin.end());
  return out;
}

using PiecewiseControl = PiecewiseControlT<double>;
using SampledPath = SampledPathT<double>;

}  // namespace algc
