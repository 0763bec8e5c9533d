#pragma once

#include "algc/dynamics.hpp"

#include <cmath>
#include <limits>

namespace algc {

/// Admissible control values: a finite list, a box sampled on a grid, or an
/// analytic argmax hook u*(x, xi, xi0) for unconstrained problems.
template <typename Scalar>
struct ControlSetT {
  enum class Kind { Finite, Box, Analytic };
  using Vec = VecX<Scalar>;

  Kind kind = Kind::Finite;
  std::vector<Vec> points;
  BoxT<Scalar> box;
  std::vector<int> grid;
  std::function<Vec(const Vec& x, const Vec& xi, Scalar xi0)> argmax_hook;
  Index r = 0;

  static ControlSetT finite(std::vector<Vec> pts) {
    if (pts.empty()) throw DimensionError("control set: empty point list");
    ControlSetT u;
    u.kind = Kind::Finite;
    u.r = pts.front().size();
    u.points = std::move(pts);
    return u;
  }

  static ControlSetT box_grid(BoxT<Scalar> b, std::vector<int> res) {
    if (b.dim() == 0 || static_cast<Index>(res.size()) != b.dim())
      throw DimensionError("control set: box/grid dimension mismatch");
    ControlSetT u;
    u.kind = Kind::Box;
    u.r = b.dim();
    u.box = std::move(b);
    u.grid = std::move(res);
    return u;
  }

  static ControlSetT analytic(Index dim,
                              std::function<Vec(const Vec&, const Vec&, Scalar)> hook) {
    ControlSetT u;
    u.kind = Kind::Analytic;
    u.r = dim;
    u.argmax_hook = std::move(hook);
    return u;
  }

  /// Representative probe values: all points of a finite set, or the face
  /// midpoints (2r axis probes) of a box.
  std::vector<Vec> probes() const {
    switch (kind) {
      case Kind::Finite:
        return points;
      case Kind::Box: {
        std::vector<Vec> out;
        const Vec mid = Scalar(0.5) * (box.lo + box.hi);
        for (Index d = 0; d < r; ++d) {
          Vec lo = mid, hi = mid;
          lo[d] = box.lo[d];
          hi[d] = box.hi[d];
          out.push_back(lo);
          out.push_back(hi);
        }
        return out;
      }
      case Kind::Analytic:
        return {};
    }
    return {};
  }
};

/// A control system f : M x U -> E with a running cost L. Derivatives in x
/// may be supplied analytically; central differences are the fallback.
template <typename Scalar>
struct ControlProblemT {
  using Vec = VecX<Scalar>;
  using Mat = MatX<Scalar>;

  LocalAlgebroidT<Scalar> alg;
  std::function<Vec(const Vec&, const Vec&)> f;
  std::function<Mat(const Vec&, const Vec&)> df_dx;  // m x n, optional
  std::function<Scalar(const Vec&, const Vec&)> cost;
  std::function<Vec(const Vec&, const Vec&)> dcost_dx;  // n, optional
  ControlSetT<Scalar> U;
  Scalar fd_step = Defaults<Scalar>::fd_step;

  Mat f_jac(const Vec& x, const Vec& u) const {
    if (df_dx) return df_dx(x, u);
    Mat J(alg.m, alg.n);
    for (Index b = 0; b < alg.n; ++b) {
      Vec xp = x, xm = x;
      xp[b] += fd_step;
      xm[b] -= fd_step;
      J.col(b) = (f(xp, u) - f(xm, u)) / (2 * fd_step);
    }
    return J;
  }

  Vec cost_grad(const Vec& x, const Vec& u) const {
    if (dcost_dx) return dcost_dx(x, u);
    Vec g(alg.n);
    for (Index b = 0; b < alg.n; ++b) {
      Vec xp = x, xm = x;
      xp[b] += fd_step;
      xm[b] -= fd_step;
      g[b] = (cost(xp, u) - cost(xm, u)) / (2 * fd_step);
    }
    return g;
  }
};

/// Max defect between the supplied analytic x-derivatives and central
/// finite differences, over the given sample points and controls.
template <typename Scalar>
Scalar derivative_defect(const ControlProblemT<Scalar>& pb,
                         const std::vector<VecX<Scalar>>& xs,
                         const std::vector<VecX<Scalar>>& us,
                         Scalar h = Defaults<Scalar>::fd_check_step) {
  Scalar worst = 0;
  for (const auto& x : xs)
    for (const auto& u : us) {
      for (Index b = 0; b < pb.alg.n; ++b) {
        VecX<Scalar> xp = x, xm = x;
        xp[b] += h;
        xm[b] -= h;
        const VecX<Scalar> fd = (pb.f(xp, u) - pb.f(xm, u)) / (2 * h);
        worst = std::max(worst,
                         (pb.f_jac(x, u).col(b) - fd).template lpNorm<Eigen::Infinity>());
        const Scalar fdL = (pb.cost(xp, u) - pb.cost(xm, u)) / (2 * h);
        worst = std::max(worst, std::abs(pb.cost_grad(x, u)[b] - fdL));
      }
    }
  return worst;
}

/// Integrates the base equation xdot = rho(f(x, u(t))) and accumulates the
/// running cost; fibre samples a(t) = f(x(t), u(t)) are attached.
template <typename Scalar>
SampledPathT<Scalar> integrate_base(const ControlProblemT<Scalar>& pb,
                                    const PiecewiseControlT<Scalar>& u,
                                    const VecX<Scalar>& x0,
                                    int steps_per_segment = Defaults<Scalar>::steps_per_segment) {
  return integrate_base_raw(pb.alg, pb.f, pb.cost, u, x0, steps_per_segment, true);
}

/// The extension of a control problem to the product algebroid E x TR: the
/// base gains the cost coordinate with dynamics xdot_cost = L(x, u), the
/// fibre gains the matching cost slot.
template <typename Scalar>
ControlProblemT<Scalar> extend_system(const ControlProblemT<Scalar>& pb) {
  const Index n = pb.alg.n, m = pb.alg.m;
  ControlProblemT<Scalar> ext;
  ext.alg = product_algebroid(pb.alg, tangent_algebroid<Scalar>(1));
  ext.fd_step = pb.fd_step;
  ext.U = pb.U;
  ext.f = [pb, n, m](const VecX<Scalar>& xx, const VecX<Scalar>& u) {
    const VecX<Scalar> x = xx.head(n);
    VecX<Scalar> out(m + 1);
    out.head(m) = pb.f(x, u);
    out[m] = pb.cost(x, u);
    return out;
  };
  ext.df_dx = [pb, n, m](const VecX<Scalar>& xx, const VecX<Scalar>& u) {
    const VecX<Scalar> x = xx.head(n);
    MatX<Scalar> J = MatX<Scalar>::Zero(m + 1, n + 1);
    J.topLeftCorner(m, n) = pb.f_jac(x, u);
    J.bottomLeftCorner(1, n) = pb.cost_grad(x, u).transpose();
    return J;
  };
  ext.cost = [pb, n](const VecX<Scalar>& xx, const VecX<Scalar>& u) {
    return pb.cost(xx.head(n).eval(), u);
  };
  ext.dcost_dx = [pb, n](const VecX<Scalar>& xx, const VecX<Scalar>& u) {
    VecX<Scalar> g = VecX<Scalar>::Zero(n + 1);
    g.head(n) = pb.cost_grad(xx.head(n).eval(), u);
    return g;
  };
  return ext;
}

/// Lifts a cost-accumulating base path of `pb` to a base path of the
/// extended system on E x TR (cost becomes a base coordinate).
template <typename Scalar>
SampledPathT<Scalar> as_extended_path(const ControlProblemT<Scalar>& pb,
                                      const SampledPathT<Scalar>& path,
                                      const PiecewiseControlT<Scalar>& u) {
  if (!path.has_cost())
    throw DimensionError("as_extended_path: path lacks accumulated cost");
  SampledPathT<Scalar> out;
  const Index N = path.nodes();
  out.times = path.times;
  out.x.resize(N, pb.alg.n + 1);
  out.x.leftCols(pb.alg.n) = path.x;
  out.x.col(pb.alg.n) = path.cost;
  out.a.resize(N, pb.alg.m + 1);
  out.a.leftCols(pb.alg.m) = path.a;
  for (Index i = 0; i < N; ++i)
    out.a(i, pb.alg.m) = pb.cost(path.x_at(i), u.value_at(path.times[i]));
  out.cost = path.cost;
  out.seg_begin = path.seg_begin;
  return out;
}

namespace detail {

template <typename Scalar>
struct SegmentSpan {
  Index begin;  // node index of the first node
  Index end;    // node index of the last node (inclusive)
};

template <typename Scalar>
std::vector<SegmentSpan<Scalar>> segment_spans(const SampledPathT<Scalar>& path) {
  std::vector<SegmentSpan<Scalar>> spans;
  std::vector<Index> b = path.seg_begin;
  std::sort(b.begin(), b.end());
  for (size_t k = 0; k < b.size(); ++k) {
    const Index lo = b[k];
    const Index hi = (k + 1 < b.size()) ? b[k + 1] : path.nodes() - 1;
    if (hi > lo) spans.push_back({lo, hi});
  }
  return spans;
}

}  // namespace detail

/// Parallel transport in E along a controlled trajectory: the flow of the
/// complete lift of f_{u(t)},
///   bdot^i = (df^i/dx^a) rho^a_k b^k + c^i_{jk} b^j f^k.
/// The base is re-integrated jointly so the stage values stay 4th order.
/// Returns fibre samples aligned with the base path grid.
template <typename Scalar>
MatX<Scalar> parallel_transport(const ControlProblemT<Scalar>& pb,
                                const PiecewiseControlT<Scalar>& u,
                                const SampledPathT<Scalar>& base_path,
                                const VecX<Scalar>& b_init) {
  const Index n = pb.alg.n, m = pb.alg.m;
  if (b_init.size() != m) throw DimensionError("parallel_transport: fibre dimension mismatch");
  MatX<Scalar> out(base_path.nodes(), m);

  VecX<Scalar> state(n + m);
  state.head(n) = base_path.x_at(0);
  state.tail(m) = b_init;
  out.row(0) = b_init.transpose();

  for (const auto& span : detail::segment_spans(base_path)) {
    const Scalar tmid =
        Scalar(0.5) * (base_path.times[span.begin] + base_path.times[span.end]);
    const VecX<Scalar> uk = u.value_at(tmid);
    auto rhs = [&](Scalar, const VecX<Scalar>& z) {
      const VecX<Scalar> x = z.head(n);
      const VecX<Scalar> b = z.tail(m);
      const VecX<Scalar> fv = pb.f(x, uk);
      const MatX<Scalar> rho = pb.alg.anchor(x);
      const auto c = pb.alg.bracket(x);
      VecX<Scalar> dz(n + m);
      dz.head(n) = rho * fv;
      VecX<Scalar> bdot = pb.f_jac(x, uk) * (rho * b);
      for (Index i = 0; i < m; ++i) bdot[i] += b.dot(c[static_cast<size_t>(i)] * fv);
      dz.tail(m) = bdot;
      return dz;
    };
    for (Index i = span.begin; i < span.end; ++i) {
      const Scalar h = base_path.times[i + 1] - base_path.times[i];
      state = detail::rk4_step(rhs, base_path.times[i], state, h);
      out.row(i + 1) = state.tail(m).transpose();
    }
  }
  return out;
}

/// Fundamental matrices Phi(t_i) of the parallel transport, with
/// Phi(t_0) = Id, so B_{t_i t_j} = Phi(t_i) Phi(t_j)^{-1}.
template <typename Scalar>
std::vector<MatX<Scalar>> parallel_transport_matrix(const ControlProblemT<Scalar>& pb,
                                                    const PiecewiseControlT<Scalar>& u,
                                                    const SampledPathT<Scalar>& base_path) {
  const Index n = pb.alg.n, m = pb.alg.m;
  std::vector<MatX<Scalar>> out(static_cast<size_t>(base_path.nodes()));
  VecX<Scalar> state(n + m * m);
  state.head(n) = base_path.x_at(0);
  Eigen::Map<MatX<Scalar>>(state.data() + n, m, m) = MatX<Scalar>::Identity(m, m);
  out[0] = MatX<Scalar>::Identity(m, m);

  for (const auto& span : detail::segment_spans(base_path)) {
    const Scalar tmid =
        Scalar(0.5) * (base_path.times[span.begin] + base_path.times[span.end]);
    const VecX<Scalar> uk = u.value_at(tmid);
    auto rhs = [&](Scalar, const VecX<Scalar>& z) {
      const VecX<Scalar> x = z.head(n);
      const Eigen::Map<const MatX<Scalar>> B(z.data() + n, m, m);
      const VecX<Scalar> fv = pb.f(x, uk);
      const MatX<Scalar> rho = pb.alg.anchor(x);
      const auto c = pb.alg.bracket(x);
      VecX<Scalar> dz(n + m * m);
      dz.head(n) = rho * fv;
      // bdot = A(x) b with A = df rho + rows (C_i f)^T, since
      // c^i_{jk} b^j f^k = (C_i f) . b
      MatX<Scalar> A = pb.f_jac(x, uk) * rho;
      for (Index i = 0; i < m; ++i)
        A.row(i) += (c[static_cast<size_t>(i)] * fv).transpose();
      Eigen::Map<MatX<Scalar>>(dz.data() + n, m, m) = A * B;
      return dz;
    };
    for (Index i = span.begin; i < span.end; ++i) {
      const Scalar h = base_path.times[i + 1] - base_path.times[i];
      state = detail::rk4_step(rhs, base_path.times[i], state, h);
      out[static_cast<size_t>(i + 1)] = Eigen::Map<MatX<Scalar>>(state.data() + n, m, m);
    }
  }
  return out;
}

/// Pontryagin covector path: (x(t), xi(t)) with the constant abnormal
/// multiplier xi0, plus the sampled Hamiltonian and argmax gap.
template <typename Scalar>
struct CostateTrajectoryT {
  VecX<Scalar> times;
  MatX<Scalar> x;   // N x n
  MatX<Scalar> xi;  // N x m
  Scalar xi0 = Scalar(-1);
  VecX<Scalar> H;    // optional
  VecX<Scalar> gap;  // optional
  MatX<Scalar> u_samples;  // optional N x r
  std::vector<Index> seg_begin = {0};

  Index nodes() const { return times.size(); }
  VecX<Scalar> x_at(Index i) const { return x.row(i).transpose(); }
  VecX<Scalar> xi_at(Index i) const { return xi.row(i).transpose(); }
  bool near_segment_boundary(Index i, Index margin = 1) const {
    for (Index b : seg_begin)
      if (std::abs(i - b) <= margin) return true;
    return std::abs(i - (nodes() - 1)) <= margin;
  }

  std::string to_csv() const {
    CsvWriter w;
    std::vector<std::string> names = {"t"};
    for (Index j = 0; j < x.cols(); ++j) names.push_back("x_" + std::to_string(j + 1));
    for (Index j = 0; j < xi.cols(); ++j) names.push_back("xi_" + std::to_string(j + 1));
    names.push_back("xi0");
    if (H.size() == nodes()) names.push_back("H");
    if (gap.size() == nodes()) names.push_back("gap");
    w.header(names);
    for (Index i = 0; i < nodes(); ++i) {
      std::vector<double> row = {static_cast<double>(times[i])};
      for (Index j = 0; j < x.cols(); ++j) row.push_back(static_cast<double>(x(i, j)));
      for (Index j = 0; j < xi.cols(); ++j) row.push_back(static_cast<double>(xi(i, j)));
      row.push_back(static_cast<double>(xi0));
      if (H.size() == nodes()) row.push_back(static_cast<double>(H[i]));
      if (gap.size() == nodes()) row.push_back(static_cast<double>(gap[i]));
      w.row(row);
    }
    return w.str();
  }
};

/// The Pontryagin Hamiltonian H(x, xi, u) = <f(x,u), xi> + xi0 L(x,u).
template <typename Scalar>
Scalar hamiltonian(const ControlProblemT<Scalar>& pb, const VecX<Scalar>& x,
                   const VecX<Scalar>& xi, Scalar xi0, const VecX<Scalar>& u) {
  return pb.f(x, u).dot(xi) + xi0 * pb.cost(x, u);
}

template <typename Scalar>
struct HamiltonianMaxT {
  VecX<Scalar> u_star;
  Scalar H_star = 0;
  Scalar gap = 0;  // H_star minus the runner-up (finite/box); +inf analytic
  bool degenerate = false;
};

/// Maximises H over the control set. Ties are broken toward the smallest
/// index (finite set) or the lexicographically smallest grid point (box).
template <typename Scalar>
HamiltonianMaxT<Scalar> maximize_hamiltonian(const ControlProblemT<Scalar>& pb,
                                             const VecX<Scalar>& x, const VecX<Scalar>& xi,
                                             Scalar xi0) {
  HamiltonianMaxT<Scalar> out;
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  switch (pb.U.kind) {
    case ControlSetT<Scalar>::Kind::Finite: {
      if (pb.U.points.empty()) throw DimensionError("maximize_hamiltonian: empty control set");
      Scalar best = -inf, second = -inf;
      for (const auto& v : pb.U.points) {
        const Scalar Hv = hamiltonian(pb, x, xi, xi0, v);
        if (Hv > best) {
          second = best;
          best = Hv;
          out.u_star = v;
        } else {
          second = std::max(second, Hv);
        }
      }
      out.H_star = best;
      out.gap = (second == -inf) ? inf : best - second;
      out.degenerate = out.gap <= Defaults<Scalar>::tol_tie;
      return out;
    }
    case ControlSetT<Scalar>::Kind::Box: {
      std::vector<Index> idx(static_cast<size_t>(pb.U.r), 0);
      Scalar best = -inf, second = -inf;
      bool done = false;
      while (!done) {
        VecX<Scalar> v(pb.U.r);
        for (Index d = 0; d < pb.U.r; ++d) {
          const int res = pb.U.grid[static_cast<size_t>(d)];
          const Scalar w = res > 1 ? Scalar(idx[static_cast<size_t>(d)]) / Scalar(res - 1)
                                   : Scalar(0.5);
          v[d] = pb.U.box.lo[d] + w * (pb.U.box.hi[d] - pb.U.box.lo[d]);
        }
        const Scalar Hv = hamiltonian(pb, x, xi, xi0, v);
        if (Hv > best) {
          second = best;
          best = Hv;
          out.u_star = v;
        } else {
          second = std::max(second, Hv);
        }
        // lexicographic advance
        done = true;
        for (Index d = pb.U.r - 1; d >= 0; --d) {
          if (++idx[static_cast<size_t>(d)] < static_cast<Index>(pb.U.grid[static_cast<size_t>(d)])) {
            done = false;
            break;
          }
          idx[static_cast<size_t>(d)] = 0;
          if (d == 0) break;
        }
      }
      out.H_star = best;
      out.gap = (second == -inf) ? inf : best - second;
      out.degenerate = out.gap <= Defaults<Scalar>::tol_tie;
      return out;
    }
    case ControlSetT<Scalar>::Kind::Analytic: {
      out.u_star = pb.U.argmax_hook(x, xi, xi0);
      out.H_star = hamiltonian(pb, x, xi, xi0, out.u_star);
      out.gap = inf;
      return out;
    }
  }
  throw NumericalError("maximize_hamiltonian: unknown control set kind");
}

namespace detail {

/// Right-hand side of the costate equation paired with the base flow:
///   xidot_k = -rho^a_k (df^i/dx^a xi_i + dL/dx^a xi0) + c^i_{jk} f^j xi_i.
template <typename Scalar>
VecX<Scalar> costate_rhs(const ControlProblemT<Scalar>& pb, const VecX<Scalar>& x,
                         const VecX<Scalar>& xi, Scalar xi0, const VecX<Scalar>& u) {
  const MatX<Scalar> rho = pb.alg.anchor(x);
  const auto c = pb.alg.bracket(x);
  const VecX<Scalar> fv = pb.f(x, u);
  MatX<Scalar> M = MatX<Scalar>::Zero(pb.alg.m, pb.alg.m);
  for (Index i = 0; i < pb.alg.m; ++i) M += xi[i] * c[static_cast<size_t>(i)];
  VecX<Scalar> xidot = M.transpose() * fv;
  xidot.noalias() -= rho.transpose() * (pb.f_jac(x, u).transpose() * xi +
                                        xi0 * pb.cost_grad(x, u));
  return xidot;
}

}  // namespace detail

/// Transports a covector along a controlled trajectory (the dual parallel
/// transport B*). The abnormal slot xi0 is held exactly constant. Set
/// `forward = false` to transport from t1 backwards; samples are always
/// returned on the base grid in forward time order.
template <typename Scalar>
CostateTrajectoryT<Scalar> costate_transport(const ControlProblemT<Scalar>& pb,
                                             const PiecewiseControlT<Scalar>& u,
                                             const SampledPathT<Scalar>& base_path,
                                             const VecX<Scalar>& xi_init, Scalar xi0,
                                             bool forward = true) {
  const Index n = pb.alg.n, m = pb.alg.m;
  if (xi_init.size() != m) throw DimensionError("costate_transport: covector dimension mismatch");
  CostateTrajectoryT<Scalar> traj;
  const Index N = base_path.nodes();
  traj.times = base_path.times;
  traj.x.resize(N, n);
  traj.xi.resize(N, m);
  traj.xi0 = xi0;
  traj.seg_begin = base_path.seg_begin;

  auto spans = detail::segment_spans(base_path);

  VecX<Scalar> state(n + m);
  if (forward) {
    state.head(n) = base_path.x_at(0);
    state.tail(m) = xi_init;
    traj.x.row(0) = state.head(n).transpose();
    traj.xi.row(0) = xi_init.transpose();
  } else {
    state.head(n) = base_path.x_at(N - 1);
    state.tail(m) = xi_init;
    traj.x.row(N - 1) = state.head(n).transpose();
    traj.xi.row(N - 1) = xi_init.transpose();
  }

  auto step_range = [&](const detail::SegmentSpan<Scalar>& span) {
    const Scalar tmid =
        Scalar(0.5) * (base_path.times[span.begin] + base_path.times[span.end]);
    const VecX<Scalar> uk = u.value_at(tmid);
    auto rhs = [&](Scalar, const VecX<Scalar>& z) {
      const VecX<Scalar> x = z.head(n);
      const VecX<Scalar> xi = z.tail(m);
      VecX<Scalar> dz(n + m);
      dz.head(n) = pb.alg.anchor(x) * pb.f(x, uk);
      dz.tail(m) = detail::costate_rhs(pb, x, xi, xi0, uk);
      return dz;
    };
    if (forward) {
      for (Index i = span.begin; i < span.end; ++i) {
        const Scalar h = base_path.times[i + 1] - base_path.times[i];
        state = detail::rk4_step(rhs, base_path.times[i], state, h);
        traj.x.row(i + 1) = state.head(n).transpose();
        traj.xi.row(i + 1) = state.tail(m).transpose();
      }
    } else {
      for (Index i = span.end; i > span.begin; --i) {
        const Scalar h = base_path.times[i - 1] - base_path.times[i];
        state = detail::rk4_step(rhs, base_path.times[i], state, h);
        traj.x.row(i - 1) = state.head(n).transpose();
        traj.xi.row(i - 1) = state.tail(m).transpose();
      }
    }
  };

  if (forward) {
    for (const auto& span : spans) step_range(span);
  } else {
    for (auto it = spans.rbegin(); it != spans.rend(); ++it) step_range(*it);
  }

  traj.H.resize(N);
  for (Index i = 0; i < N; ++i) {
    const Scalar t = traj.times[i];
    traj.H[i] = hamiltonian(pb, traj.x_at(i), traj.xi_at(i), xi0, u.value_at(t));
  }
  return traj;
}

/// Max drift of the extended pairing <B b0, B* xi0_vec> along the trajectory;
/// the extended transports include the cost slot.
template <typename Scalar>
Scalar pairing_drift(const ControlProblemT<Scalar>& pb, const PiecewiseControlT<Scalar>& u,
                     const SampledPathT<Scalar>& base_path, const VecX<Scalar>& b_init,
                     const VecX<Scalar>& xi_init, Scalar xi0) {
  const Index m = pb.alg.m;
  if (b_init.size() != m + 1 || xi_init.size() != m)
    throw DimensionError("pairing_drift: expected extended fibre vector and E* covector");

  const ControlProblemT<Scalar> ext = extend_system(pb);
  SampledPathT<Scalar> ext_path;
  {
    if (!base_path.has_cost()) throw DimensionError("pairing_drift: path lacks cost samples");
    const Index N = base_path.nodes();
    ext_path.times = base_path.times;
    ext_path.x.resize(N, pb.alg.n + 1);
    ext_path.x.leftCols(pb.alg.n) = base_path.x;
    ext_path.x.col(pb.alg.n) = base_path.cost;
    ext_path.seg_begin = base_path.seg_begin;
  }

  const MatX<Scalar> b = parallel_transport(ext, u, ext_path, b_init);
  VecX<Scalar> xi_ext(m + 1);
  xi_ext.head(m) = xi_init;
  xi_ext[m] = xi0;
  const CostateTrajectoryT<Scalar> xi = costate_transport(ext, u, ext_path, xi_ext, Scalar(0));

  const Scalar p0 = b_init.dot(xi_ext);
  Scalar drift = 0;
  for (Index i = 0; i < base_path.nodes(); ++i) {
    const Scalar p = b.row(i).dot(xi.xi.row(i));
    drift = std::max(drift, std::abs(p - p0));
  }
  return drift;
}

template <typename Scalar>
struct PmpReportT {
  Scalar max_condition_violation = 0;  // sup_U H - H(u(t)), worst interior node
  Scalar h_zero_violation = 0;         // max |H(u(t))|
  Scalar adjoint_residual = 0;         // centered-difference defect of the costate ODE
  Scalar min_covector_norm = 0;
  bool nonvanishing_ok = false;
};

/// Residuals of the maximum-principle conditions along a costate trajectory.
/// Nodes within one grid cell of a control discontinuity are excluded.
template <typename Scalar>
PmpReportT<Scalar> pmp_residual_report(const ControlProblemT<Scalar>& pb,
                                       const PiecewiseControlT<Scalar>& u,
                                       const CostateTrajectoryT<Scalar>& traj,
                                       Scalar nonvanish_tol = Scalar(1e-9)) {
  PmpReportT<Scalar> rep;
  const Index N = traj.nodes();
  rep.min_covector_norm = std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < N; ++i) {
    VecX<Scalar> full(traj.xi.cols() + 1);
    full.head(traj.xi.cols()) = traj.xi_at(i);
    full[traj.xi.cols()] = traj.xi0;
    rep.min_covector_norm = std::min(rep.min_covector_norm, full.norm());
  }
  rep.nonvanishing_ok = rep.min_covector_norm > nonvanish_tol;

  for (Index i = 1; i + 1 < N; ++i) {
    if (traj.near_segment_boundary(i)) continue;
    const VecX<Scalar> x = traj.x_at(i);
    const VecX<Scalar> xi = traj.xi_at(i);
    const VecX<Scalar> ut = (traj.u_samples.rows() == N)
                                ? traj.u_samples.row(i).transpose().eval()
                                : u.value_at(traj.times[i]);
    const Scalar Hu = hamiltonian(pb, x, xi, traj.xi0, ut);
    const auto mx = maximize_hamiltonian(pb, x, xi, traj.xi0);
    rep.max_condition_violation = std::max(rep.max_condition_violation, mx.H_star - Hu);
    rep.h_zero_violation = std::max(rep.h_zero_violation, std::abs(Hu));

    const Scalar dt = traj.times[i + 1] - traj.times[i - 1];
    const VecX<Scalar> xidot_fd = (traj.xi.row(i + 1) - traj.xi.row(i - 1)).transpose() / dt;
    const VecX<Scalar> xidot = detail::costate_rhs(pb, x, xi, traj.xi0, ut);
    rep.adjoint_residual =
        std::max(rep.adjoint_residual, (xidot_fd - xidot).template lpNorm<Eigen::Infinity>());
  }
  return rep;
}

enum class HorizonMode { Fixed, Free };

template <typename Scalar>
struct ExtremalResultT {
  PiecewiseControlT<Scalar> u;
  CostateTrajectoryT<Scalar> traj;
  std::vector<Scalar> switch_times;
};

/// Closed-loop synthesis of the maximum-principle conditions: integrates
///   xdot = rho(f(x, u*)),  xidot per the costate equation,
/// with u*(t) = argmax_U H(x(t), xi(t), .). For finite or box control sets,
/// switches are located by bisecting the argmax-gap sign change to
/// tol_switch and inserted as grid nodes. For an analytic argmax hook the
/// loop is closed continuously at every Runge-Kutta stage.
///
/// In free-horizon mode xi_guess is rescaled (positively) so that H = 0 at
/// t0; with an abnormal multiplier this requires H(t0) = 0 already.
template <typename Scalar>
ExtremalResultT<Scalar> solve_extremal(const ControlProblemT<Scalar>& pb,
                                       const VecX<Scalar>& x0, const VecX<Scalar>& xi_guess,
                                       Scalar xi0, HorizonMode mode, Scalar t0, Scalar t1,
                                       int steps = 2000, int max_switches = 64) {
  const Index n = pb.alg.n, m = pb.alg.m;
  if (xi0 != Scalar(0) && xi0 != Scalar(-1))
    throw DimensionError("solve_extremal: xi0 must be 0 or -1");
  VecX<Scalar> xi_start = xi_guess;

  if (mode == HorizonMode::Free) {
    auto h_of = [&](Scalar lam) {
      return maximize_hamiltonian(pb, x0, (lam * xi_guess).eval(), xi0).H_star;
    };
    if (xi0 == Scalar(0)) {
      if (std::abs(h_of(Scalar(1))) > Scalar(1e-9))
        throw NumericalError("solve_extremal: cannot rescale an abnormal guess to H = 0");
    } else {
      Scalar lo = 0, hi = 1;
      if (h_of(lo) >= 0) throw NumericalError("solve_extremal: H(0) >= 0, cost must be positive");
      int grow = 0;
      while (h_of(hi) < 0 && grow++ < 80) hi *= 2;
      if (h_of(hi) < 0)
        throw NumericalError("solve_extremal: cannot reach H = 0 by rescaling the costate");
      for (int it = 0; it < 200; ++it) {
        const Scalar mid = Scalar(0.5) * (lo + hi);
        (h_of(mid) < 0 ? lo : hi) = mid;
      }
      xi_start = Scalar(0.5) * (lo + hi) * xi_guess;
    }
  }

  const bool closed_loop = pb.U.kind == ControlSetT<Scalar>::Kind::Analytic;
  const Scalar h = (t1 - t0) / Scalar(steps);
  const Scalar tol_switch = Defaults<Scalar>::tol_switch;

  std::vector<Scalar> times;
  std::vector<VecX<Scalar>> xs, xis, us;
  std::vector<Scalar> Hs, gaps;
  std::vector<Index> seg_nodes = {0};
  std::vector<Scalar> switch_times;

  auto rhs_fixed_u = [&](const VecX<Scalar>& uk) {
    return [&pb, uk, n, m, xi0](Scalar, const VecX<Scalar>& z) {
      const VecX<Scalar> x = z.head(n);
      const VecX<Scalar> xi = z.tail(m);
      VecX<Scalar> dz(n + m);
      dz.head(n) = pb.alg.anchor(x) * pb.f(x, uk);
      dz.tail(m) = detail::costate_rhs(pb, x, xi, xi0, uk);
      return dz;
    };
  };
  auto rhs_closed = [&](Scalar, const VecX<Scalar>& z) {
    const VecX<Scalar> x = z.head(n);
    const VecX<Scalar> xi = z.tail(m);
    const VecX<Scalar> uk = pb.U.argmax_hook(x, xi, xi0);
    VecX<Scalar> dz(n + m);
    dz.head(n) = pb.alg.anchor(x) * pb.f(x, uk);
    dz.tail(m) = detail::costate_rhs(pb, x, xi, xi0, uk);
    return dz;
  };

  VecX<Scalar> z(n + m);
  z.head(n) = x0;
  z.tail(m) = xi_start;

  auto record = [&](Scalar t, const VecX<Scalar>& zz) {
    const VecX<Scalar> x = zz.head(n);
    const VecX<Scalar> xi = zz.tail(m);
    const auto mx = maximize_hamiltonian(pb, x, xi, xi0);
    times.push_back(t);
    xs.push_back(x);
    xis.push_back(xi);
    us.push_back(mx.u_star);
    Hs.push_back(mx.H_star);
    gaps.push_back(mx.gap);
    return mx;
  };

  auto mx0 = record(t0, z);
  VecX<Scalar> u_cur = mx0.u_star;
  int degenerate_run = mx0.degenerate ? 1 : 0;

  Scalar t = t0;
  const Scalar t_end = t1;

  if (closed_loop) {
    // drift-free uniform grid: exactly `steps` intervals
    for (int i = 0; i < steps; ++i) {
      const Scalar t_next = (i + 1 == steps) ? t_end : t0 + (t_end - t0) * Scalar(i + 1) / steps;
      z = detail::rk4_step(rhs_closed, t, z, t_next - t);
      t = t_next;
      record(t, z);
    }
  }

  while (!closed_loop && t < t_end - tol_switch) {
    const Scalar step = std::min(h, t_end - t);
    const VecX<Scalar> z_prev = z;
    auto rhs = rhs_fixed_u(u_cur);
    VecX<Scalar> z_next = detail::rk4_step(rhs, t, z_prev, step);
    auto mx = maximize_hamiltonian(pb, z_next.head(n).eval(), z_next.tail(m).eval(), xi0);

    const bool switched = (mx.u_star - u_cur).template lpNorm<Eigen::Infinity>() > 0;
    if (!switched) {
      z = z_next;
      t += step;
      record(t, z);
      degenerate_run = mx.degenerate ? degenerate_run + 1 : 0;
      if (degenerate_run > 8)
        throw NumericalError("solve_extremal: degenerate argmax over an interval (singular arc)");
      continue;
    }

    // locate the tie H(u_cur) = H(u_new) inside (t, t + step) by bisection
    const VecX<Scalar> u_new = mx.u_star;
    auto psi = [&](Scalar d) {
      const VecX<Scalar> zc =
          d > 0 ? detail::rk4_step(rhs, t, z_prev, d).eval() : z_prev;
      return hamiltonian(pb, zc.head(n).eval(), zc.tail(m).eval(), xi0, u_cur) -
             hamiltonian(pb, zc.head(n).eval(), zc.tail(m).eval(), xi0, u_new);
    };
    Scalar lo = 0, hi = step;
    if (psi(lo) <= 0) {
      hi = tol_switch;  // tie sits at the node itself
    } else {
      while (hi - lo > tol_switch) {
        const Scalar mid = Scalar(0.5) * (lo + hi);
        (psi(mid) > 0 ? lo : hi) = mid;
      }
    }
    const Scalar t_sw = t + hi;
    if (!switch_times.empty() && t_sw - switch_times.back() < 10 * tol_switch)
      throw NumericalError("solve_extremal: chattering (switch spacing below resolution)");
    if (t_sw >= t_end - 10 * tol_switch) {
      // tie essentially at the horizon end; finish with the current control
      z = detail::rk4_step(rhs, t, z_prev, t_end - t);
      t = t_end;
      record(t, z);
      break;
    }

    z = detail::rk4_step(rhs, t, z_prev, hi);
    t = t_sw;
    record(t, z);
    seg_nodes.push_back(static_cast<Index>(times.size()) - 1);
    switch_times.push_back(t_sw);
    if (static_cast<int>(switch_times.size()) > max_switches)
      throw NumericalError("solve_extremal: too many switches (chattering?)");
    u_cur = u_new;
  }

  ExtremalResultT<Scalar> out;
  const Index N = static_cast<Index>(times.size());
  out.traj.times.resize(N);
  out.traj.x.resize(N, n);
  out.traj.xi.resize(N, m);
  out.traj.H.resize(N);
  out.traj.gap.resize(N);
  out.traj.u_samples.resize(N, pb.U.r);
  out.traj.xi0 = xi0;
  for (Index i = 0; i < N; ++i) {
    out.traj.times[i] = times[static_cast<size_t>(i)];
    out.traj.x.row(i) = xs[static_cast<size_t>(i)].transpose();
    out.traj.xi.row(i) = xis[static_cast<size_t>(i)].transpose();
    out.traj.H[i] = Hs[static_cast<size_t>(i)];
    out.traj.gap[i] = gaps[static_cast<size_t>(i)];
    out.traj.u_samples.row(i) = us[static_cast<size_t>(i)].transpose();
  }
  out.traj.seg_begin = seg_nodes;
  out.switch_times = switch_times;

  if (closed_loop) {
    // nodal control; each step carries the value computed at its right node
    out.u.breakpoints.assign(times.begin(), times.end());
    out.u.values.assign(us.begin() + 1, us.end());
  } else {
    out.u.breakpoints = {t0};
    for (Scalar s : switch_times) out.u.breakpoints.push_back(s);
    out.u.breakpoints.push_back(t_end);
    for (size_t k = 0; k + 1 < out.u.breakpoints.size(); ++k) {
      const Scalar tm = Scalar(0.5) * (out.u.breakpoints[k] + out.u.breakpoints[k + 1]);
      Index node = 0;
      for (Index i = 0; i < N; ++i)
        if (out.traj.times[i] <= tm) node = i;
      out.u.values.push_back(us[static_cast<size_t>(node)]);
    }
  }
  out.u.validate();
  return out;
}

template <typename Scalar>
struct TransversalityReportT {
  Scalar s0_max = 0;
  Scalar s1_max = 0;
};

/// Annihilation of the boundary subspaces: max |<v, xi(t0)>| over the S0
/// basis and |<w, xi(t1)>| over the S1 basis. Vectors of size m pair with
/// xi; vectors of size m+1 additionally pair the cost slot with xi0.
template <typename Scalar>
TransversalityReportT<Scalar> transversality_check(const ControlProblemT<Scalar>& pb,
                                                   const CostateTrajectoryT<Scalar>& traj,
                                                   const std::vector<VecX<Scalar>>& S0,
                                                   const std::vector<VecX<Scalar>>& S1) {
  const Index m = pb.alg.m;
  auto pair_at = [&](const VecX<Scalar>& v, Index node) {
    const VecX<Scalar> xi = traj.xi_at(node);
    if (v.size() == m) return std::abs(v.dot(xi));
    if (v.size() == m + 1) return std::abs(v.head(m).dot(xi) + v[m] * traj.xi0);
    throw DimensionError("transversality_check: basis vector has wrong size");
  };
  TransversalityReportT<Scalar> rep;
  for (const auto& v : S0) rep.s0_max = std::max(rep.s0_max, pair_at(v, 0));
  for (const auto& w : S1) rep.s1_max = std::max(rep.s1_max, pair_at(w, traj.nodes() - 1));
  return rep;
}

/// Clock augmentation of a non-autonomous problem: base gains a coordinate z
/// with zdot = 1, so f~(x, z, u) = (f(x, z, u), 1) on alg x TR.
template <typename Scalar>
ControlProblemT<Scalar> time_augment(
    const LocalAlgebroidT<Scalar>& alg,
    std::function<VecX<Scalar>(const VecX<Scalar>&, Scalar, const VecX<Scalar>&)> f,
    std::function<Scalar(const VecX<Scalar>&, Scalar, const VecX<Scalar>&)> L,
    ControlSetT<Scalar> U, Scalar fd = Defaults<Scalar>::fd_step) {
  const Index n = alg.n, m = alg.m;
  ControlProblemT<Scalar> pb;
  pb.alg = product_algebroid(alg, tangent_algebroid<Scalar>(1));
  pb.U = std::move(U);
  pb.fd_step = fd;
  pb.f = [f, n, m](const VecX<Scalar>& xz, const VecX<Scalar>& u) {
    VecX<Scalar> out(m + 1);
    out.head(m) = f(xz.head(n).eval(), xz[n], u);
    out[m] = Scalar(1);
    return out;
  };
  pb.cost = [L, n](const VecX<Scalar>& xz, const VecX<Scalar>& u) {
    return L(xz.head(n).eval(), xz[n], u);
  };
  return pb;
}

/// Max grid residual of the generalised Euler-Lagrange equations
///   xdot^a = rho^a_k y^k,
///   d/dt (dL/dy_j) = c^k_{ij} y^i dL/dy_k + rho^a_j dL/dx^a,
/// on a path carrying fibre samples y(t) = a(t).
template <typename Scalar>
Scalar euler_lagrange_residual(
    const LocalAlgebroidT<Scalar>& alg,
    const std::function<VecX<Scalar>(const VecX<Scalar>&, const VecX<Scalar>&)>& dL_dx,
    const std::function<VecX<Scalar>(const VecX<Scalar>&, const VecX<Scalar>&)>& dL_dy,
    const SampledPathT<Scalar>& path) {
  if (!path.has_fiber()) throw DimensionError("euler_lagrange_residual: no fibre samples");
  const Index N = path.nodes();
  Scalar worst = 0;
  for (Index i = 1; i + 1 < N; ++i) {
    if (path.near_segment_boundary(i)) continue;
    const Scalar dt = path.times[i + 1] - path.times[i - 1];
    const VecX<Scalar> x = path.x_at(i);
    const VecX<Scalar> y = path.a_at(i);
    const MatX<Scalar> rho = alg.anchor(x);
    const auto c = alg.bracket(x);

    if (alg.n > 0) {
      const VecX<Scalar> xdot = (path.x.row(i + 1) - path.x.row(i - 1)).transpose() / dt;
      worst = std::max(worst,
                       (xdot - rho * y).template lpNorm<Eigen::Infinity>());
    }

    const VecX<Scalar> p_prev = dL_dy(path.x_at(i - 1), path.a_at(i - 1));
    const VecX<Scalar> p_next = dL_dy(path.x_at(i + 1), path.a_at(i + 1));
    const VecX<Scalar> pdot = (p_next - p_prev) / dt;
    const VecX<Scalar> p = dL_dy(x, y);
    MatX<Scalar> M = MatX<Scalar>::Zero(alg.m, alg.m);
    for (Index k = 0; k < alg.m; ++k) M += p[k] * c[static_cast<size_t>(k)];
    VecX<Scalar> rhs = M.transpose() * y;
    if (alg.n > 0) rhs += rho.transpose() * dL_dx(x, y);
    worst = std::max(worst, (pdot - rhs).template lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/// Residual of the algebroid-morphism conditions for a bundle map
/// Phi : E_src -> E_dst over phi, evaluated at sample points:
///   (1)  rho_dst(phi) Phi - Dphi rho_src = 0,
///   (2)  rho_src^al_lam d_al Phi^i_kap - rho_src^al_kap d_al Phi^i_lam
///        + Phi^i_m c_src^m_{kap lam} - c_dst^i_{jk}(phi) Phi^j_kap Phi^k_lam = 0.
/// (Derived from compatibility with the exterior differentials; reduces to
/// the admissibility and homotopy equations for source TR and TR x TR, and
/// to the almost-Lie identity for Phi = rho into the tangent algebroid.)
template <typename Scalar>
Scalar morphism_residual(
    const LocalAlgebroidT<Scalar>& src, const LocalAlgebroidT<Scalar>& dst,
    const std::function<MatX<Scalar>(const VecX<Scalar>&)>& Phi,
    const std::function<VecX<Scalar>(const VecX<Scalar>&)>& phi,
    const std::vector<VecX<Scalar>>& samples,
    std::function<MatX<Scalar>(const VecX<Scalar>&, Index)> dPhi = {},
    std::function<MatX<Scalar>(const VecX<Scalar>&)> dphi = {},
    Scalar fd = Defaults<Scalar>::fd_step) {
  auto Phi_deriv = [&](const VecX<Scalar>& x, Index b) {
    if (dPhi) return dPhi(x, b);
    VecX<Scalar> xp = x, xm = x;
    xp[b] += fd;
    xm[b] -= fd;
    return ((Phi(xp) - Phi(xm)) / (2 * fd)).eval();
  };
  auto phi_jac = [&](const VecX<Scalar>& x) {
    if (dphi) return dphi(x);
    MatX<Scalar> J(dst.n, src.n);
    for (Index b = 0; b < src.n; ++b) {
      VecX<Scalar> xp = x, xm = x;
      xp[b] += fd;
      xm[b] -= fd;
      J.col(b) = (phi(xp) - phi(xm)) / (2 * fd);
    }
    return J;
  };

  Scalar worst = 0;
  for (const auto& xs : samples) {
    const VecX<Scalar> xd = phi(xs);
    const MatX<Scalar> P = Phi(xs);  // m_dst x m_src
    if (P.rows() != dst.m || P.cols() != src.m)
      throw DimensionError("morphism_residual: Phi has wrong shape");
    const MatX<Scalar> rho_s = src.anchor(xs);
    const MatX<Scalar> rho_d = dst.anchor(xd);
    const auto c_s = src.bracket(xs);
    const auto c_d = dst.bracket(xd);

    const MatX<Scalar> cond1 = rho_d * P - phi_jac(xs) * rho_s;
    if (cond1.size() > 0)
      worst = std::max(worst, cond1.template lpNorm<Eigen::Infinity>());

    std::vector<MatX<Scalar>> dP(static_cast<size_t>(src.n));
    for (Index b = 0; b < src.n; ++b) dP[static_cast<size_t>(b)] = Phi_deriv(xs, b);

    for (Index i = 0; i < dst.m; ++i)
      for (Index kap = 0; kap < src.m; ++kap)
        for (Index lam = kap + 1; lam < src.m; ++lam) {
          Scalar v = 0;
          for (Index al = 0; al < src.n; ++al)
            v += rho_s(al, lam) * dP[static_cast<size_t>(al)](i, kap) -
                 rho_s(al, kap) * dP[static_cast<size_t>(al)](i, lam);
          for (Index mm = 0; mm < src.m; ++mm)
            v += P(i, mm) * c_s[static_cast<size_t>(mm)](kap, lam);
          v -= P.col(kap).dot(c_d[static_cast<size_t>(i)] * P.col(lam));
          worst = std::max(worst, std::abs(v));
        }
  }
  return worst;
}

using ControlSet = ControlSetT<double>;
using ControlProblem = ControlProblemT<double>;
using CostateTrajectory = CostateTrajectoryT<double>;
using HamiltonianMax = HamiltonianMaxT<double>;
using PmpReport = PmpReportT<double>;
using ExtremalResult = ExtremalResultT<double>;
using TransversalityReport = TransversalityReportT<double>;

}  // namespace algc
