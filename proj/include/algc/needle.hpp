#pragma once

#include "algc/control.hpp"
#include "algc/linprog.hpp"

#include <cmath>
#include <string>

namespace algc {

/// Needle-variation symbol: entries (tau_i, v_i, dt_i >= 0) at nondecreasing
/// times t0 < tau_1 <= ... <= tau_k <= tau < t1, an anchor time tau, and a
/// horizon stretch dt (any sign).
template <typename Scalar>
struct NeedleSymbolT {
  struct Entry {
    Scalar tau;
    VecX<Scalar> v;
    Scalar dt;
  };
  std::vector<Entry> entries;
  Scalar tau = 0;
  Scalar dt = 0;

  void validate(Scalar t0, Scalar t1) const {
    Scalar prev = t0;
    for (const auto& e : entries) {
      if (!(e.tau >= prev) || !(e.tau > t0))
        throw DimensionError("needle symbol: entry times must be nondecreasing inside (t0, tau]");
      if (e.dt < 0) throw DimensionError("needle symbol: dt_i must be nonnegative");
      prev = e.tau;
    }
    if (!entries.empty() && entries.back().tau > tau)
      throw DimensionError("needle symbol: entries must not pass the anchor time");
    if (!(tau > t0) || !(tau < t1))
      throw DimensionError("needle symbol: anchor time must lie inside (t0, t1)");
  }

  /// Offsets l_i placing the perturbation intervals
  /// I_i = (tau_i + s l_i, tau_i + s (l_i + dt_i)] so that equal-time runs
  /// are contiguous, runs ending before tau end at tau_i, and a run at tau
  /// ends at tau + s dt.
  std::vector<Scalar> offsets() const {
    const Index k = static_cast<Index>(entries.size());
    std::vector<Scalar> l(static_cast<size_t>(k), Scalar(0));
    for (Index i = 0; i < k; ++i) {
      Index run_end = i;
      while (run_end + 1 < k &&
             entries[static_cast<size_t>(run_end + 1)].tau == entries[static_cast<size_t>(i)].tau)
        ++run_end;
      Scalar sum = 0;
      for (Index p = i; p <= run_end; ++p) sum += entries[static_cast<size_t>(p)].dt;
      l[static_cast<size_t>(i)] = -sum;
      if (entries[static_cast<size_t>(i)].tau == tau) l[static_cast<size_t>(i)] += dt;
    }
    return l;
  }
};

/// The needle variation u_s of a control: substitute v_i on the interval
/// I_i of length s dt_i, keep u on the rest of [t0, tau + s dt], and play
/// u(t - s dt) afterwards, extending the horizon to t1 + s dt.
template <typename Scalar>
PiecewiseControlT<Scalar> needle_control(const PiecewiseControlT<Scalar>& u,
                                         const NeedleSymbolT<Scalar>& sym, Scalar s) {
  u.validate();
  const Scalar t0 = u.t0(), t1 = u.t1();
  sym.validate(t0, t1);
  if (s < 0) throw DimensionError("needle_control: s must be nonnegative");

  const Scalar shifted_tau = sym.tau + s * sym.dt;
  if (shifted_tau <= t0 || shifted_tau > t1)
    throw NumericalError("needle_control: s too large (stretched anchor escapes the horizon)");

  const auto l = sym.offsets();
  struct Interval {
    Scalar lo, hi;
    VecX<Scalar> v;
  };
  std::vector<Interval> iv;
  for (size_t i = 0; i < sym.entries.size(); ++i) {
    const auto& e = sym.entries[i];
    if (e.dt == 0) continue;  // empty interval, does not change the variation
    Interval I{e.tau + s * l[i], e.tau + s * (l[i] + e.dt), e.v};
    if (I.lo < t0)
      throw NumericalError("needle_control: s too large (interval escapes the domain)");
    iv.push_back(std::move(I));
  }
  std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  for (size_t i = 0; i + 1 < iv.size(); ++i)
    if (iv[i].hi > iv[i + 1].lo + Scalar(1e-15))
      throw NumericalError("needle_control: s too large (intervals overlap)");

  // assemble breakpoints
  std::vector<Scalar> cuts = {t0};
  for (const auto& I : iv) {
    cuts.push_back(I.lo);
    cuts.push_back(I.hi);
  }
  cuts.push_back(shifted_tau);
  for (size_t k = 1; k + 1 < u.breakpoints.size(); ++k) {
    const Scalar bk = u.breakpoints[k];
    if (bk <= sym.tau)
      cuts.push_back(bk);
    else
      cuts.push_back(bk + s * sym.dt);
  }
  cuts.push_back(t1 + s * sym.dt);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(),
                         [](Scalar a, Scalar b) { return std::abs(a - b) < Scalar(1e-14); }),
             cuts.end());
  while (cuts.size() > 1 && cuts.front() < t0 - Scalar(1e-14)) cuts.erase(cuts.begin());

  PiecewiseControlT<Scalar> out;
  out.breakpoints = cuts;
  for (size_t k = 0; k + 1 < cuts.size(); ++k) {
    const Scalar tm = Scalar(0.5) * (cuts[k] + cuts[k + 1]);
    const VecX<Scalar>* val = nullptr;
    for (const auto& I : iv)
      if (tm > I.lo && tm <= I.hi) val = &I.v;
    if (val) {
      out.values.push_back(*val);
    } else if (tm <= shifted_tau) {
      out.values.push_back(u.value_at(tm));
    } else {
      out.values.push_back(u.value_at(tm - s * sym.dt));
    }
  }
  out.validate();
  return out;
}

namespace detail {

/// Extended transport matrices Phi(t_i) with Phi(t_0) = Id on the fibre of
/// E x TR along a cost-accumulating base path, plus interpolation.
template <typename Scalar>
struct ExtendedTransport {
  ControlProblemT<Scalar> ext;
  SampledPathT<Scalar> ext_path;
  std::vector<MatX<Scalar>> phi;

  static ExtendedTransport build(const ControlProblemT<Scalar>& pb,
                                 const PiecewiseControlT<Scalar>& u,
                                 const SampledPathT<Scalar>& base_path) {
    ExtendedTransport tr;
    tr.ext = extend_system(pb);
    tr.ext_path = as_extended_path(pb, base_path, u);
    tr.phi = parallel_transport_matrix(tr.ext, u, tr.ext_path);
    return tr;
  }

  MatX<Scalar> phi_at(Scalar t) const {
    const VecX<Scalar>& times = ext_path.times;
    const Index N = times.size();
    if (t <= times[0]) return phi.front();
    if (t >= times[N - 1]) return phi.back();
    Index lo = 0, hi = N - 1;
    while (hi - lo > 1) {
      const Index mid = (lo + hi) / 2;
      if (times[mid] <= t)
        lo = mid;
      else
        hi = mid;
    }
    const Scalar w = (t - times[lo]) / (times[lo + 1] - times[lo]);
    return ((Scalar(1) - w) * phi[static_cast<size_t>(lo)] +
            w * phi[static_cast<size_t>(lo + 1)])
        .eval();
  }

  /// B_{t1 t}[w] = Phi(t1) Phi(t)^{-1} w.
  VecX<Scalar> to_endpoint(Scalar t, const VecX<Scalar>& w) const {
    return phi.back() * phi_at(t).partialPivLu().solve(w);
  }

  VecX<Scalar> bold_f(const ControlProblemT<Scalar>& pb, const SampledPathT<Scalar>& base_path,
                      Scalar t, const VecX<Scalar>& u) const {
    const VecX<Scalar> x = base_path.x_interp(t);
    VecX<Scalar> out(pb.alg.m + 1);
    out.head(pb.alg.m) = pb.f(x, u);
    out[pb.alg.m] = pb.cost(x, u);
    return out;
  }
};

}  // namespace detail

/// The infinitesimal variation of the extended trajectory at s = 0:
///   d(0) = B_{t1 tau}[bold f(x(tau), u(tau))] dt
///        + sum_i B_{t1 tau_i}[bold f(x(tau_i), v_i) - bold f(x(tau_i), u(tau_i))] dt_i,
/// a vector in the extended fibre R^{m+1} at x(t1).
template <typename Scalar>
VecX<Scalar> infinitesimal_variation(const ControlProblemT<Scalar>& pb,
                                     const PiecewiseControlT<Scalar>& u,
                                     const SampledPathT<Scalar>& base_path,
                                     const NeedleSymbolT<Scalar>& sym) {
  sym.validate(u.t0(), u.t1());
  for (const auto& e : sym.entries)
    for (Scalar bk : u.breakpoints)
      if (std::abs(e.tau - bk) < Defaults<Scalar>::tol_switch && bk != u.t0())
        throw NumericalError("infinitesimal_variation: entry time sits on a control switch");

  const auto tr = detail::ExtendedTransport<Scalar>::build(pb, u, base_path);
  VecX<Scalar> d = VecX<Scalar>::Zero(pb.alg.m + 1);
  d += sym.dt * tr.to_endpoint(sym.tau,
                               tr.bold_f(pb, base_path, sym.tau, u.value_at(sym.tau)));
  for (const auto& e : sym.entries) {
    const VecX<Scalar> diff = tr.bold_f(pb, base_path, e.tau, e.v) -
                              tr.bold_f(pb, base_path, e.tau, u.value_at(e.tau));
    d += e.dt * tr.to_endpoint(e.tau, diff);
  }
  return d;
}

/// Finitely generated convex cone in the extended fibre R^{m+1}, stored by
/// its generator set with one provenance tag per generator.
template <typename Scalar>
struct VariationConeT {
  MatX<Scalar> generators;  // G x (m+1), one generator per row
  std::vector<std::string> provenance;

  Index count() const { return generators.rows(); }
  Index dim() const { return generators.cols(); }

  void add(const VecX<Scalar>& g, std::string tag) {
    generators.conservativeResize(generators.rows() + 1,
                                  generators.cols() > 0 ? generators.cols() : g.size());
    generators.row(generators.rows() - 1) = g.transpose();
    provenance.push_back(std::move(tag));
  }
};

/// Generators of the needle-variation cone at anchor time tau:
/// single-entry symbols (tau_i, v, dt_i = 1) for every probe control and
/// probe time, two-sided limits at interior control switches, and the two
/// horizon-stretch generators (dt = +-1). Multi-entry symbols add nothing:
/// their variations are the matching nonnegative combinations.
template <typename Scalar>
VariationConeT<Scalar> build_cone(const ControlProblemT<Scalar>& pb,
                                  const PiecewiseControlT<Scalar>& u,
                                  const SampledPathT<Scalar>& base_path, Scalar tau,
                                  const std::vector<VecX<Scalar>>& probe_controls,
                                  const std::vector<Scalar>& probe_times) {
  const auto tr = detail::ExtendedTransport<Scalar>::build(pb, u, base_path);
  VariationConeT<Scalar> cone;
  cone.generators.resize(0, pb.alg.m + 1);

  const VecX<Scalar> bf_tau = tr.bold_f(pb, base_path, tau, u.value_at(tau));
  cone.add(tr.to_endpoint(tau, bf_tau), "dt(+)");
  cone.add((-tr.to_endpoint(tau, bf_tau)).eval(), "dt(-)");

  auto add_probe = [&](Scalar t, const VecX<Scalar>& u_ref, const std::string& tag) {
    for (size_t pi = 0; pi < probe_controls.size(); ++pi) {
      const VecX<Scalar>& v = probe_controls[pi];
      const VecX<Scalar> diff =
          tr.bold_f(pb, base_path, t, v) - tr.bold_f(pb, base_path, t, u_ref);
      if (diff.template lpNorm<Eigen::Infinity>() < Scalar(1e-15)) continue;
      cone.add(tr.to_endpoint(t, diff), tag + "/v" + std::to_string(pi));
    }
  };

  for (Scalar t : probe_times) {
    if (!(t > u.t0() && t <= tau)) continue;
    bool on_switch = false;
    for (Scalar bk : u.breakpoints)
      if (std::abs(t - bk) < Defaults<Scalar>::tol_switch) on_switch = true;
    if (on_switch) continue;
    add_probe(t, u.value_at(t), "needle(" + format_number(static_cast<double>(t)) + ")");
  }

  // limits of needle generators from both sides of each interior switch
  for (size_t k = 1; k + 1 < u.breakpoints.size(); ++k) {
    const Scalar c = u.breakpoints[k];
    if (!(c > u.t0() && c < tau)) continue;
    const std::string tag = "switch(" + format_number(static_cast<double>(c)) + ")";
    add_probe(c, u.values[k - 1], tag + "/left");
    add_probe(c, u.values[k], tag + "/right");
  }
  return cone;
}

/// Adds the transported boundary subspace: +-each basis vector (a subspace
/// enters the convex hull as a full line set).
template <typename Scalar>
VariationConeT<Scalar> augment_cone(VariationConeT<Scalar> cone,
                                    const std::vector<VecX<Scalar>>& transported_basis) {
  for (size_t i = 0; i < transported_basis.size(); ++i) {
    cone.add(transported_basis[i], "boundary(+" + std::to_string(i) + ")");
    cone.add((-transported_basis[i]).eval(), "boundary(-" + std::to_string(i) + ")");
  }
  return cone;
}

struct SeparationResult {
  bool separable = false;
  bool degenerate = false;     // all generators vanished
  VecX<double> phi;            // certificate, |phi|_inf = 1
  double margin = 0;           // optimal normalised margin
  VecX<double> gen_margins;    // <g_i, phi> for every generator
  double ray_margin = 0;       // <ray, phi>
  std::vector<Index> violated; // generators with <g, phi> > tol
};

/// Decides whether the cone spanned by `generators` can be separated from
/// the ray R_+ ray_dir: seeks phi != 0 with <g, phi> <= 0 for every
/// generator, <ray, phi> >= 0, and <v, phi> = 0 on the extra subspace.
/// Solved as a family of margin-maximising linear programs over the unit
/// cube (one per fixed face phi_k = +-1, which realises the |phi|_inf = 1
/// normalisation); separable iff the best margin clears -feas_tol.
inline SeparationResult separate_cone_ray(const VariationConeT<double>& cone,
                                          const VecX<double>& ray_dir,
                                          const std::vector<VecX<double>>& extra_subspace = {},
                                          double feas_tol = Defaults<double>::lp_feas_tol) {
  const Index d = ray_dir.size();
  SeparationResult out;

  double gen_scale = 0;
  for (Index i = 0; i < cone.count(); ++i)
    gen_scale = std::max(gen_scale, cone.generators.row(i).norm());
  if (gen_scale == 0 && extra_subspace.empty()) {
    out.separable = true;
    out.degenerate = true;
    out.phi = ray_dir / ray_dir.template lpNorm<Eigen::Infinity>();
    out.margin = 1;
    out.gen_margins = VecX<double>::Zero(cone.count());
    out.ray_margin = ray_dir.dot(out.phi);
    return out;
  }

  // rows in variables (phi_0..phi_{d-1}, t):  a . phi + w t <= rhs
  std::vector<VecX<double>> rows;
  std::vector<double> rhs;
  auto push = [&](const VecX<double>& a, double w, double r) {
    VecX<double> row(d + 1);
    row.head(d) = a;
    row[d] = w;
    rows.push_back(row);
    rhs.push_back(r);
  };
  for (Index i = 0; i < cone.count(); ++i) {
    const VecX<double> g = cone.generators.row(i).transpose();
    const double nr = g.norm();
    if (nr > 0) push(g, nr, 0.0);
  }
  push((-ray_dir).eval(), ray_dir.norm(), 0.0);
  for (const auto& v : extra_subspace) {
    push(v, 0.0, 0.0);
    push((-v).eval(), 0.0, 0.0);
  }
  for (Index j = 0; j < d; ++j) {
    VecX<double> e = VecX<double>::Zero(d);
    e[j] = 1;
    push(e, 0.0, 1.0);
    push((-e).eval(), 0.0, 1.0);
  }
  {
    VecX<double> zero = VecX<double>::Zero(d);
    push(zero, 1.0, 1.0);   //  t <= 1
    push(zero, -1.0, 2.0);  // -t <= 2
  }

  double best_t = -std::numeric_limits<double>::infinity();
  VecX<double> best_phi;
  for (Index k = 0; k < d; ++k) {
    for (int sgn = -1; sgn <= 1; sgn += 2) {
      // substitute phi_k = sgn, solve in the remaining d variables (+ t)
      const Index nv = d;  // d-1 free phi coords + t
      MatX<double> A(static_cast<Index>(rows.size()), nv);
      VecX<double> b(static_cast<Index>(rows.size()));
      for (size_t r = 0; r < rows.size(); ++r) {
        Index col = 0;
        for (Index j = 0; j < d; ++j) {
          if (j == k) continue;
          A(static_cast<Index>(r), col++) = rows[r][j];
        }
        A(static_cast<Index>(r), nv - 1) = rows[r][d];
        b[static_cast<Index>(r)] = rhs[r] - rows[r][k] * sgn;
      }
      VecX<double> c = VecX<double>::Zero(nv);
      c[nv - 1] = 1;  // maximise the margin
      LinProgResult lp = linprog_max(A, b, c);
      if (!lp.solved) continue;
      if (lp.value > best_t) {
        best_t = lp.value;
        best_phi = VecX<double>::Zero(d);
        Index col = 0;
        for (Index j = 0; j < d; ++j) {
          if (j == k) continue;
          best_phi[j] = lp.z[col++];
        }
        best_phi[k] = sgn;
      }
    }
  }

  if (!best_phi.size()) throw NumericalError("separate_cone_ray: all subproblems failed");
  out.phi = best_phi;
  out.margin = best_t;
  out.separable = best_t >= -feas_tol;
  out.gen_margins.resize(cone.count());
  for (Index i = 0; i < cone.count(); ++i) {
    out.gen_margins[i] = cone.generators.row(i).dot(out.phi);
    if (out.gen_margins[i] > feas_tol) out.violated.push_back(i);
  }
  out.ray_margin = ray_dir.dot(out.phi);
  return out;
}

template <typename Scalar>
struct CertificateResultT {
  SeparationResult separation;
  VariationConeT<Scalar> cone;
  bool have_costate = false;
  CostateTrajectoryT<Scalar> traj;  // back-transported covector (valid if have_costate)
  PmpReportT<Scalar> report;

  std::string to_csv() const {
    CsvWriter w;
    std::vector<std::string> names = {"kind"};
    const Index d = cone.dim();
    for (Index j = 0; j < d; ++j) names.push_back("c_" + std::to_string(j + 1));
    names.push_back("margin");
    w.header(names);
    for (Index i = 0; i < cone.count(); ++i) {
      std::vector<double> row = {0.0};
      for (Index j = 0; j < d; ++j) row.push_back(cone.generators(i, j));
      row.push_back(separation.gen_margins.size() > i ? separation.gen_margins[i] : 0.0);
      w.row(row);
    }
    if (separation.phi.size() == d) {
      std::vector<double> row = {1.0};
      for (Index j = 0; j < d; ++j) row.push_back(separation.phi[j]);
      row.push_back(separation.margin);
      w.row(row);
    }
    return w.str();
  }
};

/// Runs the separation test of the maximum principle at anchor time tau
/// (default: one grid cell before t1): builds the needle cone, separates it
/// from the descent ray (0,...,0,-1), and, if a certificate phi exists,
/// transports it backwards as an extended covector and reports the
/// maximum-principle residuals of the resulting costate trajectory.
template <typename Scalar>
CertificateResultT<Scalar> pmp_certificate(const ControlProblemT<Scalar>& pb,
                                           const PiecewiseControlT<Scalar>& u,
                                           const SampledPathT<Scalar>& base_path,
                                           std::optional<Scalar> tau_opt = {},
                                           int max_probe_times = 240) {
  CertificateResultT<Scalar> out;
  const Index N = base_path.nodes();
  const Scalar tau = tau_opt.value_or(base_path.times[N - 2]);

  std::vector<Scalar> probe_times;
  const Index stride = std::max<Index>(1, (N - 2) / max_probe_times);
  for (Index i = 1; i + 1 < N; i += stride)
    if (!base_path.near_segment_boundary(i)) probe_times.push_back(base_path.times[i]);

  out.cone = build_cone(pb, u, base_path, tau, pb.U.probes(), probe_times);

  VecX<double> ray = VecX<double>::Zero(pb.alg.m + 1);
  ray[pb.alg.m] = -1;
  out.separation = separate_cone_ray(out.cone, ray);
  if (!out.separation.separable) return out;

  VecX<Scalar> phi = out.separation.phi;
  const Scalar cost_slot = phi[pb.alg.m];
  if (cost_slot < -Scalar(1e-9)) {
    phi /= -cost_slot;  // normal: xi0 = -1
  } else if (phi.head(pb.alg.m).norm() > 0) {
    phi /= phi.head(pb.alg.m).norm();  // abnormal: xi0 ~ 0
  }

  const ControlProblemT<Scalar> ext = extend_system(pb);
  const SampledPathT<Scalar> ext_path = as_extended_path(pb, base_path, u);
  const CostateTrajectoryT<Scalar> ext_traj =
      costate_transport(ext, u, ext_path, phi, Scalar(0), /*forward=*/false);

  out.traj.times = ext_traj.times;
  out.traj.x = ext_traj.x.leftCols(pb.alg.n);
  out.traj.xi = ext_traj.xi.leftCols(pb.alg.m);
  out.traj.xi0 = phi[pb.alg.m];
  out.traj.seg_begin = ext_traj.seg_begin;
  out.traj.H.resize(out.traj.nodes());
  for (Index i = 0; i < out.traj.nodes(); ++i)
    out.traj.H[i] = hamiltonian(pb, out.traj.x_at(i), out.traj.xi_at(i), out.traj.xi0,
                                u.value_at(out.traj.times[i]));
  out.have_costate = true;
  out.report = pmp_residual_report(pb, u, out.traj);
  return out;
}

using NeedleSymbol = NeedleSymbolT<double>;
using VariationCone = VariationConeT<double>;
using CertificateResult = CertificateResultT<double>;

}  // namespace algc
