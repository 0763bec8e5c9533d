#pragma once

#include "algc/types.hpp"

#include <cmath>
#include <optional>
#include <utility>

namespace algc {

/// An algebroid over a chart of R^n with an m-dimensional fibre, described by
/// its local structure functions: the anchor coefficients rho^a_i(x) and the
/// bracket coefficients c^i_{jk}(x), with [e_j, e_k] = c^i_{jk}(x) e_i and
/// rho(e_i) = rho^a_i(x) d/dx^a.
///
/// Structure functions are user callables. Spatial derivatives may be given
/// analytically; otherwise a central finite difference with step `fd_step` is
/// used. All data is immutable after construction and evaluation is pure.
template <typename Scalar>
struct LocalAlgebroidT {
  using Vec = VecX<Scalar>;
  using Mat = MatX<Scalar>;

  Index n = 0;  // base dimension
  Index m = 0;  // fibre dimension

  /// anchor(x) is the n x m matrix with entry (a, i) = rho^a_i(x).
  std::function<Mat(const Vec&)> anchor;

  /// bracket(x) returns m matrices; the i-th is m x m with entry (j, k) = c^i_{jk}(x).
  std::function<std::vector<Mat>(const Vec&)> bracket;

  /// Optional analytic derivative d rho / d x^b; same layout as anchor.
  std::function<Mat(const Vec&, Index)> danchor;

  /// Optional analytic derivative d c / d x^b; same layout as bracket.
  std::function<std::vector<Mat>(const Vec&, Index)> dbracket;

  BoxT<Scalar> domain = BoxT<Scalar>::unit_centered(0);
  Scalar fd_step = Defaults<Scalar>::fd_step;

  bool analytic_derivatives() const {
    return static_cast<bool>(danchor) && static_cast<bool>(dbracket);
  }

  Scalar axiom_tolerance() const {
    return analytic_derivatives() ? Defaults<Scalar>::tol_axiom_analytic
                                  : Defaults<Scalar>::tol_axiom_fd;
  }

  Mat anchor_deriv(const Vec& x, Index b, std::optional<Scalar> step = {}) const {
    if (danchor) return danchor(x, b);
    const Scalar h = step.value_or(fd_step);
    Vec xp = x, xm = x;
    xp[b] += h;
    xm[b] -= h;
    return ((anchor(xp) - anchor(xm)) / (Scalar(2) * h)).eval();
  }

  std::vector<Mat> bracket_deriv(const Vec& x, Index b,
                                 std::optional<Scalar> step = {}) const {
    if (dbracket) return dbracket(x, b);
    const Scalar h = step.value_or(fd_step);
    Vec xp = x, xm = x;
    xp[b] += h;
    xm[b] -= h;
    const std::vector<Mat> cp = bracket(xp);
    const std::vector<Mat> cm = bracket(xm);
    std::vector<Mat> out(static_cast<size_t>(m));
    for (Index i = 0; i < m; ++i)
      out[static_cast<size_t>(i)] =
          (cp[static_cast<size_t>(i)] - cm[static_cast<size_t>(i)]) / (Scalar(2) * h);
    return out;
  }

  std::vector<Vec> sample_points(int count = Defaults<Scalar>::axiom_samples) const {
    if (n == 0) return {Vec(0)};
    return halton_points(domain, count);
  }
};

template <typename Scalar>
struct AlgebroidElementT {
  VecX<Scalar> x;
  VecX<Scalar> y;
};

template <typename Scalar>
struct AlgebroidCovectorT {
  VecX<Scalar> x;
  VecX<Scalar> xi;
};

template <typename Scalar>
void require_element_dims(const LocalAlgebroidT<Scalar>& alg,
                          const AlgebroidElementT<Scalar>& e) {
  if (e.x.size() != alg.n || e.y.size() != alg.m)
    throw DimensionError("algebroid element dimensions do not match bundle");
}

template <typename Scalar>
void require_covector_dims(const LocalAlgebroidT<Scalar>& alg,
                           const AlgebroidCovectorT<Scalar>& p) {
  if (p.x.size() != alg.n || p.xi.size() != alg.m)
    throw DimensionError("algebroid covector dimensions do not match bundle");
}

template <typename Scalar>
struct AxiomReportT {
  Scalar max_violation = Scalar(0);
  bool pass = false;
};

/// Skew-symmetry of the bracket coefficients in the lower indices:
/// c^i_{jk} + c^i_{kj} = 0 at every sample.
template <typename Scalar>
AxiomReportT<Scalar> check_skew(const LocalAlgebroidT<Scalar>& alg,
                                const std::vector<VecX<Scalar>>& samples,
                                std::optional<Scalar> tol = {}) {
  if (samples.empty()) throw DimensionError("check_skew: empty sample list");
  Scalar worst = 0;
  for (const auto& x : samples) {
    const auto c = alg.bracket(x);
    for (Index i = 0; i < alg.m; ++i) {
      const auto& ci = c[static_cast<size_t>(i)];
      for (Index j = 0; j < alg.m; ++j)
        for (Index k = 0; k < alg.m; ++k)
          worst = std::max(worst, std::abs(ci(j, k) + ci(k, j)));
    }
  }
  const Scalar t = tol.value_or(alg.axiom_tolerance());
  return {worst, worst <= t};
}

/// Local almost-Lie identity:
/// (d rho^a_k / d x^b) rho^b_j - (d rho^a_j / d x^b) rho^b_k = rho^a_i c^i_{jk}.
template <typename Scalar>
AxiomReportT<Scalar> check_almost_lie(const LocalAlgebroidT<Scalar>& alg,
                                      const std::vector<VecX<Scalar>>& samples,
                                      std::optional<Scalar> tol = {}) {
  if (samples.empty()) throw DimensionError("check_almost_lie: empty sample list");
  Scalar worst = 0;
  for (const auto& x : samples) {
    const auto rho = alg.anchor(x);
    const auto c = alg.bracket(x);
    std::vector<MatX<Scalar>> drho(static_cast<size_t>(alg.n));
    for (Index b = 0; b < alg.n; ++b) drho[static_cast<size_t>(b)] = alg.anchor_deriv(x, b);
    for (Index a = 0; a < alg.n; ++a)
      for (Index j = 0; j < alg.m; ++j)
        for (Index k = j + 1; k < alg.m; ++k) {
          Scalar lhs = 0;
          for (Index b = 0; b < alg.n; ++b)
            lhs += drho[static_cast<size_t>(b)](a, k) * rho(b, j) -
                   drho[static_cast<size_t>(b)](a, j) * rho(b, k);
          Scalar rhs = 0;
          for (Index i = 0; i < alg.m; ++i) rhs += rho(a, i) * c[static_cast<size_t>(i)](j, k);
          worst = std::max(worst, std::abs(lhs - rhs));
        }
  }
  const Scalar t = tol.value_or(alg.axiom_tolerance());
  return {worst, worst <= t};
}

/// Jacobiator of the bracket on constant-coefficient sections. From the
/// Leibniz rule, [[e_j,e_k],e_l] = c^m_{jk} c^i_{ml} e_i - rho^b_l (d_b c^i_{jk}) e_i,
/// so the cyclic sum over (j,k,l) is
///   J^i_{jkl} = sum_cyc ( c^m_{jk} c^i_{ml} - rho^b_l d_b c^i_{jk} ).
/// For constant c and vanishing anchor this is the classical Lie-algebra
/// Jacobi sum; the anchor-derivative term makes it frame-covariant (it
/// vanishes for the tangent algebroid in any position-dependent frame).
template <typename Scalar>
AxiomReportT<Scalar> check_jacobi(const LocalAlgebroidT<Scalar>& alg,
                                  const std::vector<VecX<Scalar>>& samples,
                                  std::optional<Scalar> tol = {}) {
  if (samples.empty()) throw DimensionError("check_jacobi: empty sample list");
  Scalar worst = 0;
  for (const auto& x : samples) {
    const auto rho = alg.anchor(x);
    const auto c = alg.bracket(x);
    std::vector<std::vector<MatX<Scalar>>> dc(static_cast<size_t>(alg.n));
    for (Index b = 0; b < alg.n; ++b) dc[static_cast<size_t>(b)] = alg.bracket_deriv(x, b);

    auto term = [&](Index i, Index j, Index k, Index l) {
      Scalar v = 0;
      for (Index mm = 0; mm < alg.m; ++mm)
        v += c[static_cast<size_t>(mm)](j, k) * c[static_cast<size_t>(i)](mm, l);
      for (Index b = 0; b < alg.n; ++b)
        v -= rho(b, l) * dc[static_cast<size_t>(b)][static_cast<size_t>(i)](j, k);
      return v;
    };

    for (Index i = 0; i < alg.m; ++i)
      for (Index j = 0; j < alg.m; ++j)
        for (Index k = 0; k < alg.m; ++k)
          for (Index l = 0; l < alg.m; ++l) {
            const Scalar jac = term(i, j, k, l) + term(i, k, l, j) + term(i, l, j, k);
            worst = std::max(worst, std::abs(jac));
          }
  }
  const Scalar t = tol.value_or(alg.axiom_tolerance());
  return {worst, worst <= t};
}

/// Hamiltonian vector field of h : E* -> R in the induced coordinates:
///   xdot^a  = rho^a_i dh/dxi_i,
///   xidot_i = c^k_{ji} xi_k dh/dxi_j - rho^a_i dh/dx^a.
template <typename Scalar>
std::pair<VecX<Scalar>, VecX<Scalar>> hamiltonian_vector_field(
    const LocalAlgebroidT<Scalar>& alg,
    const std::function<VecX<Scalar>(const VecX<Scalar>&, const VecX<Scalar>&)>& dh_dx,
    const std::function<VecX<Scalar>(const VecX<Scalar>&, const VecX<Scalar>&)>& dh_dxi,
    const AlgebroidCovectorT<Scalar>& p) {
  require_covector_dims(alg, p);
  const auto rho = alg.anchor(p.x);
  const auto c = alg.bracket(p.x);
  const VecX<Scalar> hx = dh_dx(p.x, p.xi);
  const VecX<Scalar> hxi = dh_dxi(p.x, p.xi);
  if (hx.size() != alg.n || hxi.size() != alg.m)
    throw DimensionError("hamiltonian_vector_field: gradient dimensions mismatch");

  VecX<Scalar> xdot = rho * hxi;
  // M(j, i) = c^k_{ji} xi_k
  MatX<Scalar> M = MatX<Scalar>::Zero(alg.m, alg.m);
  for (Index k = 0; k < alg.m; ++k) M += p.xi[k] * c[static_cast<size_t>(k)];
  VecX<Scalar> xidot = M.transpose() * hxi - rho.transpose() * hx;
  return {std::move(xdot), std::move(xidot)};
}

/// Complete lift of the section X = f^i(x) e_i, evaluated at (x, y) in E:
///   xdot^a = f^i rho^a_i,
///   ydot^k = y^i rho^a_i df^k/dx^a + c^k_{ij} y^i f^j.
template <typename Scalar>
std::pair<VecX<Scalar>, VecX<Scalar>> complete_lift(
    const LocalAlgebroidT<Scalar>& alg,
    const std::function<VecX<Scalar>(const VecX<Scalar>&)>& section,
    const std::function<MatX<Scalar>(const VecX<Scalar>&)>& section_jac,
    const AlgebroidElementT<Scalar>& e) {
  require_element_dims(alg, e);
  const auto rho = alg.anchor(e.x);
  const auto c = alg.bracket(e.x);
  const VecX<Scalar> f = section(e.x);
  const MatX<Scalar> df = section_jac(e.x);  // m x n
  if (f.size() != alg.m || df.rows() != alg.m || df.cols() != alg.n)
    throw DimensionError("complete_lift: section dimensions mismatch");

  VecX<Scalar> xdot = rho * f;
  VecX<Scalar> ydot = df * (rho * e.y);
  for (Index k = 0; k < alg.m; ++k)
    ydot[k] += e.y.dot(c[static_cast<size_t>(k)] * f);
  return {std::move(xdot), std::move(ydot)};
}

/// The linear bivector on E* assembled as an antisymmetric (n+m) x (n+m)
/// matrix P in coordinates (x^a, xi_i), so that the Hamiltonian field is
/// P * grad h. Block layout: [[0, rho], [-rho^T, L]] with L(i,j) = c^k_{ji} xi_k.
template <typename Scalar>
MatX<Scalar> linear_poisson_bivector(const LocalAlgebroidT<Scalar>& alg,
                                     const AlgebroidCovectorT<Scalar>& p) {
  require_covector_dims(alg, p);
  const auto rho = alg.anchor(p.x);
  const auto c = alg.bracket(p.x);
  MatX<Scalar> P = MatX<Scalar>::Zero(alg.n + alg.m, alg.n + alg.m);
  P.topRightCorner(alg.n, alg.m) = rho;
  P.bottomLeftCorner(alg.m, alg.n) = -rho.transpose();
  MatX<Scalar> M = MatX<Scalar>::Zero(alg.m, alg.m);
  for (Index k = 0; k < alg.m; ++k) M += p.xi[k] * c[static_cast<size_t>(k)];
  P.bottomRightCorner(alg.m, alg.m) = M.transpose();
  return P;
}

/// Tangent algebroid of R^n: identity anchor, vanishing bracket.
template <typename Scalar>
LocalAlgebroidT<Scalar> tangent_algebroid(Index n) {
  LocalAlgebroidT<Scalar> alg;
  alg.n = n;
  alg.m = n;
  alg.anchor = [n](const VecX<Scalar>&) { return MatX<Scalar>::Identity(n, n).eval(); };
  alg.bracket = [n](const VecX<Scalar>&) {
    return std::vector<MatX<Scalar>>(static_cast<size_t>(n), MatX<Scalar>::Zero(n, n));
  };
  alg.danchor = [n](const VecX<Scalar>&, Index) { return MatX<Scalar>::Zero(n, n).eval(); };
  alg.dbracket = [n](const VecX<Scalar>&, Index) {
    return std::vector<MatX<Scalar>>(static_cast<size_t>(n), MatX<Scalar>::Zero(n, n));
  };
  alg.domain = BoxT<Scalar>::unit_centered(n);
  return alg;
}

/// A Lie algebra as an algebroid over a zero-dimensional base:
/// trivial anchor, constant structure matrices (entry (j,k) of constants[i]
/// is c^i_{jk}).
template <typename Scalar>
LocalAlgebroidT<Scalar> lie_algebra_algebroid(std::vector<MatX<Scalar>> constants) {
  const Index m = static_cast<Index>(constants.size());
  for (const auto& ci : constants)
    if (ci.rows() != m || ci.cols() != m)
      throw DimensionError("lie_algebra_algebroid: constants must be m matrices of size m x m");
  LocalAlgebroidT<Scalar> alg;
  alg.n = 0;
  alg.m = m;
  alg.anchor = [m](const VecX<Scalar>&) { return MatX<Scalar>::Zero(0, m).eval(); };
  alg.bracket = [cs = std::move(constants)](const VecX<Scalar>&) { return cs; };
  alg.danchor = [m](const VecX<Scalar>&, Index) { return MatX<Scalar>::Zero(0, m).eval(); };
  alg.dbracket = [m](const VecX<Scalar>&, Index) {
    return std::vector<MatX<Scalar>>(static_cast<size_t>(m), MatX<Scalar>::Zero(m, m));
  };
  alg.domain = BoxT<Scalar>::unit_centered(0);
  return alg;
}

/// so(3) structure constants: [e_i, e_j] = eps_{ijk} e_k.
template <typename Scalar>
std::vector<MatX<Scalar>> structure_constants_so3() {
  std::vector<MatX<Scalar>> c(3, MatX<Scalar>::Zero(3, 3));
  auto set = [&](Index i, Index j, Index k, Scalar v) {
    c[static_cast<size_t>(i)](j, k) = v;
    c[static_cast<size_t>(i)](k, j) = -v;
  };
  set(2, 0, 1, Scalar(1));  // [e1,e2] = e3
  set(0, 1, 2, Scalar(1));  // [e2,e3] = e1
  set(1, 2, 0, Scalar(1));  // [e3,e1] = e2
  return c;
}

/// se(2) structure constants in the basis (E1, E2, E3):
/// [E3,E1] = E2, [E2,E3] = E1, [E1,E2] = 0.
template <typename Scalar>
std::vector<MatX<Scalar>> structure_constants_se2() {
  std::vector<MatX<Scalar>> c(3, MatX<Scalar>::Zero(3, 3));
  auto set = [&](Index i, Index j, Index k, Scalar v) {
    c[static_cast<size_t>(i)](j, k) = v;
    c[static_cast<size_t>(i)](k, j) = -v;
  };
  set(1, 2, 0, Scalar(1));  // [E3,E1] = E2
  set(0, 1, 2, Scalar(1));  // [E2,E3] = E1
  return c;
}

/// Product algebroid: block-diagonal anchor, bracket vanishing on mixed terms.
template <typename Scalar>
LocalAlgebroidT<Scalar> product_algebroid(const LocalAlgebroidT<Scalar>& a1,
                                          const LocalAlgebroidT<Scalar>& a2) {
  LocalAlgebroidT<Scalar> alg;
  const Index n1 = a1.n, m1 = a1.m, n2 = a2.n, m2 = a2.m;
  alg.n = n1 + n2;
  alg.m = m1 + m2;

  auto split = [n1, n2](const VecX<Scalar>& x) {
    return std::pair<VecX<Scalar>, VecX<Scalar>>(x.head(n1), x.tail(n2));
  };

  alg.anchor = [a1, a2, split, n1, n2, m1, m2](const VecX<Scalar>& x) {
    auto [x1, x2] = split(x);
    MatX<Scalar> R = MatX<Scalar>::Zero(n1 + n2, m1 + m2);
    R.topLeftCorner(n1, m1) = a1.anchor(x1);
    R.bottomRightCorner(n2, m2) = a2.anchor(x2);
    return R;
  };
  alg.bracket = [a1, a2, split, m1, m2](const VecX<Scalar>& x) {
    auto [x1, x2] = split(x);
    const auto c1 = a1.bracket(x1);
    const auto c2 = a2.bracket(x2);
    std::vector<MatX<Scalar>> c(static_cast<size_t>(m1 + m2),
                                MatX<Scalar>::Zero(m1 + m2, m1 + m2));
    for (Index i = 0; i < m1; ++i)
      c[static_cast<size_t>(i)].topLeftCorner(m1, m1) = c1[static_cast<size_t>(i)];
    for (Index i = 0; i < m2; ++i)
      c[static_cast<size_t>(m1 + i)].bottomRightCorner(m2, m2) = c2[static_cast<size_t>(i)];
    return c;
  };
  if (a1.danchor && a2.danchor) {
    alg.danchor = [a1, a2, split, n1, n2, m1, m2](const VecX<Scalar>& x, Index b) {
      auto [x1, x2] = split(x);
      MatX<Scalar> D = MatX<Scalar>::Zero(n1 + n2, m1 + m2);
      if (b < n1)
        D.topLeftCorner(n1, m1) = a1.danchor(x1, b);
      else
        D.bottomRightCorner(n2, m2) = a2.danchor(x2, b - n1);
      return D;
    };
  }
  if (a1.dbracket && a2.dbracket) {
    alg.dbracket = [a1, a2, split, m1, m2, n1](const VecX<Scalar>& x, Index b) {
      auto [x1, x2] = split(x);
      std::vector<MatX<Scalar>> dc(static_cast<size_t>(m1 + m2),
                                   MatX<Scalar>::Zero(m1 + m2, m1 + m2));
      if (b < n1) {
        const auto d1 = a1.dbracket(x1, b);
        for (Index i = 0; i < m1; ++i)
          dc[static_cast<size_t>(i)].topLeftCorner(m1, m1) = d1[static_cast<size_t>(i)];
      } else {
        const auto d2 = a2.dbracket(x2, b - n1);
        for (Index i = 0; i < m2; ++i)
          dc[static_cast<size_t>(m1 + i)].bottomRightCorner(m2, m2) = d2[static_cast<size_t>(i)];
      }
      return dc;
    };
  }
  alg.domain.lo = VecX<Scalar>(n1 + n2);
  alg.domain.hi = VecX<Scalar>(n1 + n2);
  alg.domain.lo << a1.domain.lo, a2.domain.lo;
  alg.domain.hi << a1.domain.hi, a2.domain.hi;
  return alg;
}

/// Trivialised Atiyah algebroid TM x g over a base chart of R^n, with Lie
/// algebra constants C^gamma_{alpha beta} and a connection curvature
/// F^gamma_{ab}(x). Fibre ordering: n tangent directions, then k algebra
/// directions. The only nonzero bracket coefficients are
///   c^{n+gamma}_{ab}           = F^gamma_{ab}(x)   (a, b base-type),
///   c^{n+gamma}_{n+alpha,n+beta} = C^gamma_{alpha beta},
/// and the anchor projects onto the tangent part.
template <typename Scalar>
LocalAlgebroidT<Scalar> atiyah_trivialized(
    Index base_dim, std::vector<MatX<Scalar>> lie_constants,
    std::function<std::vector<MatX<Scalar>>(const VecX<Scalar>&)> curvature,
    std::function<std::vector<MatX<Scalar>>(const VecX<Scalar>&, Index)> dcurvature = {}) {
  const Index n = base_dim;
  const Index k = static_cast<Index>(lie_constants.size());
  const Index m = n + k;

  for (const auto& C : lie_constants) {
    if (C.rows() != k || C.cols() != k)
      throw DimensionError("atiyah_trivialized: lie constants must be k matrices of size k x k");
    if (((C + C.transpose()).cwiseAbs().maxCoeff()) > Scalar(0))
      throw DimensionError("atiyah_trivialized: lie constants must be skew in the lower indices");
  }

  LocalAlgebroidT<Scalar> alg;
  alg.n = n;
  alg.m = m;
  alg.anchor = [n, m](const VecX<Scalar>&) {
    MatX<Scalar> R = MatX<Scalar>::Zero(n, m);
    R.topLeftCorner(n, n) = MatX<Scalar>::Identity(n, n);
    return R;
  };
  alg.bracket = [n, k, m, C = std::move(lie_constants), curvature](const VecX<Scalar>& x) {
    const auto F = curvature(x);
    if (static_cast<Index>(F.size()) != k)
      throw DimensionError("atiyah_trivialized: curvature must return k matrices");
    std::vector<MatX<Scalar>> c(static_cast<size_t>(m), MatX<Scalar>::Zero(m, m));
    for (Index g = 0; g < k; ++g) {
      const auto& Fg = F[static_cast<size_t>(g)];
      if (Fg.rows() != n || Fg.cols() != n)
        throw DimensionError("atiyah_trivialized: curvature matrices must be n x n");
      if ((Fg + Fg.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12))
        throw DimensionError("atiyah_trivialized: curvature must be antisymmetric in (a,b)");
      auto& cg = c[static_cast<size_t>(n + g)];
      cg.topLeftCorner(n, n) = Fg;
      cg.bottomRightCorner(k, k) = C[static_cast<size_t>(g)];
    }
    return c;
  };
  alg.danchor = [n, m](const VecX<Scalar>&, Index) { return MatX<Scalar>::Zero(n, m).eval(); };
  if (dcurvature) {
    alg.dbracket = [n, k, m, dcurvature](const VecX<Scalar>& x, Index b) {
      const auto dF = dcurvature(x, b);
      std::vector<MatX<Scalar>> dc(static_cast<size_t>(m), MatX<Scalar>::Zero(m, m));
      for (Index g = 0; g < k; ++g)
        dc[static_cast<size_t>(n + g)].topLeftCorner(n, n) = dF[static_cast<size_t>(g)];
      return dc;
    };
  }
  alg.domain = BoxT<Scalar>::unit_centered(n);
  return alg;
}

/// Change of fibre frame e~_i = T^k_i(x) e_k. The transformed structure
/// functions are
///   rho~^a_i = rho^a_k T^k_i,
///   c~^l_{ij} = (T^{-1})^l_k [ T^p_i T^q_j c^k_{pq}
///               + rho~^a_i d_a T^k_j - rho~^a_j d_a T^k_i ].
template <typename Scalar>
LocalAlgebroidT<Scalar> change_frame(
    const LocalAlgebroidT<Scalar>& alg,
    std::function<MatX<Scalar>(const VecX<Scalar>&)> frame,
    std::function<MatX<Scalar>(const VecX<Scalar>&, Index)> dframe = {}) {
  LocalAlgebroidT<Scalar> out;
  out.n = alg.n;
  out.m = alg.m;
  out.domain = alg.domain;
  out.fd_step = alg.fd_step;

  auto frame_deriv = [alg, frame, dframe](const VecX<Scalar>& x, Index b) {
    if (dframe) return dframe(x, b);
    const Scalar h = alg.fd_step;
    VecX<Scalar> xp = x, xm = x;
    xp[b] += h;
    xm[b] -= h;
    return ((frame(xp) - frame(xm)) / (Scalar(2) * h)).eval();
  };

  out.anchor = [alg, frame](const VecX<Scalar>& x) {
    return (alg.anchor(x) * frame(x)).eval();
  };
  out.bracket = [alg, frame, frame_deriv](const VecX<Scalar>& x) {
    const MatX<Scalar> T = frame(x);
    const MatX<Scalar> Tinv = T.inverse();
    const auto c = alg.bracket(x);
    const MatX<Scalar> rho_new = alg.anchor(x) * T;  // n x m
    const Index m = alg.m, n = alg.n;

    // raw^k_{ij} before projecting with T^{-1}
    std::vector<MatX<Scalar>> raw(static_cast<size_t>(m), MatX<Scalar>::Zero(m, m));
    for (Index k = 0; k < m; ++k)
      raw[static_cast<size_t>(k)] = T.transpose() * c[static_cast<size_t>(k)] * T;
    for (Index b = 0; b < n; ++b) {
      const MatX<Scalar> dT = frame_deriv(x, b);  // m x m, entry (k, j) = d_b T^k_j
      for (Index k = 0; k < m; ++k) {
        auto& rk = raw[static_cast<size_t>(k)];
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < m; ++j)
            rk(i, j) += rho_new(b, i) * dT(k, j) - rho_new(b, j) * dT(k, i);
      }
    }
    std::vector<MatX<Scalar>> cn(static_cast<size_t>(m), MatX<Scalar>::Zero(m, m));
    for (Index l = 0; l < m; ++l)
      for (Index k = 0; k < m; ++k)
        cn[static_cast<size_t>(l)] += Tinv(l, k) * raw[static_cast<size_t>(k)];
    return cn;
  };
  return out;
}

/// Nonholonomic restriction to a subbundle D spanned by the first `d` vectors
/// of a user-supplied frame adapted to D + D_perp (the complement orthogonal
/// w.r.t. mu). The restricted bracket is the projected bracket
/// [.,.]_D = P_D [.,.]_E and the anchor restricts along the frame.
template <typename Scalar>
LocalAlgebroidT<Scalar> nonholonomic_restriction(
    const LocalAlgebroidT<Scalar>& alg,
    const std::function<MatX<Scalar>(const VecX<Scalar>&)>& metric,
    std::function<MatX<Scalar>(const VecX<Scalar>&)> frame, Index d,
    std::function<MatX<Scalar>(const VecX<Scalar>&, Index)> dframe = {}) {
  if (d <= 0 || d > alg.m)
    throw DimensionError("nonholonomic_restriction: bad subbundle dimension");
  for (const auto& x : alg.sample_points(16)) {
    const MatX<Scalar> mu = metric(x);
    if (mu.rows() != alg.m || mu.cols() != alg.m)
      throw DimensionError("nonholonomic_restriction: metric must be m x m");
    Eigen::SelfAdjointEigenSolver<MatX<Scalar>> es(Scalar(0.5) * (mu + mu.transpose()));
    if (es.eigenvalues().minCoeff() <= Scalar(0))
      throw NumericalError("nonholonomic_restriction: metric not SPD at a sample point");
  }

  const LocalAlgebroidT<Scalar> adapted = change_frame(alg, std::move(frame), std::move(dframe));

  LocalAlgebroidT<Scalar> out;
  out.n = alg.n;
  out.m = d;
  out.domain = alg.domain;
  out.fd_step = alg.fd_step;
  out.anchor = [adapted, d](const VecX<Scalar>& x) {
    return adapted.anchor(x).leftCols(d).eval();
  };
  out.bracket = [adapted, d](const VecX<Scalar>& x) {
    const auto c = adapted.bracket(x);
    std::vector<MatX<Scalar>> cd(static_cast<size_t>(d));
    for (Index i = 0; i < d; ++i)
      cd[static_cast<size_t>(i)] = c[static_cast<size_t>(i)].topLeftCorner(d, d);
    return cd;
  };
  return out;
}

/// Names of the built-in algebroid constructors.
inline const std::vector<std::pair<std::string, std::string>>& algebroid_registry() {
  static const std::vector<std::pair<std::string, std::string>> reg = {
      {"tangent", "tangent algebroid of R^n (identity anchor, zero bracket)"},
      {"lie_algebra", "Lie algebra over a point from constant structure matrices"},
      {"product", "product of two algebroids (block anchor, no mixed brackets)"},
      {"atiyah", "trivialised Atiyah algebroid TM x g with connection curvature"},
      {"nonholonomic", "restriction to a subbundle in a user-supplied adapted frame"},
  };
  return reg;
}

using LocalAlgebroid = LocalAlgebroidT<double>;
using AlgebroidElement = AlgebroidElementT<double>;
using AlgebroidCovector = AlgebroidCovectorT<double>;
using AxiomReport = AxiomReportT<double>;

}  // namespace algc
