#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace algc {

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

/// Default numerical knobs, shared across the library.
template <typename Scalar>
struct Defaults {
  static constexpr Scalar fd_step = Scalar(1e-6);
  static constexpr Scalar fd_check_step = Scalar(1e-5);
  static constexpr Scalar tol_axiom_analytic = Scalar(1e-8);
  static constexpr Scalar tol_axiom_fd = Scalar(1e-5);
  static constexpr Scalar tol_join = Scalar(1e-9);
  static constexpr Scalar tol_switch = Scalar(1e-10);
  static constexpr Scalar tol_tie = Scalar(1e-12);
  static constexpr Scalar overflow_guard = Scalar(1e12);
  static constexpr Scalar lp_feas_tol = Scalar(1e-9);
  static constexpr int steps_per_segment = 200;
  static constexpr int axiom_samples = 100;
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned sampling box.
template <typename Scalar>
struct BoxT {
  VecX<Scalar> lo;
  VecX<Scalar> hi;

  Index dim() const { return lo.size(); }

  static BoxT unit_centered(Index n, Scalar half_width = Scalar(1)) {
    BoxT b;
    b.lo = VecX<Scalar>::Constant(n, -half_width);
    b.hi = VecX<Scalar>::Constant(n, half_width);
    return b;
  }
};

namespace detail {

inline double halton(unsigned long index, unsigned base) {
  double f = 1.0, r = 0.0;
  unsigned long i = index;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

inline unsigned nth_prime(int k) {
  static const unsigned primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                    31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  if (k < 0 || k >= static_cast<int>(sizeof(primes) / sizeof(primes[0])))
    throw DimensionError("halton dimension too large");
  return primes[k];
}

}  // namespace detail

/// Deterministic quasi-random points in a box (Halton sequence, start index 1).
template <typename Scalar>
std::vector<VecX<Scalar>> halton_points(const BoxT<Scalar>& box, int count,
                                        unsigned long start = 1) {
  std::vector<VecX<Scalar>> pts;
  pts.reserve(static_cast<size_t>(count));
  const Index n = box.dim();
  for (int q = 0; q < count; ++q) {
    VecX<Scalar> x(n);
    for (Index d = 0; d < n; ++d) {
      const double u = detail::halton(start + static_cast<unsigned long>(q),
                                      detail::nth_prime(static_cast<int>(d)));
      x[d] = box.lo[d] + Scalar(u) * (box.hi[d] - box.lo[d]);
    }
    pts.push_back(std::move(x));
  }
  return pts;
}

using Box = BoxT<double>;

}  // namespace algc
