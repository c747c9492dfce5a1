#pragma once

#include <algorithm>
#include <cmath>

#include "svcca/linalg.hpp"
#include "svcca/types.hpp"

namespace svcca {

/// Subtracts each neuron's mean over the datapoints.
template <typename Derived>
Mat<typename Derived::Scalar> center(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.cols() == 0) return x;
  const Vec<Scalar> mean = x.rowwise().mean();
  return x.colwise() - mean;
}

template <typename Scalar>
ActivationMatrix<Scalar> center(const ActivationMatrix<Scalar>& a) {
  if (a.centered) return a;
  return {center(a.values), true};
}

template <typename Scalar>
struct Covariances {
  Mat<Scalar> xx;
  Mat<Scalar> xy;
  Mat<Scalar> yy;
};

/// Sample covariances with the unbiased 1/(d-1) normalisation. Inputs must
/// already be centered; complex inputs use conjugate transposes.
template <typename DX, typename DY>
Covariances<typename DX::Scalar> centered_covariances(const Eigen::MatrixBase<DX>& x,
                                                      const Eigen::MatrixBase<DY>& y) {
  using Scalar = typename DX::Scalar;
  static_assert(std::is_same_v<Scalar, typename DY::Scalar>);
  if (x.cols() != y.cols()) throw FormatError("datapoint count mismatch");
  if (x.cols() < 2) throw FormatError("need at least two datapoints");
  const RealOf<Scalar> norm = RealOf<Scalar>(1) / RealOf<Scalar>(x.cols() - 1);
  Covariances<Scalar> c;
  c.xx = norm * (x * x.adjoint());
  c.xy = norm * (x * y.adjoint());
  c.yy = norm * (y * y.adjoint());
  // Hermitian by construction, up to rounding in the product kernel.
  c.xx = (c.xx + c.xx.adjoint()) / RealOf<Scalar>(2);
  c.yy = (c.yy + c.yy.adjoint()) / RealOf<Scalar>(2);
  const Index d = x.cols();
  linalg::count_product<Scalar>(x.rows(), d, x.rows());
  linalg::count_product<Scalar>(x.rows(), d, y.rows());
  linalg::count_product<Scalar>(y.rows(), d, y.rows());
  return c;
}

/// Cross term only, for callers that never need the auto-covariances.
template <typename DX, typename DY>
Mat<typename DX::Scalar> centered_cross_covariance(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  using Scalar = typename DX::Scalar;
  static_assert(std::is_same_v<Scalar, typename DY::Scalar>);
  if (x.cols() != y.cols()) throw FormatError("datapoint count mismatch");
  if (x.cols() < 2) throw FormatError("need at least two datapoints");
  linalg::count_product<Scalar>(x.rows(), x.cols(), y.rows());
  return (RealOf<Scalar>(1) / RealOf<Scalar>(x.cols() - 1)) * (x * y.adjoint());
}

template <typename Scalar>
Covariances<Scalar> covariances(const ActivationMatrix<Scalar>& x, const ActivationMatrix<Scalar>& y) {
  if (!x.centered || !y.centered) throw FormatError("covariances require centered inputs");
  return centered_covariances(x.values, y.values);
}

struct CcaOptions {
  double eps = linalg::kDefaultEigenFloor;  ///< relative eigenvalue floor for whitening
};

/// Canonical correlation result. Row i of the transforms maps centered
/// neuron coordinates to the i-th canonical direction.
template <typename Scalar>
struct CcaResult {
  Vec<RealOf<Scalar>> correlations;  ///< descending, in [0, 1]
  Mat<Scalar> transform_x;           ///< k x m1
  Mat<Scalar> transform_y;           ///< k x m2
  Mat<Scalar> aligned_x;             ///< k x d, transform_x * centered X
  Mat<Scalar> aligned_y;             ///< k x d
  Index rank_x = 0;
  Index rank_y = 0;
  bool well_posed = true;  ///< d > max(m1, m2)

  Index size() const { return correlations.size(); }
};

namespace detail {

// Fix the free unit-modulus factor of each canonical pair: the largest
// magnitude entry of the x-side direction becomes real and positive. The
// same factor is applied to the y-side so the pair's correlation is kept.
template <typename Scalar>
void normalize_phases(CcaResult<Scalar>& r) {
  for (Index i = 0; i < r.aligned_x.rows(); ++i) {
    Index arg = 0;
    r.aligned_x.row(i).cwiseAbs().maxCoeff(&arg);
    const Scalar pivot = r.aligned_x(i, arg);
    const RealOf<Scalar> mag = std::abs(pivot);
    if (mag == RealOf<Scalar>(0)) continue;
    Scalar phase;
    if constexpr (is_complex_v<Scalar>)
      phase = std::conj(pivot) / mag;
    else
      phase = pivot < 0 ? Scalar(-1) : Scalar(1);
    r.aligned_x.row(i) *= phase;
    r.transform_x.row(i) *= phase;
    r.aligned_y.row(i) *= phase;
    r.transform_y.row(i) *= phase;
  }
}

}  // namespace detail

/// Canonical correlation analysis between two sets of neurons (rows) over
/// the same datapoints (columns).
///
/// The maximal-correlation problem is solved in whitened coordinates:
/// with Wx = Sxx^{-1/2}, Wy = Syy^{-1/2}, the canonical correlations are the
/// singular values of T = Wx Sxy Wy. They equal the square roots of the
/// eigenvalues of Wx Sxy Syy^{-1} Syx Wx (the quadratic-form statement), but
/// the SVD avoids forming that squared product. Whitening uses the
/// pseudo-inverse convention, so rank-deficient inputs are handled and the
/// number of correlations is min(rank_x, rank_y).
template <typename DX, typename DY>
CcaResult<typename DX::Scalar> cca(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                   const CcaOptions& opts = {}) {
  using Scalar = typename DX::Scalar;
  using Real = RealOf<Scalar>;
  static_assert(std::is_same_v<Scalar, typename DY::Scalar>);
  if (x.cols() != y.cols()) throw FormatError("datapoint count mismatch");
  if (x.cols() < 2) throw FormatError("cca needs more than one datapoint");
  if (!x.allFinite() || !y.allFinite()) throw NumericalError("cca: non-finite input");

  const Mat<Scalar> xc = center(x);
  const Mat<Scalar> yc = center(y);
  const auto cov = centered_covariances(xc, yc);
  const auto wx = linalg::psd_whitener(cov.xx, opts.eps);
  const auto wy = linalg::psd_whitener(cov.yy, opts.eps);
  if (wx.rank == 0 || wy.rank == 0) throw NumericalError("zero variance subspace");

  const Mat<Scalar> whitened = wx.map * cov.xy * wy.map.adjoint();
  linalg::count_product<Scalar>(wx.rank, x.rows(), y.rows());
  linalg::count_product<Scalar>(wx.rank, y.rows(), wy.rank);
  const auto dec = linalg::svd(whitened);
  const Index k = std::min(wx.rank, wy.rank);

  CcaResult<Scalar> r;
  r.rank_x = wx.rank;
  r.rank_y = wy.rank;
  r.well_posed = x.cols() > std::max(x.rows(), y.rows());
  r.correlations = dec.s.head(k).cwiseMax(Real(0)).cwiseMin(Real(1));
  r.transform_x = dec.U.leftCols(k).adjoint() * wx.map;
  r.transform_y = dec.Vt.topRows(k) * wy.map;
  r.aligned_x = r.transform_x * xc;
  r.aligned_y = r.transform_y * yc;
  detail::normalize_phases(r);
  return r;
}

/// Pearson correlation of two datapoint vectors (real part of the complex
/// inner product for complex inputs).
template <typename DA, typename DB>
double correlation(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  const auto ac = center(a);
  const auto bc = center(b);
  const double na = ac.norm();
  const double nb = bc.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::real(ac.conjugate().cwiseProduct(bc).sum()) / (na * nb);
}

}  // namespace svcca
