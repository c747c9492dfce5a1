#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "svcca/cca.hpp"

namespace svcca {

inline constexpr double kDefaultThreshold = 0.99;

/// Top singular directions of a centered layer, kept until their summed
/// singular values reach `threshold` of the total.
template <typename Scalar>
struct TruncatedBasis {
  Mat<Scalar> directions;               ///< kept x d, orthonormal rows over datapoints
  Mat<Scalar> loadings;                 ///< m x kept, left singular vectors (neuron space)
  Mat<Scalar> all_loadings;             ///< m x min(m, d)
  Vec<RealOf<Scalar>> singular_values;  ///< all min(m, d) values, descending
  Vec<Scalar> mean;                     ///< per-neuron mean removed before the SVD
  Index kept = 0;
  Index original = 0;
  double explained_fraction = 0.0;

  /// Activations expressed in the kept singular coordinates: U_k^H (X - mean).
  Mat<Scalar> reduced() const { return singular_values.head(kept).asDiagonal() * directions; }
};

/// Smallest count whose cumulative |singular value| sum reaches
/// threshold * total. Uses the plain sum of singular values, not energy.
template <typename Real>
Index variance_cutoff(const Vec<Real>& singular_values, double threshold) {
  const double total = singular_values.cwiseAbs().sum();
  double cumulative = 0.0;
  for (Index i = 0; i < singular_values.size(); ++i) {
    cumulative += std::abs(singular_values(i));
    if (cumulative >= threshold * total) return i + 1;
  }
  return singular_values.size();
}

inline void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw FormatError("threshold must be in (0, 1]");
}

/// Full singular basis of the centered layer (nothing dropped yet).
template <typename Derived>
TruncatedBasis<typename Derived::Scalar> singular_basis(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  TruncatedBasis<Scalar> b;
  b.original = x.rows();
  b.mean = x.cols() > 0 ? Vec<Scalar>(x.rowwise().mean()) : Vec<Scalar>::Zero(x.rows());
  const Mat<Scalar> xc = x.colwise() - b.mean;
  auto dec = linalg::svd(xc);
  b.singular_values = dec.s;
  b.kept = dec.s.size();
  b.explained_fraction = 1.0;
  b.directions = std::move(dec.Vt);
  b.loadings = dec.U;
  b.all_loadings = std::move(dec.U);
  return b;
}

/// Drops all but the top `kept` singular directions.
template <typename Scalar>
void retain(TruncatedBasis<Scalar>& b, Index kept) {
  if (kept < 0 || kept > b.kept) throw FormatError("retained count out of range");
  const double total = b.singular_values.sum();
  b.explained_fraction = total > 0 ? b.singular_values.head(kept).sum() / total : 0.0;
  b.directions = Mat<Scalar>(b.directions.topRows(kept));
  b.loadings = Mat<Scalar>(b.loadings.leftCols(kept));
  b.kept = kept;
}

template <typename Derived>
TruncatedBasis<typename Derived::Scalar> truncate_by_variance(const Eigen::MatrixBase<Derived>& x,
                                                              double threshold = kDefaultThreshold) {
  check_threshold(threshold);
  auto b = singular_basis(x);
  const auto& s = b.singular_values;
  // Constant rows leave only centering round-off behind.
  if (s.size() == 0 || !(s(0) > 1e-13 * double(x.norm()))) throw NumericalError("zero variance subspace");
  retain(b, variance_cutoff(s, threshold));
  return b;
}

enum class Denominator { retained, layer_size };

struct SvccaOptions {
  double threshold = kDefaultThreshold;
  Denominator denominator = Denominator::retained;
  CcaOptions cca{};
};

template <typename Scalar>
struct SvccaResult {
  CcaResult<Scalar> cca;
  Index kept_x = 0;
  Index kept_y = 0;
  Index original_x = 0;
  Index original_y = 0;
  double mean_similarity = 0.0;
  Denominator denominator = Denominator::retained;
  /// k x m1: weights turning centered neurons of X into canonical variates.
  Mat<Scalar> neuron_directions_x;
  Mat<Scalar> neuron_directions_y;
  /// k x m1: covariance of each canonical variate with the neurons of X, i.e.
  /// where that direction lives in neuron space. Projection uses these.
  Mat<Scalar> neuron_loadings_x;
  Mat<Scalar> neuron_loadings_y;
  bool exact = true;  ///< false when produced by an approximate fast path

  const Vec<RealOf<Scalar>>& correlations() const { return cca.correlations; }
};

/// Sum of correlations over min(kept) (retained) or min(layer sizes).
template <typename Scalar>
double mean_similarity(const SvccaResult<Scalar>& r, Denominator denominator) {
  const double sum = r.cca.correlations.sum();
  const Index denom = denominator == Denominator::retained ? std::min(r.kept_x, r.kept_y)
                                                           : std::min(r.original_x, r.original_y);
  return denom > 0 ? sum / double(denom) : 0.0;
}

template <typename Scalar>
SvccaResult<Scalar> svcca_from_bases(const TruncatedBasis<Scalar>& bx, const TruncatedBasis<Scalar>& by,
                                     const SvccaOptions& opts = {}) {
  if (bx.directions.cols() != by.directions.cols()) throw FormatError("datapoint count mismatch");
  SvccaResult<Scalar> r;
  r.cca = cca(bx.reduced(), by.reduced(), opts.cca);
  r.kept_x = bx.kept;
  r.kept_y = by.kept;
  r.original_x = bx.original;
  r.original_y = by.original;
  r.denominator = opts.denominator;
  r.neuron_directions_x = r.cca.transform_x * bx.loadings.adjoint();
  r.neuron_directions_y = r.cca.transform_y * by.loadings.adjoint();
  // Cov(z, x) = T S_k^2 U_k^H / (d - 1) because z = T S_k V_k^H.
  const double dof = double(std::max<Index>(bx.directions.cols() - 1, 1));
  r.neuron_loadings_x = r.cca.transform_x * bx.singular_values.head(bx.kept).cwiseAbs2().asDiagonal() * bx.loadings.adjoint() / dof;
  r.neuron_loadings_y = r.cca.transform_y * by.singular_values.head(by.kept).cwiseAbs2().asDiagonal() * by.loadings.adjoint() / dof;
  r.mean_similarity = mean_similarity(r, opts.denominator);
  return r;
}

/// Two-step SVCCA: variance-threshold SVD on each side, then CCA between the
/// kept singular coordinates.
template <typename DX, typename DY>
SvccaResult<typename DX::Scalar> svcca(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                       const SvccaOptions& opts = {}) {
  if (x.cols() != y.cols()) throw FormatError("datapoint count mismatch");
  return svcca_from_bases(truncate_by_variance(x, opts.threshold), truncate_by_variance(y, opts.threshold), opts);
}

// ---------------------------------------------------------------------------
// Projection utilities
// ---------------------------------------------------------------------------

/// Orthonormal basis (rows) for the span of `rows`, in order, by modified
/// Gram-Schmidt with one reorthogonalisation pass. Vectors whose residual
/// falls below `tol` times their original norm are skipped; stops once
/// `limit` rows are collected.
template <typename Scalar>
Mat<Scalar> orthonormal_rows(const Mat<Scalar>& rows, Index limit = -1, double tol = 1e-8) {
  const Index dim = rows.cols();
  if (limit < 0) limit = std::min(rows.rows(), dim);
  Mat<Scalar> out(limit, dim);
  Index count = 0;
  for (Index i = 0; i < rows.rows() && count < limit; ++i) {
    Vec<Scalar> v = rows.row(i).transpose();
    const double norm0 = v.norm();
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (Index j = 0; j < count; ++j) {
        const Scalar c = out.row(j).conjugate().dot(v.transpose());
        v -= c * out.row(j).transpose();
      }
    const double n = v.norm();
    if (n < tol * norm0) continue;
    out.row(count++) = (v / n).transpose();
  }
  return out.topRows(count);
}

/// Complete orthonormal basis of neuron space: the canonical loadings of one
/// side (orthonormalised, in correlation order), then that layer's singular
/// directions, then any remaining coordinate axes.
template <typename Scalar>
Mat<Scalar> canonical_neuron_basis(const Mat<Scalar>& neuron_directions, const TruncatedBasis<Scalar>& basis) {
  const Index m = basis.original;
  Mat<Scalar> candidates(neuron_directions.rows() + basis.all_loadings.cols() + m, m);
  candidates << neuron_directions, basis.all_loadings.adjoint(), Mat<Scalar>::Identity(m, m);
  return orthonormal_rows(candidates, m);
}

/// Complete orthonormal basis of neuron space ordered by singular value.
template <typename Scalar>
Mat<Scalar> singular_neuron_basis(const TruncatedBasis<Scalar>& basis) {
  const Index m = basis.original;
  Mat<Scalar> candidates(basis.all_loadings.cols() + m, m);
  candidates << basis.all_loadings.adjoint(), Mat<Scalar>::Identity(m, m);
  return orthonormal_rows(candidates, m);
}

/// Keeps the top-k rows of `directions` (orthonormalised), k x m.
template <typename Scalar>
Mat<Scalar> topk_projector(const Mat<Scalar>& directions, Index k) {
  if (k < 1 || k > directions.rows()) throw FormatError("k out of range");
  Mat<Scalar> p = orthonormal_rows(Mat<Scalar>(directions.topRows(k)), k);
  if (p.rows() != k) throw NumericalError("top-k directions are linearly dependent");
  return p;
}

/// P_k^H P_k X where P_k stacks the (orthonormalised) top-k directions over
/// neuron space. The output has rank at most k.
template <typename Scalar>
Mat<Scalar> project_topk(const Mat<Scalar>& x, const Mat<Scalar>& directions, Index k) {
  if (directions.cols() != x.rows()) throw FormatError("direction width does not match neuron count");
  const Mat<Scalar> p = topk_projector(directions, k);
  return p.adjoint() * (p * x);
}

enum class BaselineMode { random, max_activation };

/// k x m selection rows picking k neuron axes: uniformly at random (seeded),
/// or the k neurons with the largest root-mean-square activation.
MatrixXd neuron_baseline_basis(const MatrixXd& x, Index k, BaselineMode mode, std::uint64_t seed);

/// Projection of X onto k axis-aligned neuron coordinates.
MatrixXd neuron_subspace_baselines(const MatrixXd& x, Index k, BaselineMode mode, std::uint64_t seed);

/// Neurons ordered by the l2 norm of their coefficients across the given
/// canonical directions (rows), largest first. Ties keep index order.
std::vector<Index> neurons_by_direction_weight(const MatrixXd& neuron_directions);

}  // namespace svcca
