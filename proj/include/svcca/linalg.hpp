#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>

#include "svcca/types.hpp"

namespace svcca::linalg {

// ---------------------------------------------------------------------------
// Operation counting
// ---------------------------------------------------------------------------

/// Floating-point operation estimates, split by kernel family.
///
/// Counts follow the usual dense-LAPACK cost models (thin SVD 4mnk + 8k^3,
/// Hermitian eigensolver 9n^3, product 2mkn, FFT 5 n log2 n); a complex
/// operation counts as four real ones. Counting only happens while a
/// FlopScope is alive.
struct FlopTally {
  std::atomic<std::uint64_t> decomposition{0};
  std::atomic<std::uint64_t> products{0};
  std::atomic<std::uint64_t> transforms{0};

  std::uint64_t total() const { return decomposition + products + transforms; }
};

enum class FlopKind { decomposition, products, transforms };

void add_flops(FlopKind kind, double count);

/// Installs `tally` as the process-wide counter for the lifetime of the scope.
class FlopScope {
 public:
  explicit FlopScope(FlopTally& tally);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopTally* previous_;
};

template <typename Scalar>
constexpr double complex_factor() {
  return is_complex_v<Scalar> ? 4.0 : 1.0;
}

template <typename Scalar>
void count_product(Index m, Index k, Index n) {
  add_flops(FlopKind::products, complex_factor<Scalar>() * 2.0 * double(m) * double(k) * double(n));
}

// ---------------------------------------------------------------------------
// SVD
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SvdResult {
  Mat<Scalar> U;            ///< m x k, orthonormal columns
  Vec<RealOf<Scalar>> s;    ///< k, non-negative, descending
  Mat<Scalar> Vt;           ///< k x n, orthonormal rows
};

/// Thin SVD, k = min(m, n). Throws NumericalError on non-finite input or
/// solver failure.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Mat<Scalar> a = m;
  if (!a.allFinite()) throw NumericalError("svd: non-finite input");
  const Index k = std::min(a.rows(), a.cols());
  SvdResult<Scalar> out;
  if (k == 0) {
    out.U = Mat<Scalar>(a.rows(), 0);
    out.s = Vec<RealOf<Scalar>>(0);
    out.Vt = Mat<Scalar>(0, a.cols());
    return out;
  }
  Eigen::BDCSVD<Mat<Scalar>> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) throw NumericalError("svd: solver did not converge");
  out.U = solver.matrixU();
  out.s = solver.singularValues();
  out.Vt = solver.matrixV().adjoint();
  if (!out.U.allFinite() || !out.s.allFinite() || !out.Vt.allFinite())
    throw NumericalError("svd: solver produced non-finite factors");
  const double mn = double(a.rows()) * double(a.cols());
  add_flops(FlopKind::decomposition, complex_factor<Scalar>() * (4.0 * mn * double(k) + 8.0 * std::pow(double(k), 3)));
  return out;
}

// ---------------------------------------------------------------------------
// Hermitian eigendecomposition and PSD inverse square root
// ---------------------------------------------------------------------------

template <typename Scalar>
struct HermitianEig {
  Vec<RealOf<Scalar>> values;  ///< descending
  Mat<Scalar> vectors;         ///< columns match `values`
};

template <typename Derived>
void require_hermitian(const Eigen::MatrixBase<Derived>& s, double rel_tol = 1e-10) {
  if (s.rows() != s.cols()) throw FormatError("matrix is not square");
  const double scale = std::max(s.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double asym = (s - s.adjoint()).cwiseAbs().maxCoeff();
  if (asym > rel_tol * scale) throw NumericalError("matrix is not Hermitian");
}

template <typename Derived>
HermitianEig<typename Derived::Scalar> hermitian_eig(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  if (!s.allFinite()) throw NumericalError("eig: non-finite input");
  const Index n = s.rows();
  HermitianEig<Scalar> out;
  if (n == 0) return out;
  const Mat<Scalar> sym = (s + s.adjoint()) / RealOf<Scalar>(2);
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("eig: solver did not converge");
  // Eigen returns ascending order.
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  add_flops(FlopKind::decomposition, complex_factor<Scalar>() * 9.0 * std::pow(double(n), 3));
  return out;
}

inline constexpr double kDefaultEigenFloor = 1e-6;

/// Whitening map restricted to the significant eigenspace of a PSD matrix.
///
/// `map` is r x n with map * S * map^H = I_r, where r counts eigenvalues
/// at or above eps * lambda_max.
template <typename Scalar>
struct PsdWhitener {
  Mat<Scalar> map;
  Mat<Scalar> basis;               ///< n x r significant eigenvectors
  Vec<RealOf<Scalar>> eigenvalues;  ///< r kept eigenvalues, descending
  Index rank = 0;
};

template <typename Derived>
PsdWhitener<typename Derived::Scalar> psd_whitener(const Eigen::MatrixBase<Derived>& s,
                                                   double eps = kDefaultEigenFloor) {
  using Scalar = typename Derived::Scalar;
  require_hermitian(s);
  const auto eig = hermitian_eig(s);
  PsdWhitener<Scalar> out;
  const Index n = s.rows();
  if (n == 0 || eig.values(0) <= 0) {
    if (n > 0 && eig.values(0) < 0) throw NumericalError("not PSD");
    out.map = Mat<Scalar>(0, n);
    out.basis = Mat<Scalar>(n, 0);
    return out;
  }
  const double lmax = eig.values(0);
  if (eig.values(n - 1) < -eps * lmax) throw NumericalError("not PSD");
  Index r = 0;
  while (r < n && eig.values(r) >= eps * lmax) ++r;
  out.rank = r;
  out.eigenvalues = eig.values.head(r);
  out.basis = eig.vectors.leftCols(r);
  const Vec<RealOf<Scalar>> inv_root = out.eigenvalues.cwiseSqrt().cwiseInverse();
  out.map = inv_root.asDiagonal() * out.basis.adjoint();
  return out;
}

/// Pseudo-inverse square root: eigenvalues below eps * lambda_max are
/// treated as zero, so R * S * R is the projector onto S's significant
/// eigenspace. Throws "not PSD" for eigenvalues below -eps * lambda_max.
template <typename Derived>
Mat<typename Derived::Scalar> inv_sqrt_psd(const Eigen::MatrixBase<Derived>& s,
                                           double eps = kDefaultEigenFloor) {
  const auto w = psd_whitener(s, eps);
  return w.basis * w.map;
}

// ---------------------------------------------------------------------------
// Discrete Fourier transforms (unitary normalisation)
// ---------------------------------------------------------------------------

/// Unitary DFT matrix, F(j, k) = exp(-2 pi i jk / n) / sqrt(n).
MatrixXcd dft_matrix(Index n);

/// Unitary 1-D DFT. Powers of two go through an FFT, other sizes use the
/// direct O(n^2) sum.
VectorXcd dft(const VectorXcd& x);
VectorXcd idft(const VectorXcd& x);

/// F * c * F^T for a square n x n channel.
MatrixXcd dft2(const MatrixXcd& channel);
/// Inverse of dft2: conj(F) * c * conj(F)^T.
MatrixXcd idft2(const MatrixXcd& spectrum);

bool is_power_of_two(Index n);

}  // namespace svcca::linalg
