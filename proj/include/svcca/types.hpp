#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <type_traits>

#include <Eigen/Dense>

namespace svcca {

using Index = Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Mat<double>;
using MatrixXcd = Mat<std::complex<double>>;
using VectorXd = Vec<double>;
using VectorXcd = Vec<std::complex<double>>;

template <typename Scalar>
using RealOf = typename Eigen::NumTraits<Scalar>::Real;

template <typename Scalar>
inline constexpr bool is_complex_v = Eigen::NumTraits<Scalar>::IsComplex;

/// Malformed input: bad files, mismatched shapes, bad flags. CLI exit code 2.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown: degenerate subspaces, non-convergence, divergence. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Neurons along rows, datapoints along columns.
///
/// A neuron's activation vector is one row: its responses over the whole
/// probe dataset. `centered` records that every row has (numerically) zero mean.
template <typename Scalar = double>
struct ActivationMatrix {
  Mat<Scalar> values;
  bool centered = false;

  Index neurons() const { return values.rows(); }
  Index datapoints() const { return values.cols(); }
};

}  // namespace svcca
