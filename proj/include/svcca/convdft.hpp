#pragma once

#include <cstdint>
#include <vector>

#include "svcca/svcca.hpp"

namespace svcca::conv {

/// h x w x c x d activations. Stored as an (h*w*c) x d matrix whose row
/// index is (i*w + j)*c + channel, so the storage is already the
/// cross-layer view and the row-major dump payload order.
template <typename Scalar>
struct ConvTensor {
  Index h = 0, w = 0, c = 0, d = 0;
  Mat<Scalar> data;

  ConvTensor() = default;
  ConvTensor(Index h_, Index w_, Index c_, Index d_) : h(h_), w(w_), c(c_), d(d_), data(Mat<Scalar>::Zero(h_ * w_ * c_, d_)) {}

  Index row(Index i, Index j, Index ch) const { return (i * w + j) * c + ch; }
  Scalar& operator()(Index i, Index j, Index ch, Index p) { return data(row(i, j, ch), p); }
  const Scalar& operator()(Index i, Index j, Index ch, Index p) const { return data(row(i, j, ch), p); }

  /// One channel of one datapoint as an h x w image.
  Mat<Scalar> channel(Index ch, Index p) const {
    Mat<Scalar> img(h, w);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) img(i, j) = (*this)(i, j, ch, p);
    return img;
  }
  void set_channel(Index ch, Index p, const Mat<Scalar>& img) {
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) (*this)(i, j, ch, p) = img(i, j);
  }
  bool square() const { return h == w; }
};

using ConvActivations = ConvTensor<double>;
using SpectralActivations = ConvTensor<std::complex<double>>;

// ---------------------------------------------------------------------------
// Reshaping
// ---------------------------------------------------------------------------

/// c neurons over h*w*d datapoints; column index (i*w + j)*d + p.
template <typename Scalar>
Mat<Scalar> same_layer_view(const ConvTensor<Scalar>& t) {
  Mat<Scalar> out(t.c, t.h * t.w * t.d);
  for (Index i = 0; i < t.h; ++i)
    for (Index j = 0; j < t.w; ++j)
      for (Index ch = 0; ch < t.c; ++ch)
        out.row(ch).segment((i * t.w + j) * t.d, t.d) = t.data.row(t.row(i, j, ch));
  return out;
}

template <typename Scalar>
ConvTensor<Scalar> from_same_layer_view(const Mat<Scalar>& view, Index h, Index w) {
  if (h < 1 || w < 1 || view.cols() % (h * w) != 0) throw FormatError("view width is not a multiple of h*w");
  ConvTensor<Scalar> t(h, w, view.rows(), view.cols() / (h * w));
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      for (Index ch = 0; ch < t.c; ++ch) t.data.row(t.row(i, j, ch)) = view.row(ch).segment((i * w + j) * t.d, t.d);
  return t;
}

/// h*w*c neurons (index (i*w + j)*c + channel) over d datapoints.
template <typename Scalar>
const Mat<Scalar>& cross_layer_view(const ConvTensor<Scalar>& t) {
  return t.data;
}

// ---------------------------------------------------------------------------
// Translation augmentation and circular layers
// ---------------------------------------------------------------------------

struct TranslationSpec {
  Index stride_h = 1;
  Index stride_w = 1;
};

/// Cyclic shift of every channel: out(i, j) = in((i + a) mod h, (j + b) mod w).
ConvActivations shift(const ConvActivations& images, Index a, Index b);

/// Every image followed by all of its cyclic shifts on the stride lattice,
/// image-major: datapoint p*S + (a/stride_h)*(w/stride_w) + b/stride_w.
ConvActivations augment_translations(const ConvActivations& images, const TranslationSpec& spec = {});

/// Cross-correlation kernels, indexed [out][in][u][v], centred at (kh/2, kw/2).
struct ConvKernel {
  Index out_channels = 0, in_channels = 0, kh = 0, kw = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvKernel() = default;
  ConvKernel(Index out, Index in, Index kh_, Index kw_)
      : out_channels(out), in_channels(in), kh(kh_), kw(kw_),
        weights(static_cast<std::size_t>(out * in * kh_ * kw_), 0.0), bias(static_cast<std::size_t>(out), 0.0) {}

  double& at(Index o, Index i, Index u, Index v) { return weights[static_cast<std::size_t>(((o * in_channels + i) * kh + u) * kw + v)]; }
  double at(Index o, Index i, Index u, Index v) const { return weights[static_cast<std::size_t>(((o * in_channels + i) * kh + u) * kw + v)]; }

  static ConvKernel random(Index out, Index in, Index kh, Index kw, std::uint64_t seed);
  static ConvKernel identity(Index channels);
};

/// Circularly padded convolution with the given stride, followed by
/// non-overlapping average pooling of size `pool` (1 disables pooling).
/// Shifting the input by (stride*pool*a, stride*pool*b) shifts the output
/// by (a, b).
ConvActivations circular_conv_forward(const ConvActivations& images, const ConvKernel& kernel, Index stride = 1,
                                      Index pool = 1);

ConvActivations average_pool(const ConvActivations& x, Index pool);

struct LayerPair {
  ConvActivations x, y;
};

/// `images` random n x n x c inputs, optionally expanded with every cyclic
/// shift, passed through a random 3x3 circular conv + relu (x) and a second
/// one on top (y). With augmentation every covariance of x and y is
/// invariant under 2-D cyclic shifts.
LayerPair translation_fixture(Index n, Index c, Index images, std::uint64_t seed, bool augment = true);

// ---------------------------------------------------------------------------
// DFT path
// ---------------------------------------------------------------------------

/// Unitary 2-D DFT of every channel of every datapoint.
SpectralActivations dft_preprocess(const ConvActivations& acts);

/// Frequency (u, v) occupies neuron rows [(u*n + v)*c, (u*n + v + 1)*c) of
/// the cross-layer view.
template <typename Scalar>
Mat<Scalar> frequency_block(const ConvTensor<Scalar>& t, Index u, Index v) {
  return t.data.middleRows(t.row(u, v, 0), t.c);
}

struct FrequencyBlock {
  Index u = 0, v = 0;
  MatrixXcd xx, xy, yy;
};

struct BlockCovariance {
  Index n = 0, c1 = 0, c2 = 0;
  std::vector<FrequencyBlock> blocks;  ///< ordered by u*n + v
};

/// Within-block covariances of two DFT-preprocessed layers.
BlockCovariance block_covariance(const SpectralActivations& x, const SpectralActivations& y);

/// Dense cross-covariance of the (centered) cross-layer views.
MatrixXcd dense_covariance(const SpectralActivations& x, const SpectralActivations& y);

struct BlockStructure {
  double max_in_block = 0.0;
  double max_off_block = 0.0;
  double ratio() const { return max_in_block > 0 ? max_off_block / max_in_block : 0.0; }
};

/// Splits a dense (n2*c1) x (n2*c2) covariance into its c1 x c2 diagonal
/// blocks and everything else.
BlockStructure block_structure(const MatrixXcd& cov, Index blocks, Index c1, Index c2);

enum class DftMode { exact, approximate };
enum class TruncationScope { per_block, pooled };

struct DftCcaOptions {
  double threshold = kDefaultThreshold;
  Denominator denominator = Denominator::retained;
  DftMode mode = DftMode::exact;
  TruncationScope scope = TruncationScope::per_block;
  CcaOptions cca{};
  /// Exact mode rejects inputs whose probed cross-frequency covariance
  /// exceeds this fraction of the largest in-block entry.
  double exactness_tolerance = 1e-6;
};

struct BlockCcaResult {
  Index u = 0, v = 0;
  Index kept_x = 0, kept_y = 0;
  VectorXd correlations;
  MatrixXcd transform_x;  ///< k x kept_x, over the block's kept singular coordinates
  MatrixXcd transform_y;
};

struct DftCcaResult {
  std::vector<BlockCcaResult> blocks;  ///< ordered by u*n + v
  VectorXd correlations;               ///< all blocks, descending
  Index kept_x = 0, kept_y = 0;
  Index original_x = 0, original_y = 0;
  double mean_similarity = 0.0;
  Denominator denominator = Denominator::retained;
  bool exact = true;
  /// Largest cross-frequency covariance seen on neighbouring frequency pairs,
  /// relative to the largest in-block entry.
  double probed_off_block_ratio = 0.0;
};

/// SVCCA between two conv layers computed block by block in the frequency
/// domain. Blocks are independent and may run in parallel; results are
/// merged in frequency order.
DftCcaResult dft_cca(const ConvActivations& l1, const ConvActivations& l2, const DftCcaOptions& opts = {});

double mean_similarity(const DftCcaResult& r, Denominator denominator);

// ---------------------------------------------------------------------------
// Structure verification
// ---------------------------------------------------------------------------

struct CirculantDeviation {
  double block_circulant = 0.0;   ///< shifts along the block (row-of-image) index
  double circulant_blocks = 0.0;  ///< shifts within blocks
  double max() const { return std::max(block_circulant, circulant_blocks); }
};

/// Deviation of an (n*n) x (n*n) covariance of a flattened n x n channel
/// (index i*n + j) from invariance under every 2-D cyclic shift, i.e. from
/// being block circulant with circulant blocks.
CirculantDeviation verify_circulant(const MatrixXcd& cov, Index n);

/// Largest off-diagonal magnitude of F A F^* for a square A.
double verify_dft_diagonalizes(const MatrixXcd& a);

/// Same check with the 2-D transform F (x) F on an (n*n) x (n*n) matrix.
double verify_dft2_diagonalizes(const MatrixXcd& a, Index n);

/// A(i, j) = first_row((j - i) mod n).
MatrixXcd circulant(const VectorXcd& first_row);

/// max |vec(A c B) - (B^T (x) A) vec(c)| with column-stacking vec.
double kronecker_vec_residual(const MatrixXcd& a, const MatrixXcd& c, const MatrixXcd& b);

/// Column-stacking vec.
VectorXcd vec(const MatrixXcd& m);

}  // namespace svcca::conv
