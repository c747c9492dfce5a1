#include "svcca/convdft.hpp"

#include <algorithm>
#include <random>

#include <unsupported/Eigen/KroneckerProduct>

#include "svcca/parallel.hpp"

namespace svcca::conv {

namespace {

Index mod(Index a, Index n) { return ((a % n) + n) % n; }

}  // namespace

ConvActivations shift(const ConvActivations& images, Index a, Index b) {
  ConvActivations out(images.h, images.w, images.c, images.d);
  for (Index i = 0; i < images.h; ++i)
    for (Index j = 0; j < images.w; ++j)
      for (Index ch = 0; ch < images.c; ++ch)
        out.data.row(out.row(i, j, ch)) = images.data.row(images.row(mod(i + a, images.h), mod(j + b, images.w), ch));
  return out;
}

ConvActivations augment_translations(const ConvActivations& images, const TranslationSpec& spec) {
  if (!images.square()) throw FormatError("augment_translations: images must be square");
  if (spec.stride_h < 1 || spec.stride_w < 1 || images.h % spec.stride_h != 0 || images.w % spec.stride_w != 0)
    throw FormatError("augment_translations: strides must divide the image size");
  const Index sh = images.h / spec.stride_h;
  const Index sw = images.w / spec.stride_w;
  const Index per_image = sh * sw;
  ConvActivations out(images.h, images.w, images.c, images.d * per_image);
  for (Index a = 0; a < sh; ++a)
    for (Index b = 0; b < sw; ++b) {
      const ConvActivations shifted = shift(images, a * spec.stride_h, b * spec.stride_w);
      for (Index p = 0; p < images.d; ++p) out.data.col(p * per_image + a * sw + b) = shifted.data.col(p);
    }
  return out;
}

ConvKernel ConvKernel::random(Index out, Index in, Index kh, Index kw, std::uint64_t seed) {
  ConvKernel k(out, in, kh, kw);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(in * kh * kw)));
  for (auto& v : k.weights) v = normal(rng);
  for (auto& v : k.bias) v = 0.1 * normal(rng);
  return k;
}

ConvKernel ConvKernel::identity(Index channels) {
  ConvKernel k(channels, channels, 1, 1);
  for (Index c = 0; c < channels; ++c) k.at(c, c, 0, 0) = 1.0;
  return k;
}

ConvActivations circular_conv_forward(const ConvActivations& x, const ConvKernel& k, Index stride, Index pool) {
  if (k.in_channels != x.c) throw FormatError("conv: kernel input channels do not match");
  if (k.kh > x.h || k.kw > x.w) throw FormatError("conv: kernel larger than input");
  if (stride < 1 || x.h % stride != 0 || x.w % stride != 0) throw FormatError("conv: stride must divide input size");
  const Index oh = x.h / stride;
  const Index ow = x.w / stride;
  ConvActivations out(oh, ow, k.out_channels, x.d);
  for (Index i = 0; i < oh; ++i)
    for (Index j = 0; j < ow; ++j)
      for (Index o = 0; o < k.out_channels; ++o) {
        auto dst = out.data.row(out.row(i, j, o));
        dst.setConstant(k.bias[static_cast<std::size_t>(o)]);
        for (Index ci = 0; ci < x.c; ++ci)
          for (Index u = 0; u < k.kh; ++u)
            for (Index v = 0; v < k.kw; ++v) {
              const Index si = mod(i * stride + u - k.kh / 2, x.h);
              const Index sj = mod(j * stride + v - k.kw / 2, x.w);
              dst += k.at(o, ci, u, v) * x.data.row(x.row(si, sj, ci));
            }
      }
  return pool > 1 ? average_pool(out, pool) : out;
}

ConvActivations average_pool(const ConvActivations& x, Index pool) {
  if (pool < 1 || x.h % pool != 0 || x.w % pool != 0) throw FormatError("pool: window must tile the input");
  ConvActivations out(x.h / pool, x.w / pool, x.c, x.d);
  const double scale = 1.0 / double(pool * pool);
  for (Index i = 0; i < out.h; ++i)
    for (Index j = 0; j < out.w; ++j)
      for (Index ch = 0; ch < x.c; ++ch) {
        auto dst = out.data.row(out.row(i, j, ch));
        for (Index u = 0; u < pool; ++u)
          for (Index v = 0; v < pool; ++v) dst += scale * x.data.row(x.row(i * pool + u, j * pool + v, ch));
      }
  return out;
}

LayerPair translation_fixture(Index n, Index c, Index images, std::uint64_t seed, bool augment) {
  if (n < 1 || c < 1 || images < 1) throw FormatError("translation_fixture: sizes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ConvActivations in(n, n, c, images);
  for (Index r = 0; r < in.data.rows(); ++r)
    for (Index p = 0; p < images; ++p) in.data(r, p) = normal(rng);
  if (augment) in = augment_translations(in);
  const Index k = std::min<Index>(3, n);
  auto relu = [](ConvActivations t) {
    t.data = t.data.cwiseMax(0.0);
    return t;
  };
  LayerPair out;
  out.x = relu(circular_conv_forward(in, ConvKernel::random(c, c, k, k, seed + 1)));
  out.y = relu(circular_conv_forward(out.x, ConvKernel::random(c, c, k, k, seed + 2)));
  return out;
}

SpectralActivations dft_preprocess(const ConvActivations& acts) {
  if (!acts.square()) throw FormatError("dft_preprocess: channels must be square");
  SpectralActivations out(acts.h, acts.w, acts.c, acts.d);
  for (Index p = 0; p < acts.d; ++p)
    for (Index ch = 0; ch < acts.c; ++ch) {
      const MatrixXcd img = acts.channel(ch, p).cast<std::complex<double>>();
      out.set_channel(ch, p, linalg::dft2(img));
    }
  return out;
}

namespace {

void check_pair(const SpectralActivations& x, const SpectralActivations& y) {
  if (x.h != y.h || x.w != y.w) throw FormatError("spatial size mismatch");
  if (x.d != y.d) throw FormatError("datapoint count mismatch");
}

// Centered block rows for frequency f.
MatrixXcd centered_block(const SpectralActivations& t, Index f) { return center(t.data.middleRows(f * t.c, t.c)); }

}  // namespace

BlockCovariance block_covariance(const SpectralActivations& x, const SpectralActivations& y) {
  check_pair(x, y);
  BlockCovariance out;
  out.n = x.h;
  out.c1 = x.c;
  out.c2 = y.c;
  const Index nblocks = x.h * x.w;
  out.blocks.resize(static_cast<std::size_t>(nblocks));
  parallel_for(static_cast<std::size_t>(nblocks), [&](std::size_t f) {
    const auto cov = centered_covariances(centered_block(x, Index(f)), centered_block(y, Index(f)));
    auto& b = out.blocks[f];
    b.u = Index(f) / x.w;
    b.v = Index(f) % x.w;
    b.xx = cov.xx;
    b.xy = cov.xy;
    b.yy = cov.yy;
  });
  return out;
}

MatrixXcd dense_covariance(const SpectralActivations& x, const SpectralActivations& y) {
  check_pair(x, y);
  return centered_covariances(center(x.data), center(y.data)).xy;
}

BlockStructure block_structure(const MatrixXcd& cov, Index blocks, Index c1, Index c2) {
  if (cov.rows() != blocks * c1 || cov.cols() != blocks * c2) throw FormatError("covariance shape does not match blocks");
  BlockStructure s;
  for (Index i = 0; i < cov.rows(); ++i)
    for (Index j = 0; j < cov.cols(); ++j) {
      const double mag = std::abs(cov(i, j));
      if (i / c1 == j / c2)
        s.max_in_block = std::max(s.max_in_block, mag);
      else
        s.max_off_block = std::max(s.max_off_block, mag);
    }
  return s;
}

double mean_similarity(const DftCcaResult& r, Denominator denominator) {
  const Index denom = denominator == Denominator::retained ? std::min(r.kept_x, r.kept_y)
                                                           : std::min(r.original_x, r.original_y);
  return denom > 0 ? r.correlations.sum() / double(denom) : 0.0;
}

DftCcaResult dft_cca(const ConvActivations& l1, const ConvActivations& l2, const DftCcaOptions& opts) {
  check_threshold(opts.threshold);
  if (!l1.square() || !l2.square()) throw FormatError("dft_cca: channels must be square");
  if (l1.h != l2.h) throw FormatError("spatial size mismatch");
  if (l1.d != l2.d) throw FormatError("datapoint count mismatch");
  if (l1.d < 2) throw FormatError("dft_cca needs more than one datapoint");

  const SpectralActivations x = dft_preprocess(l1);
  const SpectralActivations y = dft_preprocess(l2);
  const Index nblocks = x.h * x.w;
  const auto nb = static_cast<std::size_t>(nblocks);

  // Per-block singular bases; these are the only decompositions of the data.
  std::vector<TruncatedBasis<std::complex<double>>> bx(nb), by(nb);
  parallel_for(nb, [&](std::size_t f) {
    bx[f] = singular_basis(x.data.middleRows(Index(f) * x.c, x.c));
    by[f] = singular_basis(y.data.middleRows(Index(f) * y.c, y.c));
  });

  // Probe neighbouring frequency pairs for cross-block covariance.
  double max_in = 0.0, max_off = 0.0;
  {
    std::vector<double> in_block(nb, 0.0), off_block(nb, 0.0);
    parallel_for(nb, [&](std::size_t f) {
      const MatrixXcd xf = centered_block(x, Index(f));
      in_block[f] = centered_cross_covariance(xf, centered_block(y, Index(f))).cwiseAbs().maxCoeff();
      for (const Index g : {(Index(f) + 1) % nblocks, (Index(f) + x.w) % nblocks}) {
        if (g == Index(f)) continue;
        off_block[f] = std::max(off_block[f], centered_cross_covariance(xf, centered_block(y, g)).cwiseAbs().maxCoeff());
      }
    });
    for (std::size_t f = 0; f < nb; ++f) {
      max_in = std::max(max_in, in_block[f]);
      max_off = std::max(max_off, off_block[f]);
    }
  }

  DftCcaResult r;
  r.exact = opts.mode == DftMode::exact;
  r.denominator = opts.denominator;
  r.original_x = nblocks * x.c;
  r.original_y = nblocks * y.c;
  r.probed_off_block_ratio = max_in > 0 ? max_off / max_in : 0.0;
  if (r.exact && r.probed_off_block_ratio > opts.exactness_tolerance)
    throw NumericalError("covariance is not block diagonal; inputs are not translation invariant (use approximate mode)");

  // Directions below sqrt(eps) of the layer's largest singular value are
  // numerically absent, matching the whitening floor of the dense path.
  auto significant_counts = [&](const std::vector<TruncatedBasis<std::complex<double>>>& bases) {
    double top = 0.0;
    for (const auto& b : bases)
      if (b.singular_values.size() > 0) top = std::max(top, b.singular_values(0));
    if (!(top > 0.0)) throw NumericalError("zero variance subspace");
    const double floor = std::sqrt(opts.cca.eps) * top;
    std::vector<Index> counts(bases.size(), 0);
    for (std::size_t f = 0; f < bases.size(); ++f)
      while (counts[f] < bases[f].singular_values.size() && bases[f].singular_values(counts[f]) >= floor) ++counts[f];
    return counts;
  };

  auto kept_counts = [&](const std::vector<TruncatedBasis<std::complex<double>>>& bases) {
    std::vector<Index> counts = significant_counts(bases);
    if (opts.scope == TruncationScope::per_block) {
      for (std::size_t f = 0; f < bases.size(); ++f)
        if (counts[f] > 0) counts[f] = std::min(counts[f], variance_cutoff(bases[f].singular_values, opts.threshold));
      return counts;
    }
    // Pooled: one cutoff over the union of all blocks' singular values. Ties
    // at the cutoff (conjugate-symmetric frequencies) are kept together.
    std::vector<double> all;
    for (const auto& b : bases)
      for (Index i = 0; i < b.singular_values.size(); ++i) all.push_back(b.singular_values(i));
    std::sort(all.begin(), all.end(), std::greater<>());
    const VectorXd pooled = Eigen::Map<const VectorXd>(all.data(), Index(all.size()));
    const double cutoff = pooled(variance_cutoff(pooled, opts.threshold) - 1) * (1.0 - 1e-9);
    for (std::size_t f = 0; f < bases.size(); ++f) {
      Index k = 0;
      while (k < counts[f] && bases[f].singular_values(k) >= cutoff) ++k;
      counts[f] = k;
    }
    return counts;
  };

  const std::vector<Index> kx = kept_counts(bx);
  const std::vector<Index> ky = kept_counts(by);

  r.blocks.resize(nb);
  parallel_for(nb, [&](std::size_t f) {
    auto& out = r.blocks[f];
    out.u = Index(f) / x.w;
    out.v = Index(f) % x.w;
    out.kept_x = kx[f];
    out.kept_y = ky[f];
    if (kx[f] == 0 || ky[f] == 0) return;
    retain(bx[f], kx[f]);
    retain(by[f], ky[f]);
    const auto res = cca(bx[f].reduced(), by[f].reduced(), opts.cca);
    out.correlations = res.correlations;
    out.transform_x = res.transform_x;
    out.transform_y = res.transform_y;
  });

  std::vector<double> all;
  for (const auto& b : r.blocks) {
    r.kept_x += b.kept_x;
    r.kept_y += b.kept_y;
    for (Index i = 0; i < b.correlations.size(); ++i) all.push_back(b.correlations(i));
  }
  std::sort(all.begin(), all.end(), std::greater<>());
  r.correlations = Eigen::Map<const VectorXd>(all.data(), Index(all.size()));
  r.mean_similarity = mean_similarity(r, opts.denominator);
  return r;
}

// ---------------------------------------------------------------------------
// Verification helpers
// ---------------------------------------------------------------------------

CirculantDeviation verify_circulant(const MatrixXcd& cov, Index n) {
  if (cov.rows() != n * n || cov.cols() != n * n) throw FormatError("verify_circulant: expected an n^2 x n^2 matrix");
  CirculantDeviation dev;
  auto shifted = [n](Index idx, Index a, Index b) { return mod(idx / n + a, n) * n + mod(idx % n + b, n); };
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b < n; ++b) {
      if (a == 0 && b == 0) continue;
      double worst = 0.0;
      for (Index i = 0; i < n * n; ++i)
        for (Index j = 0; j < n * n; ++j)
          worst = std::max(worst, std::abs(cov(i, j) - cov(shifted(i, a, b), shifted(j, a, b))));
      if (b == 0)
        dev.block_circulant = std::max(dev.block_circulant, worst);
      else
        dev.circulant_blocks = std::max(dev.circulant_blocks, worst);
    }
  return dev;
}

double verify_dft_diagonalizes(const MatrixXcd& a) {
  if (a.rows() != a.cols()) throw FormatError("verify_dft_diagonalizes: matrix must be square");
  const MatrixXcd f = linalg::dft_matrix(a.rows());
  MatrixXcd t = f * a * f.adjoint();
  t.diagonal().setZero();
  return t.size() > 0 ? t.cwiseAbs().maxCoeff() : 0.0;
}

double verify_dft2_diagonalizes(const MatrixXcd& a, Index n) {
  if (a.rows() != n * n || a.cols() != n * n) throw FormatError("verify_dft2_diagonalizes: expected an n^2 x n^2 matrix");
  const MatrixXcd f = linalg::dft_matrix(n);
  const MatrixXcd ff = Eigen::kroneckerProduct(f, f);
  MatrixXcd t = ff * a * ff.adjoint();
  t.diagonal().setZero();
  return t.cwiseAbs().maxCoeff();
}

MatrixXcd circulant(const VectorXcd& first_row) {
  const Index n = first_row.size();
  MatrixXcd a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = first_row(mod(j - i, n));
  return a;
}

VectorXcd vec(const MatrixXcd& m) { return Eigen::Map<const VectorXcd>(m.data(), m.size()); }

double kronecker_vec_residual(const MatrixXcd& a, const MatrixXcd& c, const MatrixXcd& b) {
  const VectorXcd lhs = vec(a * c * b);
  const MatrixXcd k = Eigen::kroneckerProduct(b.transpose(), a);
  const VectorXcd rhs = k * vec(c);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

}  // namespace svcca::conv
