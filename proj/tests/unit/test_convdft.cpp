#include <chrono>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"
#include "svcca/convdft.hpp"

using namespace svcca;
using namespace svcca::conv;

namespace {

ConvActivations random_tensor(Index h, Index w, Index c, Index d, std::uint64_t seed) {
  ConvActivations t(h, w, c, d);
  t.data = oracle::gaussian(h * w * c, d, seed);
  return t;
}

std::multiset<std::vector<double>> columns(const MatrixXd& m) {
  std::multiset<std::vector<double>> s;
  for (Index p = 0; p < m.cols(); ++p) s.insert(std::vector<double>(m.col(p).data(), m.col(p).data() + m.rows()));
  return s;
}

VectorXd sorted_desc(VectorXd v) {
  std::sort(v.data(), v.data() + v.size(), std::greater<>());
  return v;
}

}  // namespace

TEST(Views, DegenerateSpatialMatchesDense) {
  const auto t = random_tensor(1, 1, 3, 7, 1);
  EXPECT_EQ(same_layer_view(t), t.data);
  EXPECT_EQ(cross_layer_view(t), t.data);
}

TEST(Views, SameLayerOrdering) {
  ConvActivations t(2, 2, 1, 3);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j)
      for (Index p = 0; p < 3; ++p) t(i, j, 0, p) = double(100 * i + 10 * j + p);
  const MatrixXd v = same_layer_view(t);
  ASSERT_EQ(v.rows(), 1);
  ASSERT_EQ(v.cols(), 12);
  const double expected[] = {0, 1, 2, 10, 11, 12, 100, 101, 102, 110, 111, 112};
  for (Index k = 0; k < 12; ++k) EXPECT_EQ(v(0, k), expected[k]);
}

TEST(Views, SameLayerRoundTrip) {
  const auto t = random_tensor(3, 2, 4, 5, 2);
  const auto back = from_same_layer_view(same_layer_view(t), 3, 2);
  EXPECT_EQ(back.data, t.data);
  EXPECT_EQ(back.c, 4);
}

TEST(Views, CrossLayerShape) {
  const auto t = random_tensor(2, 2, 2, 9, 3);
  EXPECT_EQ(cross_layer_view(t).rows(), 8);
  EXPECT_EQ(cross_layer_view(t).cols(), 9);
}

TEST(Views, CrossLayerSelfSimilarity) {
  const auto t = random_tensor(2, 2, 2, 40, 4);
  EXPECT_NEAR(svcca::svcca(cross_layer_view(t), cross_layer_view(t)).mean_similarity, 1.0, 1e-8);
}

TEST(Augment, OnePixelImagesUnchanged) {
  const auto t = random_tensor(1, 1, 2, 4, 5);
  EXPECT_EQ(augment_translations(t).data, t.data);
}

TEST(Augment, TwoByTwoShifts) {
  ConvActivations t(2, 2, 1, 1);
  t(0, 0, 0, 0) = 1;
  t(0, 1, 0, 0) = 2;
  t(1, 0, 0, 0) = 3;
  t(1, 1, 0, 0) = 4;
  const auto a = augment_translations(t);
  ASSERT_EQ(a.d, 4);
  const MatrixXd s11 = a.channel(0, 3);  // shift (1, 1)
  EXPECT_EQ(s11(0, 0), 4);
  EXPECT_EQ(s11(0, 1), 3);
  EXPECT_EQ(s11(1, 0), 2);
  EXPECT_EQ(s11(1, 1), 1);
}

TEST(Augment, ClosedUnderShifts) {
  const auto t = random_tensor(3, 3, 2, 2, 6);
  const auto once = augment_translations(t);
  const auto twice = augment_translations(once);
  // Every image of `twice` appears n^2 times as often as in `once`.
  const auto s1 = columns(once.data), s2 = columns(twice.data);
  for (const auto& col : s1) EXPECT_EQ(s2.count(col), 9 * s1.count(col));
  for (Index a = 0; a < 3; ++a)
    for (Index b = 0; b < 3; ++b) EXPECT_EQ(columns(shift(once, a, b).data), s1);
}

TEST(Conv, IdentityKernelCopies) {
  const auto t = random_tensor(4, 4, 3, 2, 7);
  EXPECT_LT((circular_conv_forward(t, ConvKernel::identity(3)).data - t.data).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Conv, ConstantImageStaysConstant) {
  ConvActivations t(5, 5, 2, 1);
  t.data.setConstant(1.5);
  const auto out = circular_conv_forward(t, ConvKernel::random(3, 2, 3, 3, 8));
  for (Index ch = 0; ch < 3; ++ch) {
    const MatrixXd img = out.channel(ch, 0);
    EXPECT_LT((img.array() - img(0, 0)).abs().maxCoeff(), 1e-14);
  }
}

TEST(Conv, ShiftEquivarianceAllShifts) {
  const auto t = random_tensor(8, 8, 1, 1, 9);
  const auto k = ConvKernel::random(1, 1, 3, 3, 10);
  const auto base = circular_conv_forward(t, k);
  double worst = 0;
  for (Index a = 0; a < 8; ++a)
    for (Index b = 0; b < 8; ++b)
      worst = std::max(worst, (circular_conv_forward(shift(t, a, b), k).data - shift(base, a, b).data).cwiseAbs().maxCoeff());
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv, StridedAndPooledEquivariance) {
  const auto t = random_tensor(8, 8, 2, 1, 11);
  const auto k = ConvKernel::random(2, 2, 3, 3, 12);
  const auto base = circular_conv_forward(t, k, 2, 2);
  ASSERT_EQ(base.h, 2);
  EXPECT_LT((circular_conv_forward(shift(t, 4, 4), k, 2, 2).data - shift(base, 1, 1).data).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Conv, MatchesDirectLoop) {
  const auto t = random_tensor(4, 4, 2, 1, 13);
  const auto k = ConvKernel::random(1, 2, 3, 3, 14);
  const auto out = circular_conv_forward(t, k);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      double s = k.bias[0];
      for (Index c = 0; c < 2; ++c)
        for (Index u = 0; u < 3; ++u)
          for (Index v = 0; v < 3; ++v) s += k.at(0, c, u, v) * t((i + u + 3) % 4, (j + v + 3) % 4, c, 0);
      EXPECT_NEAR(out(i, j, 0, 0), s, 1e-13);
    }
}

TEST(DftPreprocess, ParsevalPerChannel) {
  const auto t = random_tensor(4, 4, 3, 5, 15);
  const auto f = dft_preprocess(t);
  for (Index p = 0; p < 5; ++p)
    for (Index ch = 0; ch < 3; ++ch) EXPECT_NEAR(f.channel(ch, p).squaredNorm(), t.channel(ch, p).squaredNorm(), 1e-10);
}

TEST(DftPreprocess, PreservesCcaOfCrossLayerViews) {
  const auto l1 = random_tensor(4, 4, 1, 60, 16);
  const auto l2 = circular_conv_forward(l1, ConvKernel::random(1, 1, 3, 3, 17));
  auto l2n = l2;
  l2n.data += 0.5 * oracle::gaussian(16, 60, 18);
  const auto raw = cca(cross_layer_view(l1), cross_layer_view(l2n));
  const auto spec = cca(cross_layer_view(dft_preprocess(l1)), cross_layer_view(dft_preprocess(l2n)));
  EXPECT_LT((sorted_desc(raw.correlations) - sorted_desc(spec.correlations)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BlockCovariance, AugmentedFixtureIsBlockDiagonal) {
  for (Index n : {4, 8})
    for (Index c : {1, 2}) {
      const auto f = translation_fixture(n, c, 6, 20 + std::uint64_t(n + c));
      const auto x = dft_preprocess(f.x), y = dft_preprocess(f.y);
      EXPECT_LT(block_structure(dense_covariance(x, y), n * n, c, c).ratio(), 1e-9) << n << "," << c;
      EXPECT_LT(block_structure(dense_covariance(x, x), n * n, c, c).ratio(), 1e-9);
    }
}

TEST(BlockCovariance, BlocksMatchDenseDiagonal) {
  const auto f = translation_fixture(4, 2, 5, 30);
  const auto x = dft_preprocess(f.x), y = dft_preprocess(f.y);
  const auto dense = dense_covariance(x, y);
  const auto bc = block_covariance(x, y);
  ASSERT_EQ(bc.blocks.size(), 16u);
  for (const auto& b : bc.blocks) {
    const Index f0 = (b.u * 4 + b.v) * 2;
    EXPECT_LT((b.xy - dense.block(f0, f0, 2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BlockCovariance, NoAugmentationLeavesOffBlockMass) {
  const auto f = translation_fixture(4, 2, 40, 31, false);
  const auto x = dft_preprocess(f.x);
  EXPECT_GT(block_structure(dense_covariance(x, x), 16, 2, 2).ratio(), 1e-3);
}

TEST(BlockCovariance, SingleChannelDiagonal) {
  const auto f = translation_fixture(8, 1, 4, 32);
  const auto x = dft_preprocess(f.x);
  const MatrixXcd cov = dense_covariance(x, x);
  const double diag = cov.diagonal().cwiseAbs().maxCoeff();
  MatrixXcd off = cov;
  off.diagonal().setZero();
  EXPECT_LT(off.cwiseAbs().maxCoeff(), 1e-9 * diag);
}

TEST(DftCca, SelfSimilarity) {
  const auto f = translation_fixture(4, 2, 6, 40);
  EXPECT_NEAR(dft_cca(f.x, f.x).mean_similarity, 1.0, 1e-8);
}

TEST(DftCca, MatchesDenseOracleKeepingEverything) {
  const auto f = translation_fixture(4, 2, 6, 41);
  DftCcaOptions opts;
  opts.threshold = 1.0;
  const auto fast = dft_cca(f.x, f.y, opts);
  SvccaOptions dense_opts;
  dense_opts.threshold = 1.0;
  const auto dense = svcca::svcca(cross_layer_view(f.x), cross_layer_view(f.y), dense_opts);
  ASSERT_EQ(fast.correlations.size(), dense.correlations().size());
  EXPECT_LT((fast.correlations - sorted_desc(dense.correlations())).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_TRUE(fast.exact);
}

TEST(DftCca, ExactModeRejectsNonInvariantData) {
  const auto f = translation_fixture(4, 2, 40, 42, false);
  EXPECT_THROW(dft_cca(f.x, f.y), NumericalError);
  DftCcaOptions approx;
  approx.mode = DftMode::approximate;
  const auto r = dft_cca(f.x, f.y, approx);
  EXPECT_FALSE(r.exact);
  EXPECT_GT(r.probed_off_block_ratio, 0.0);
}

TEST(DftCca, PooledScopeAndDenominators) {
  const auto f = translation_fixture(4, 2, 6, 43);
  DftCcaOptions opts;
  opts.scope = TruncationScope::pooled;
  const auto r = dft_cca(f.x, f.y, opts);
  EXPECT_GT(r.mean_similarity, 0.0);
  EXPECT_LE(r.mean_similarity, 1.0);
  EXPECT_LE(mean_similarity(r, Denominator::layer_size), mean_similarity(r, Denominator::retained) + 1e-12);
}

TEST(DftCca, BlockPathUsesFarFewerFlops) {
  const auto f = translation_fixture(8, 4, 2, 44);
  linalg::FlopTally fast, dense;
  {
    linalg::FlopScope s(fast);
    dft_cca(f.x, f.y);
  }
  {
    linalg::FlopScope s(dense);
    svcca::svcca(cross_layer_view(f.x), cross_layer_view(f.y));
  }
  EXPECT_GT(fast.transforms.load(), 0u);
  EXPECT_LT(double(fast.total()), double(dense.total()) / 5.0);
}

TEST(Verify, CirculantInputHasNoDeviation) {
  const Index n = 4;
  // 2-D circulant: cov((i,j),(k,l)) = g((k-i) mod n, (l-j) mod n).
  const MatrixXd g = oracle::gaussian(n, n, 50);
  MatrixXcd cov(n * n, n * n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k)
        for (Index l = 0; l < n; ++l) cov(i * n + j, k * n + l) = g((k - i + n) % n, (l - j + n) % n);
  EXPECT_LT(verify_circulant(cov, n).max(), 1e-15);
  EXPECT_LT(verify_dft2_diagonalizes(cov, n), 1e-12 * cov.cwiseAbs().maxCoeff());
  cov(0, 1) += 0.5;
  EXPECT_GT(verify_circulant(cov, n).max(), 0.1);
}

TEST(Verify, AugmentedFixtureCovarianceIsCirculant) {
  const auto f = translation_fixture(4, 1, 6, 51);
  const MatrixXd xc = center(cross_layer_view(f.x));
  const MatrixXcd cov = (xc * xc.transpose() / double(xc.cols() - 1)).cast<std::complex<double>>();
  EXPECT_LT(verify_circulant(cov, 4).max(), 1e-9 * cov.cwiseAbs().maxCoeff());
  const auto g = translation_fixture(4, 1, 30, 52, false);
  const MatrixXd gc = center(cross_layer_view(g.x));
  const MatrixXcd gcov = (gc * gc.transpose() / double(gc.cols() - 1)).cast<std::complex<double>>();
  EXPECT_GT(verify_circulant(gcov, 4).max(), 0.0);
}

TEST(Verify, DftDiagonalizesCirculant) {
  EXPECT_LT(verify_dft_diagonalizes(MatrixXcd::Identity(8, 8)), 1e-15);
  const VectorXcd row = oracle::gaussian(8, 1, 53).cast<std::complex<double>>();
  const MatrixXcd a = circulant(row);
  EXPECT_EQ(a(1, 2), row(1));
  EXPECT_EQ(a(3, 0), row(5));
  EXPECT_LT(verify_dft_diagonalizes(a), 1e-10 * a.cwiseAbs().maxCoeff());
}

TEST(Verify, OffDiagonalGrowsWithPerturbation) {
  const MatrixXcd a = circulant(oracle::gaussian(8, 1, 54).cast<std::complex<double>>());
  const MatrixXcd e = oracle::gaussian(8, 8, 55).cast<std::complex<double>>();
  double prev = verify_dft_diagonalizes(a);
  for (double eps : {1e-6, 1e-4, 1e-2, 1.0}) {
    const double now = verify_dft_diagonalizes(a + eps * e);
    EXPECT_GT(now, prev);
    prev = now;
  }
}

TEST(Verify, KroneckerVecIdentity) {
  const MatrixXcd a = oracle::gaussian(3, 4, 60).cast<std::complex<double>>();
  const MatrixXcd c = oracle::gaussian(4, 5, 61).cast<std::complex<double>>();
  const MatrixXcd b = oracle::gaussian(5, 2, 62).cast<std::complex<double>>();
  EXPECT_LT(kronecker_vec_residual(a, c, b), 1e-12);
  MatrixXcd m(2, 2);
  m << 1.0, 2.0, 3.0, 4.0;
  const VectorXcd v = vec(m);
  EXPECT_EQ(v(1), std::complex<double>(3.0));
}
