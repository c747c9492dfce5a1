#include "fixtures.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "svcca/svcca.hpp"

using namespace svcca;

TEST(VarianceCutoff, DominantValue) {
  VectorXd s(3);
  s << 10, 0.001, 0.001;
  EXPECT_EQ(variance_cutoff(s, 0.99), 1);
}

TEST(VarianceCutoff, EqualSpectrumKeepsAll) { EXPECT_EQ(variance_cutoff(VectorXd(VectorXd::Ones(10)), 0.99), 10); }

TEST(VarianceCutoff, UsesSingularValuesNotEnergy) {
  VectorXd s(2);
  s << 3, 1;  // 75% of the sum, 90% of the energy
  EXPECT_EQ(variance_cutoff(s, 0.8), 2);
}

TEST(Truncate, NoiseDirectionsDropped) {
  const auto f = fixture::abc();
  const auto b = truncate_by_variance(f.b, 0.99);
  EXPECT_EQ(b.kept, 50);
  EXPECT_EQ(b.original, 200);
  EXPECT_GE(b.explained_fraction, 0.99);
  // Unambiguous crossing: 49 directions fall clearly short.
  const double total = b.singular_values.sum();
  EXPECT_LT(b.singular_values.head(49).sum() / total, 0.985);
  EXPECT_LT((b.directions * b.directions.transpose() - MatrixXd::Identity(50, 50)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Truncate, RejectsBadThresholdAndZeroVariance) {
  EXPECT_THROW(truncate_by_variance(oracle::gaussian(2, 5, 1), 0.0), FormatError);
  EXPECT_THROW(truncate_by_variance(oracle::gaussian(2, 5, 1), 1.5), FormatError);
  EXPECT_THROW(truncate_by_variance(MatrixXd::Ones(3, 5), 0.99), NumericalError);
}

TEST(Svcca, SelfSimilarityIsOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixXd x = oracle::gaussian(20, 300, seed);
    const auto r = svcca::svcca(x, x);
    EXPECT_NEAR(r.mean_similarity, 1.0, 1e-8);
    EXPECT_LT((r.correlations().array() - 1.0).abs().maxCoeff(), 1e-8);
  }
}

TEST(Svcca, RecoversPermutedScaledCopy) {
  const MatrixXd x = oracle::gaussian(10, 400, 3);
  MatrixXd y = x;
  y.row(0).swap(y.row(5));
  y.row(2) *= 4.0;
  y.row(7) *= 0.3;
  SvccaOptions all;
  all.threshold = 1.0;
  EXPECT_NEAR(svcca::svcca(x, y, all).mean_similarity, 1.0, 1e-8);
}

TEST(Svcca, AbcDiscrimination) {
  const auto f = fixture::abc();
  const auto ab = cca(f.a, f.b), ac = cca(f.a, f.c);
  ASSERT_EQ(ab.size(), 50);
  ASSERT_EQ(ac.size(), 50);
  EXPECT_GE(ab.correlations.minCoeff(), 0.99);
  EXPECT_GE(ac.correlations.minCoeff(), 0.99);
  EXPECT_LT((ab.correlations - ac.correlations).cwiseAbs().maxCoeff(), 1e-6);
  const auto sb = svcca::svcca(f.a, f.b), sc = svcca::svcca(f.a, f.c);
  EXPECT_EQ(sb.kept_y, 50);
  EXPECT_GE(sc.kept_y, 190);
}

TEST(Svcca, MeanSimilarityDenominators) {
  SvccaResult<double> r;
  r.cca.correlations = VectorXd(2);
  r.cca.correlations << 1, 1;
  r.kept_x = r.kept_y = 2;
  r.original_x = 4;
  r.original_y = 8;
  EXPECT_DOUBLE_EQ(mean_similarity(r, Denominator::retained), 1.0);
  EXPECT_DOUBLE_EQ(mean_similarity(r, Denominator::layer_size), 0.5);
  r.cca.correlations << 1, 0;
  EXPECT_DOUBLE_EQ(mean_similarity(r, Denominator::retained), 0.5);
}

TEST(Svcca, SymmetricInArguments) {
  const auto p = fixture::correlated(8, 12, 400, 5);
  const auto a = svcca::svcca(p.x, p.y), b = svcca::svcca(p.y, p.x);
  EXPECT_LT((a.correlations() - b.correlations()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(a.mean_similarity, b.mean_similarity, 1e-12);
}

TEST(Svcca, InvariantUnderScrambleWhenKeepingEverything) {
  const auto p = fixture::correlated(8, 12, 400, 6);
  SvccaOptions all;
  all.threshold = 1.0;
  const auto base = svcca::svcca(p.x, p.y, all);
  for (std::uint64_t t = 0; t < 5; ++t) {
    const auto r = svcca::svcca(p.x, fixture::scramble(p.y, t), all);
    EXPECT_LT((r.correlations() - base.correlations()).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Svcca, ValuesInUnitInterval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = fixture::correlated(6, 9, 200, seed);
    const auto r = svcca::svcca(p.x, p.y);
    EXPECT_GE(r.correlations().minCoeff(), 0.0);
    EXPECT_LE(r.correlations().maxCoeff(), 1.0);
    EXPECT_GE(r.mean_similarity, 0.0);
    EXPECT_LE(r.mean_similarity, 1.0);
  }
}

TEST(Svcca, NeuronLoadingsAreCovariances) {
  const auto p = fixture::correlated(6, 7, 300, 8);
  const auto r = svcca::svcca(p.x, p.y);
  const MatrixXd xc = center(p.x);
  const MatrixXd z = r.neuron_directions_x * xc;
  // Canonical variates equal aligned_x since the truncation is complete here.
  EXPECT_LT((z - r.cca.aligned_x).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((r.neuron_loadings_x - oracle::naive_cov(z, p.x)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Projection, FullRankIsIdentity) {
  const MatrixXd x = oracle::gaussian(6, 40, 1);
  const MatrixXd dirs = oracle::orthogonal(6, 2);
  EXPECT_LT((project_topk(x, dirs, 6) - x).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, ZeroKRejected) {
  EXPECT_THROW(project_topk(MatrixXd(MatrixXd::Ones(3, 4)), MatrixXd(MatrixXd::Identity(3, 3)), 0), FormatError);
}

TEST(Projection, RankAtMostK) {
  const MatrixXd x = oracle::gaussian(8, 50, 3);
  const MatrixXd y = project_topk(x, MatrixXd(oracle::gaussian(8, 8, 4)), 3);
  EXPECT_EQ(Eigen::FullPivLU<MatrixXd>(y).rank(), 3);
}

TEST(Projection, CanonicalBasisIsCompleteAndOrthonormal) {
  const auto p = fixture::correlated(10, 10, 300, 9);
  const auto r = svcca::svcca(p.x, p.y);
  const auto bx = truncate_by_variance(p.x);
  const MatrixXd q = canonical_neuron_basis(r.neuron_loadings_x, bx);
  ASSERT_EQ(q.rows(), 10);
  EXPECT_LT((q * q.transpose() - MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
  // First row spans the top canonical loading.
  const VectorXd l0 = r.neuron_loadings_x.row(0).normalized();
  EXPECT_NEAR(std::abs(q.row(0).dot(l0.transpose())), 1.0, 1e-10);
}

TEST(Baselines, FullWidthIsIdentity) {
  const MatrixXd x = oracle::gaussian(5, 20, 1);
  EXPECT_LT((neuron_subspace_baselines(x, 5, BaselineMode::random, 3) - x).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((neuron_subspace_baselines(x, 5, BaselineMode::max_activation, 3) - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Baselines, MaxActivationKeepsDominantNeuron) {
  MatrixXd x = oracle::gaussian(5, 20, 2);
  x.row(3) *= 100;
  const MatrixXd p = neuron_baseline_basis(x, 1, BaselineMode::max_activation, 0);
  EXPECT_EQ(p(0, 3), 1.0);
  EXPECT_EQ(p.sum(), 1.0);
}

TEST(Baselines, RandomIsSeededSelection) {
  const MatrixXd x = oracle::gaussian(30, 5, 2);
  const MatrixXd a = neuron_baseline_basis(x, 4, BaselineMode::random, 9);
  EXPECT_EQ(a, neuron_baseline_basis(x, 4, BaselineMode::random, 9));
  EXPECT_EQ(a.sum(), 4.0);
  EXPECT_EQ(a.colwise().sum().maxCoeff(), 1.0);
}

TEST(Baselines, DirectionWeightOrdering) {
  MatrixXd d(2, 3);
  d << 0, 3, 1, 0, 4, 0;
  const auto order = neurons_by_direction_weight(d);
  EXPECT_EQ(order, (std::vector<Index>{1, 2, 0}));
}
