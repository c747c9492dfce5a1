#pragma once

// Fixtures shared by unit tests and the acceptance binary.

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"

namespace fixture {

using Eigen::Index;
using Eigen::MatrixXd;

/// Three subspaces over d datapoints. A: 50 signal neurons. B: the same 50
/// signals plus 150 noise directions at 1e-3 scale. C: the 50 signals plus
/// 150 further unit-scale independent signals. Each is mixed by its own
/// random orthogonal matrix so no neuron is axis aligned.
struct Abc {
  MatrixXd a, b, c;
};

inline Abc abc(Index d = 1000, std::uint64_t seed = 42) {
  const MatrixXd s = oracle::gaussian(50, d, seed);
  MatrixXd b(200, d), c(200, d);
  b << s, 1e-3 * oracle::gaussian(150, d, seed + 1);
  c << s, oracle::gaussian(150, d, seed + 2);
  return {oracle::orthogonal(50, seed + 3) * s, oracle::orthogonal(200, seed + 4) * b,
          oracle::orthogonal(200, seed + 5) * c};
}

/// Y sharing `shared` latent signals with X (unequal strengths), plus noise.
struct Pair {
  MatrixXd x, y;
};

inline Pair correlated(Index m1, Index m2, Index d, std::uint64_t seed, Index shared = 4) {
  const MatrixXd z = oracle::gaussian(shared, d, seed);
  MatrixXd x = oracle::gaussian(m1, d, seed + 1);
  MatrixXd y = oracle::gaussian(m2, d, seed + 2);
  for (Index i = 0; i < shared; ++i) {
    const double w = 3.0 / double(i + 1);
    x.row(i) += w * z.row(i);
    y.row(i) += w * z.row(i);
  }
  return {oracle::orthogonal(m1, seed + 3) * x, y};
}

/// Permutation * positive diagonal * orthogonal, applied to the neurons.
inline MatrixXd scramble(const MatrixXd& x, std::uint64_t seed) {
  const Index m = x.rows();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(0.2, 5.0);
  std::vector<Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), Index(0));
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixXd p = MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i) p(i, perm[std::size_t(i)]) = 1.0;
  Eigen::VectorXd diag(m);
  for (Index i = 0; i < m; ++i) diag(i) = scale(rng);
  return p * diag.asDiagonal() * oracle::orthogonal(m, seed + 17) * x;
}

}  // namespace fixture
