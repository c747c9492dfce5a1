#include "svcca/svcca.hpp"

#include <algorithm>
#include <random>

namespace svcca {

MatrixXd neuron_baseline_basis(const MatrixXd& x, Index k, BaselineMode mode, std::uint64_t seed) {
  const Index m = x.rows();
  if (k < 1 || k > m) throw FormatError("k out of range");
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  if (mode == BaselineMode::random) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    const VectorXd rms = (x.rowwise().squaredNorm() / double(std::max<Index>(x.cols(), 1))).cwiseSqrt();
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return rms(a) > rms(b); });
  }
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  MatrixXd p = MatrixXd::Zero(k, m);
  for (Index i = 0; i < k; ++i) p(i, order[static_cast<std::size_t>(i)]) = 1.0;
  return p;
}

MatrixXd neuron_subspace_baselines(const MatrixXd& x, Index k, BaselineMode mode, std::uint64_t seed) {
  const MatrixXd p = neuron_baseline_basis(x, k, mode, seed);
  return p.transpose() * (p * x);
}

std::vector<Index> neurons_by_direction_weight(const MatrixXd& neuron_directions) {
  const VectorXd weight = neuron_directions.colwise().norm().transpose();
  std::vector<Index> order(static_cast<std::size_t>(weight.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return weight(a) > weight(b); });
  return order;
}

}  // namespace svcca
