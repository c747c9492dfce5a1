#include "fixtures.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "svcca/analysis.hpp"

using namespace svcca;
using namespace svcca::analysis;
using tensorio::ActivationDump;

namespace {

ActivationDump conv_dump(const conv::ConvActivations& t, const std::string& name) {
  ActivationDump d;
  d.kind = tensorio::Kind::conv;
  d.dims = {std::uint64_t(t.h), std::uint64_t(t.w), std::uint64_t(t.c), std::uint64_t(t.d)};
  d.layer_name = name;
  for (Index r = 0; r < t.data.rows(); ++r)
    for (Index p = 0; p < t.d; ++p) d.values.push_back(t.data(r, p));
  return d;
}

toynet::TrainConfig quick(std::uint64_t steps, std::uint64_t every) {
  toynet::TrainConfig c;
  c.steps = steps;
  c.checkpoint_every = every;
  return c;
}

// Small trained toy MLP shared by several tests.
const toynet::CheckpointSet& small_run() {
  static const auto set = toynet::train(toynet::NetSpec::toy_mlp(1, 24, 3), toynet::toy_regression_task(1), quick(1200, 300));
  return set;
}

}  // namespace

TEST(Compare, SameDumpIsOne) {
  const auto d = tensorio::make_dense(oracle::gaussian(5, 40, 1), "a");
  const auto s = compare(d, d);
  EXPECT_NEAR(s.mean_similarity, 1.0, 1e-8);
  EXPECT_EQ(s.mode, CompareMode::dense);
}

TEST(Compare, RoutingRules) {
  const auto f = conv::translation_fixture(4, 2, 3, 5);
  const auto cx = conv_dump(f.x, "conv"), cy = conv_dump(f.y, "conv2");
  const auto dense = tensorio::make_dense(oracle::gaussian(3, f.x.d, 2), "fc");
  EXPECT_EQ(compare(cx, cx).mode, CompareMode::same_layer);
  EXPECT_EQ(compare(cx, cy).mode, CompareMode::cross_layer);
  EXPECT_EQ(compare(cx, dense).mode, CompareMode::cross_layer);
  CompareOptions o;
  o.mode = CompareMode::cross_layer;
  const auto s = compare(dense, cx, o);
  EXPECT_EQ(s.original_y, 32);
  o.mode = CompareMode::dft;
  EXPECT_EQ(compare(cx, cy, o).mode, CompareMode::dft);
  o.mode = CompareMode::dense;
  EXPECT_THROW(compare(cx, dense, o), FormatError);
}

TEST(Compare, MismatchedDatapoints) {
  const auto a = tensorio::make_dense(oracle::gaussian(3, 10, 1), "a");
  const auto b = tensorio::make_dense(oracle::gaussian(3, 11, 1), "b");
  EXPECT_THROW_MSG(compare(a, b), FormatError, "datapoint count mismatch");
}

TEST(Compare, ModeAndDenominatorStrings) {
  for (auto m : {CompareMode::automatic, CompareMode::dense, CompareMode::same_layer, CompareMode::cross_layer, CompareMode::dft})
    EXPECT_EQ(parse_compare_mode(to_string(m)), m);
  EXPECT_EQ(parse_denominator(to_string(Denominator::layer_size)), Denominator::layer_size);
  EXPECT_THROW(parse_compare_mode("nope"), FormatError);
  EXPECT_THROW(parse_denominator("nope"), FormatError);
}

TEST(Grid, ValuesInRangeAndDiagonalOne) {
  std::vector<ActivationDump> layers;
  for (int i = 0; i < 3; ++i) layers.push_back(tensorio::make_dense(oracle::gaussian(4 + i, 60, 10 + std::uint64_t(i)), "l" + std::to_string(i)));
  const auto g = layer_grid(layers, layers);
  ASSERT_EQ(g.values.rows(), 3);
  EXPECT_GE(g.values.minCoeff(), 0.0);
  EXPECT_LE(g.values.maxCoeff(), 1.0);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(g.values(i, i), 1.0, 1e-8);
  EXPECT_EQ(g.rows, (std::vector<std::string>{"l0", "l1", "l2"}));
}

TEST(Dynamics, FinalDiagonalOneAndInitialLower) {
  const auto& set = small_run();
  const auto grids = dynamics_grid(timeline(set));
  ASSERT_EQ(grids.size(), set.checkpoints.size());
  for (Index i = 0; i < grids.back().values.rows(); ++i) EXPECT_NEAR(grids.back().values(i, i), 1.0, 1e-8);
  for (Index i = 0; i < grids.front().values.rows(); ++i) EXPECT_LT(grids.front().values(i, i), grids.back().values(i, i));
  for (const auto& g : grids) {
    EXPECT_GE(g.values.minCoeff(), 0.0);
    EXPECT_LE(g.values.maxCoeff(), 1.0);
  }
  const auto curves = convergence_curves(grids);
  EXPECT_LT((curves.values.col(curves.values.cols() - 1).array() - 1.0).abs().maxCoeff(), 1e-8);
  const auto steps = convergence_steps(curves, 0.9);
  EXPECT_EQ(steps.size(), curves.layers.size());
  for (double f : decrease_fractions(curves)) {
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}

TEST(Dynamics, MatchesPairwiseCompare) {
  const auto& set = small_run();
  const auto t = timeline(set);
  const auto grids = dynamics_grid(t);
  const auto direct = compare(t.layers[1][0], t.layers.back()[2]);
  EXPECT_NEAR(grids[1].values(0, 2), direct.mean_similarity, 1e-12);
}

TEST(Dynamics, ConvergenceStepsDefinition) {
  ConvergenceCurves c;
  c.layers = {"a", "b"};
  c.steps = {0, 10, 20};
  c.values = MatrixXd(2, 3);
  c.values << 0.5, 0.95, 1.0, 0.2, 0.7, 1.0;
  EXPECT_EQ(convergence_steps(c, 0.9), (std::vector<std::uint64_t>{10, 20}));
  c.values << 0.5, 0.4, 1.0, 0.2, 0.7, 1.0;
  EXPECT_EQ(decrease_fractions(c), (std::vector<double>{0.5, 0.0}));
}

TEST(Timeline, LoadFromManifestMatchesInMemory) {
  TempDir dir;
  const auto& set = small_run();
  tensorio::Manifest m{"mlp", set.dataset_id, toynet::kToyProbePoints, {}};
  for (const auto& cp : set.checkpoints) {
    tensorio::Checkpoint c{cp.step, {}};
    for (const auto& l : cp.layers) {
      const std::string rel = "step" + std::to_string(cp.step) + "_" + l.layer_name + ".svd";
      tensorio::write_dump(l, dir / rel);
      c.layers.push_back({l.layer_name, rel});
    }
    m.checkpoints.push_back(c);
  }
  const auto t = load_timeline(m, dir.path());
  const auto mem = timeline(set);
  EXPECT_EQ(t.steps, mem.steps);
  EXPECT_EQ(t.layers, mem.layers);
  auto broken = m;
  broken.checkpoints[1].layers.pop_back();
  EXPECT_THROW(load_timeline(broken, dir.path()), FormatError);
  EXPECT_THROW(load_timeline(tensorio::Manifest{"x", "y", 1, {}}, dir.path()), FormatError);
}

TEST(CrossModel, SelfDiagonalAndProbeMismatch) {
  const auto t = timeline(small_run());
  const auto g = cross_model_grid(t, t);
  for (Index i = 0; i < g.values.rows(); ++i) EXPECT_NEAR(g.values(i, i), 1.0, 1e-8);
  auto other = t;
  other.dataset_id = "something-else";
  EXPECT_THROW_MSG(cross_model_grid(t, other), FormatError, "probe dataset mismatch");
}

TEST(CrossModel, MlpVersusConvnet) {
  toynet::ConvTaskOptions o;
  o.train_per_class = 4;
  o.probe_per_class = 2;
  const auto task = toynet::synthetic_conv_task(2, o);
  toynet::NetSpec mlp;
  mlp.input = toynet::Shape{8, 8, 1, true};
  mlp.seed = 3;
  toynet::LayerSpec hidden;
  hidden.units = 16;
  hidden.name = "h1";
  toynet::LayerSpec act;
  act.kind = toynet::LayerKind::nonlinearity;
  act.name = "h1_act";
  toynet::LayerSpec out;
  out.units = 3;
  out.name = "logits";
  mlp.layers = {hidden, act, out};
  const auto a = toynet::train(mlp, task, quick(100, 50));
  const auto b = toynet::train(toynet::NetSpec::tiny_convnet(4, 8, 1, 3), task, quick(100, 50));
  const auto g = cross_model_grid(timeline(a), timeline(b));
  EXPECT_EQ(g.values.rows(), 3);
  EXPECT_EQ(g.values.cols(), 5);
  EXPECT_GE(g.values.minCoeff(), 0.0);
  EXPECT_LE(g.values.maxCoeff(), 1.0);
}

TEST(Sensitivity, LogitInLayerSpanIsOne) {
  const MatrixXd h = oracle::gaussian(6, 300, 1);
  const VectorXd logit = (oracle::gaussian(1, 6, 2) * h).transpose();
  EXPECT_NEAR(logit_similarity(logit, tensorio::make_dense(h, "h")), 1.0, 1e-8);
}

TEST(Sensitivity, NoiseLayerNearNull) {
  const MatrixXd noise = oracle::gaussian(10, 2000, 3);
  const MatrixXd logits = oracle::gaussian(2, 2000, 4);
  SensitivityOptions o;
  o.null_trials = 50;
  const auto s = class_sensitivity({tensorio::make_dense(noise, "noise")}, logits, o);
  for (Index c = 0; c < 2; ++c) {
    EXPECT_LT(s.values(c, 0), s.null_q95(c, 0) + 0.03);
    EXPECT_LT(std::abs(s.values(c, 0) - s.null_mean(c, 0)), 0.06);
  }
  // Shuffled nulls match an independent Monte-Carlo estimate of the same
  // quantity: max canonical correlation of 10 noise neurons with 1 noise row.
  const double q50 = oracle::null_max_rho_quantile(10, 1, 2000, 60, 0.5, 77);
  EXPECT_NEAR(s.null_mean(0, 0), q50, 0.02);
}

TEST(Sensitivity, DcBlockIsSpatialSum) {
  const auto f = conv::translation_fixture(4, 2, 4, 9);
  const auto layer = conv_dump(f.x, "x");
  MatrixXd dc = MatrixXd::Zero(2, f.x.d);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) dc += f.x.data.middleRows(f.x.row(i, j, 0), 2);
  const VectorXd logit = (dc.row(0) - 0.5 * dc.row(1)).transpose();
  EXPECT_NEAR(logit_similarity(logit, layer), 1.0, 1e-8);
}

TEST(Sensitivity, CurveDistanceIsMaxGap) {
  ClassSensitivity s;
  s.values = MatrixXd(2, 3);
  s.values << 0.1, 0.5, 0.9, 0.2, 0.2, 0.8;
  EXPECT_DOUBLE_EQ(curve_distance(s, 0, 1), 0.3);
  EXPECT_THROW(curve_distance(s, 0, 2), FormatError);
}

TEST(Compression, FullWidthPlanIsExact) {
  const MatrixXd w = oracle::gaussian(4, 10, 1);
  const VectorXd b = oracle::gaussian(4, 1, 2);
  const MatrixXd x = oracle::gaussian(10, 30, 3);
  const auto plan = build_compression_plan(w, b, x, oracle::orthogonal(10, 4), 10);
  EXPECT_LT((plan.apply(x) - ((w * x).colwise() + b)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_DOUBLE_EQ(plan.size_ratio, 1.0);
}

TEST(Compression, SizeRatioAndFolding) {
  const MatrixXd w = oracle::gaussian(5, 200, 5);
  const VectorXd b = VectorXd::Zero(5);
  const MatrixXd x = oracle::gaussian(200, 300, 6);
  const auto plan = build_compression_plan(w, b, x, oracle::orthogonal(200, 7), 70);
  EXPECT_DOUBLE_EQ(plan.size_ratio, 0.35);
  EXPECT_EQ(plan.parameter_count(), 70 * 205);
  const MatrixXd p = plan.projection;
  EXPECT_LT((p * p.transpose() - MatrixXd::Identity(70, 70)).cwiseAbs().maxCoeff(), 1e-12);
  const MatrixXd ref = ((w * p.transpose()) * (p * x)).colwise() + plan.bias;
  EXPECT_LT((plan.apply(x) - ref).cwiseAbs().maxCoeff(), 1e-12);
  // The mean is carried by the bias: a constant input at the mean is exact.
  const VectorXd mean = x.rowwise().mean();
  EXPECT_LT((plan.apply(mean) - w * mean - b).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(build_compression_plan(w, b, x, oracle::orthogonal(200, 7), 0), FormatError);
}

TEST(Compression, CompressedNetworkChainsPlans) {
  const auto& set = small_run();
  const auto net = toynet::network_at(set, set.final());
  const auto task = toynet::toy_regression_task(1);
  const auto outs = net.forward_all(task.probe_inputs);
  const auto li = net.layer_index("fc3");
  const MatrixXd acts = outs[li];
  const MatrixXd dirs = compression_directions(acts, acts);
  EXPECT_EQ(dirs.rows(), 24);
  const auto consumer = consumer_layer(net.spec(), "fc3");
  const auto pl = net.spec().parameter_layers();
  const auto slot = std::size_t(std::find(pl.begin(), pl.end(), consumer) - pl.begin());
  const auto& prm = net.parameters()[slot];
  const auto plan = build_compression_plan(prm.weight, prm.bias, acts, dirs, 24, "fc3");
  const auto full = compressed_network(net, {plan});
  EXPECT_LT((full.forward(task.probe_inputs) - net.forward(task.probe_inputs)).cwiseAbs().maxCoeff(), 1e-10);
  const auto small = build_compression_plan(prm.weight, prm.bias, acts, dirs, 8, "fc3");
  const auto cn = compressed_network(net, {small});
  const MatrixXd pre = cn.forward_all(task.probe_inputs)[consumer];
  EXPECT_LT((pre - small.apply(acts)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(consumer_layer(net.spec(), "out"), FormatError);
}
