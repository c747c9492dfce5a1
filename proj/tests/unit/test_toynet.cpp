#include <algorithm>

#include "helpers.hpp"
#include "oracles.hpp"
#include "svcca/analysis.hpp"
#include "svcca/toynet.hpp"

using namespace svcca;
using namespace svcca::toynet;

namespace {

// Central-difference check of every parameter gradient on a few entries.
void check_gradients(const Network& net, const MatrixXd& x, const MatrixXd& t, const std::vector<int>& labels,
                     TaskKind kind) {
  const auto g = net.gradients(x, t, labels, kind);
  for (std::size_t li = 0; li < net.parameters().size(); ++li) {
    const auto& p = net.parameters()[li];
    for (Index e : {Index(0), p.weight.size() / 2, p.weight.size() - 1}) {
      Network plus = net, minus = net;
      const double h = 1e-6;
      plus.parameters()[li].weight(e) += h;
      minus.parameters()[li].weight(e) -= h;
      const double fd = (plus.gradients(x, t, labels, kind).loss - minus.gradients(x, t, labels, kind).loss) / (2 * h);
      EXPECT_NEAR(g.params[li].weight(e), fd, 1e-6 * std::max(1.0, std::abs(fd))) << "layer " << li << " entry " << e;
    }
    Network plus = net, minus = net;
    plus.parameters()[li].bias(0) += 1e-6;
    minus.parameters()[li].bias(0) -= 1e-6;
    const double fd = (plus.gradients(x, t, labels, kind).loss - minus.gradients(x, t, labels, kind).loss) / 2e-6;
    EXPECT_NEAR(g.params[li].bias(0), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TrainConfig short_run(std::uint64_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.checkpoint_every = steps / 4;
  return c;
}

}  // namespace

TEST(ToyTask, DeterministicAndBounded) {
  const auto a = toy_regression_task(3), b = toy_regression_task(3);
  EXPECT_EQ(a.train_inputs, b.train_inputs);
  EXPECT_EQ(a.probe_inputs, b.probe_inputs);
  EXPECT_EQ(a.train_targets.cols(), kToyGridPoints);
  EXPECT_EQ(a.probe_inputs.cols(), kToyProbePoints);
  EXPECT_TRUE(a.train_targets.allFinite());
  EXPECT_LE(a.train_targets.cwiseAbs().maxCoeff(), 1.5);
  EXPECT_LE(a.probe_targets.cwiseAbs().maxCoeff(), 1.5);
  EXPECT_NE(toy_regression_task(4).probe_inputs, a.probe_inputs);
}

TEST(ToyTask, TargetFunctions) {
  const VectorXd t = toy_targets(0.5);
  EXPECT_DOUBLE_EQ(t(0), std::sin(1.5));
  EXPECT_DOUBLE_EQ(t(1), std::exp(-0.25));
  EXPECT_DOUBLE_EQ(t(2), std::abs(std::sin(1.0)) - 0.5);
  EXPECT_DOUBLE_EQ(t(3), std::tanh(1.0));
}

TEST(NetSpec, ShapesAndNames) {
  const auto mlp = NetSpec::toy_mlp(1, 20, 4);
  EXPECT_EQ(mlp.recorded_layers(), (std::vector<std::string>{"fc1", "fc2", "fc3", "fc4", "out"}));
  EXPECT_EQ(mlp.parameter_layers().size(), 5u);
  EXPECT_EQ(mlp.shapes().back().c, 4);
  const auto conv = NetSpec::tiny_convnet(1, 8, 1, 3);
  const auto shapes = conv.shapes();
  EXPECT_EQ(shapes.back().size(), 3);
  EXPECT_EQ(conv.recorded_layers(), (std::vector<std::string>{"conv1", "pool1", "conv2", "gap", "logits"}));
}

TEST(Network, DenseGradientsMatchFiniteDifferences) {
  const Network net(NetSpec::toy_mlp(2, 6, 2, 3));
  const auto task = toy_regression_task(1);
  check_gradients(net, task.train_inputs.leftCols(9), task.train_targets.topRows(3).leftCols(9), {}, TaskKind::regression);
}

TEST(Network, ConvGradientsMatchFiniteDifferences) {
  const Network net(NetSpec::tiny_convnet(3, 8, 1, 3, 2, 3));
  ConvTaskOptions o;
  o.n = 8;
  o.classes = {{{1, 0, 1.0, 0, 0.0}}, {{0, 1, 1.0, 0, 0.0}}, {{1, 1, 1.0, 0, 0.0}}};
  o.train_per_class = 2;
  o.probe_per_class = 1;
  const auto task = synthetic_conv_task(4, o);
  check_gradients(net, task.train_inputs.leftCols(5), MatrixXd(),
                  std::vector<int>(task.train_labels.begin(), task.train_labels.begin() + 5), TaskKind::classification);
}

TEST(Network, ProjectionWithFullBasisIsIdentity) {
  const Network net(NetSpec::toy_mlp(5, 12, 2));
  const auto x = toy_regression_task(1).probe_inputs.leftCols(20);
  const auto li = net.layer_index("fc2");
  const MatrixXd h = net.forward_all(x)[li];
  const VectorXd mean = h.rowwise().mean();
  EXPECT_LT((net.forward_projected(x, li, oracle::orthogonal(12, 3), mean) - net.forward(x)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Train, SameSeedIsDeterministic) {
  const auto task = toy_regression_task(1);
  const auto spec = NetSpec::toy_mlp(7, 16, 2);
  const auto a = train(spec, task, short_run(200)), b = train(spec, task, short_run(200));
  EXPECT_EQ(a.final().params, b.final().params);
  const auto s = analysis::compare(a.layer(a.final(), "fc2"), b.layer(b.final(), "fc2"));
  EXPECT_NEAR(s.mean_similarity, 1.0, 1e-8);
}

TEST(Train, CheckpointsAtScheduledSteps) {
  const auto set = train(NetSpec::toy_mlp(1, 8, 2), toy_regression_task(1), short_run(100));
  std::vector<std::uint64_t> steps;
  for (const auto& cp : set.checkpoints) steps.push_back(cp.step);
  EXPECT_EQ(steps, (std::vector<std::uint64_t>{0, 25, 50, 75, 100}));
  EXPECT_EQ(set.final().layers.size(), 3u);
  EXPECT_EQ(set.final().layers[0].dims, (std::vector<std::uint64_t>{8, kToyProbePoints}));
}

TEST(Train, BeatsUntrainedLossDistribution) {
  const auto task = toy_regression_task(1);
  std::vector<double> untrained;
  for (std::uint64_t s = 100; s < 120; ++s) {
    const Network net(NetSpec::toy_mlp(s, 32, 2));
    untrained.push_back(loss(net.forward(task.probe_inputs), task, true));
  }
  std::sort(untrained.begin(), untrained.end());
  const auto set = train(NetSpec::toy_mlp(1, 32, 2), task, short_run(1500));
  EXPECT_LT(set.final().probe_loss, untrained[2]);  // below the 10th percentile
}

TEST(Freeze, AllAtZeroKeepsInitialWeights) {
  const auto spec = NetSpec::toy_mlp(3, 8, 2);
  auto cfg = short_run(100);
  cfg.freeze = FreezeSchedule::all_at(spec.parameter_layers().size(), 0);
  const auto set = train(spec, toy_regression_task(1), cfg);
  EXPECT_EQ(set.final().params, set.checkpoints.front().params);
}

TEST(Freeze, LinearScheduleAndFlopTally) {
  const auto spec = NetSpec::toy_mlp(4, 16, 4);
  const auto sched = FreezeSchedule::linear(5, 400);
  ASSERT_EQ(sched.steps.size(), 5u);
  EXPECT_EQ(sched.steps[0], std::optional<std::uint64_t>(100));
  EXPECT_EQ(sched.steps[3], std::optional<std::uint64_t>(400));
  EXPECT_FALSE(sched.steps[4].has_value());
  EXPECT_EQ(FreezeSchedule::linear(5, 10).steps[0], std::optional<std::uint64_t>(3));  // ceil(10/4)
  auto cfg = short_run(400);
  cfg.checkpoint_every = 50;
  cfg.freeze = sched;
  const auto set = train(spec, toy_regression_task(1), cfg);
  const Parameters& at_freeze = set.checkpoints[2].params[0];  // step 100
  EXPECT_EQ(set.checkpoints[2].step, 100u);
  for (std::size_t c = 2; c < set.checkpoints.size(); ++c) EXPECT_EQ(set.checkpoints[c].params[0], at_freeze);
  EXPECT_NE(set.checkpoints[1].params[0], at_freeze);
  EXPECT_EQ(set.skipped_gradient_flops, predicted_skipped_flops(spec, sched, 400, cfg.batch_size));
  EXPECT_GT(set.skipped_gradient_flops, 0u);
}

TEST(Freeze, GradientFlopModel) {
  const Network net(NetSpec::toy_mlp(1, 10, 2, 4));
  // First layer (1 -> 10): weight grad only.
  EXPECT_EQ(net.gradient_flops(0, 8), std::uint64_t(2 * 10 * 8 * 1 + 10 * 8));
  // Hidden 10 -> 10: weight grad + input grad.
  EXPECT_EQ(net.gradient_flops(1, 8), std::uint64_t(2 * 10 * 8 * 10 + 10 * 8 + 2 * 10 * 10 * 8));
}

TEST(Freeze, ScheduleValidation) {
  FreezeSchedule s{{1, 2}};
  EXPECT_THROW(s.validate(3), FormatError);
  EXPECT_TRUE(s.frozen(0, 1));
  EXPECT_FALSE(s.frozen(0, 0));
}

TEST(ConvTask, LabelsShiftInvariantAndAugmentationIdempotent) {
  ConvTaskOptions o;
  o.train_per_class = 2;
  o.probe_per_class = 1;
  const auto task = synthetic_conv_task(5, o);
  const Index n = o.n;
  ASSERT_EQ(Index(task.train_labels.size()), 3 * 2 * n * n);
  // Datapoints come in blocks of n^2 shifts of one image, sharing a label.
  for (std::size_t b = 0; b < task.train_labels.size(); b += std::size_t(n * n))
    for (std::size_t s = 0; s < std::size_t(n * n); ++s) EXPECT_EQ(task.train_labels[b + s], task.train_labels[b]);
  conv::ConvActivations imgs(n, n, 1, task.train_inputs.cols());
  imgs.data = task.train_inputs;
  // Shifting the augmented set permutes its columns.
  const auto shifted = conv::shift(imgs, 2, 5);
  for (Index p = 0; p < 4; ++p) {
    bool found = false;
    for (Index q = 0; q < imgs.d && !found; ++q) found = (shifted.data.col(p) - imgs.data.col(q)).cwiseAbs().maxCoeff() == 0.0;
    EXPECT_TRUE(found);
  }
}

TEST(ConvTask, CoupledPhasesSurviveShifts) {
  // Similar classes share a power spectrum: the per-frequency magnitudes
  // average to the same values.
  ConvTaskOptions o;
  o.noise = 0.0;
  o.augment = false;
  o.train_per_class = 30;
  const auto task = synthetic_conv_task(6, o);
  Eigen::ArrayXd power[3];
  for (auto& p : power) p = Eigen::ArrayXd::Zero(o.n * o.n);
  for (Index j = 0; j < task.train_inputs.cols(); ++j) {
    const MatrixXcd img = Eigen::Map<const MatrixXd>(task.train_inputs.col(j).data(), o.n, o.n).transpose().cast<std::complex<double>>();
    const MatrixXcd f = linalg::dft2(img);
    power[task.train_labels[std::size_t(j)]] += Eigen::Map<const Eigen::ArrayXcd>(f.data(), f.size()).abs2() / 30.0;
  }
  EXPECT_LT((power[0] - power[1]).abs().maxCoeff(), 0.15 * power[0].maxCoeff());
  EXPECT_GT((power[0] - power[2]).abs().maxCoeff(), 0.3 * power[0].maxCoeff());
}

TEST(ConvTask, TinyConvnetLearns) {
  const auto task = synthetic_conv_task(1);
  const auto spec = NetSpec::tiny_convnet(1, 8, 1, 3);
  const auto set = train(spec, task, TrainConfig{1500, 0.1, 32, 500, std::nullopt});
  const Network net = network_at(set, set.final());
  EXPECT_GT(accuracy(net.forward(task.train_inputs), task.train_labels), 0.9);
}

TEST(Eval, FullWidthProjectionEqualsUnprojected) {
  const auto task = toy_regression_task(1);
  const auto set = train(NetSpec::toy_mlp(2, 16, 2), task, short_run(200));
  const MatrixXd basis = oracle::orthogonal(16, 1);
  const double full = eval(set, set.final(), task);
  EXPECT_NEAR(eval_with_projection(set, set.final(), "fc2", basis, 16, task), full, 1e-10);
  EXPECT_GE(eval_with_projection(set, set.final(), "fc2", basis, 1, task), full);
  EXPECT_THROW(eval_with_projection(set, set.final(), "fc2", basis, 0, task), FormatError);
}

TEST(Record, ConvDumpLayout) {
  MatrixXd out(2 * 2 * 3, 4);
  for (Index i = 0; i < out.size(); ++i) out(i) = double(i);
  const auto d = record_layer(out, Shape{2, 2, 3, true}, "c", 5);
  EXPECT_EQ(d.kind, tensorio::Kind::conv);
  EXPECT_EQ(d.dims, (std::vector<std::uint64_t>{2, 2, 3, 4}));
  EXPECT_EQ(d.values[1], out(0, 1));
  EXPECT_EQ(d.values[4], out(1, 0));
  EXPECT_EQ(d.step, std::optional<std::uint64_t>(5));
}
