#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "svcca/convdft.hpp"
#include "svcca/tensorio.hpp"

namespace svcca::toynet {

enum class LayerKind { dense, circular_conv, avg_pool, global_avg_pool, nonlinearity };
enum class Nonlinearity { tanh, relu };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Index units = 0;    ///< dense output width, or conv output channels
  Index kernel = 3;   ///< conv kernel side
  Index stride = 1;   ///< conv stride
  Index pool = 2;     ///< avg_pool window
  Nonlinearity nonlinearity = Nonlinearity::tanh;
  std::string name;   ///< non-empty: output recorded in checkpoints
};

/// Spatial shape of a layer's output; dense features are 1 x 1 x width.
struct Shape {
  Index h = 1, w = 1, c = 1;
  bool spatial = false;
  Index size() const { return h * w * c; }
  bool operator==(const Shape&) const = default;
};

struct NetSpec {
  Shape input;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;
  double first_layer_init = 1.0;  ///< weight scale of a first dense layer with a 1-D input

  /// Output shape after every layer; throws FormatError on incompatible layers.
  std::vector<Shape> shapes() const;
  /// Indices into `layers` of the parameterised (dense/conv) layers.
  std::vector<std::size_t> parameter_layers() const;
  /// Names of recorded layers, in depth order.
  std::vector<std::string> recorded_layers() const;

  /// 1 -> width x depth (tanh) -> outputs; hidden layers named fc1.., output "out".
  static NetSpec toy_mlp(std::uint64_t seed, Index width = 200, Index depth = 4, Index outputs = 4);
  /// conv(3x3) -> relu -> avgpool -> conv(3x3) -> relu -> global pool -> dense logits.
  static NetSpec tiny_convnet(std::uint64_t seed, Index n, Index in_channels, Index classes, Index c1 = 8, Index c2 = 8);
};

/// Parameters of one dense/conv layer. Dense: weight is out x in. Conv:
/// weight is out x (in*kh*kw) in ConvKernel order.
struct Parameters {
  MatrixXd weight;
  VectorXd bias;
  bool operator==(const Parameters&) const = default;
};

enum class TaskKind { regression, classification };

/// Inputs are features x datapoints (conv inputs use the ConvTensor row order).
struct Task {
  TaskKind kind = TaskKind::regression;
  Shape input_shape;
  MatrixXd train_inputs;
  MatrixXd train_targets;           ///< regression targets, outputs x N
  std::vector<int> train_labels;    ///< classification labels
  MatrixXd probe_inputs;
  MatrixXd probe_targets;
  std::vector<int> probe_labels;
  std::string dataset_id;
};

inline constexpr double kToyDomain = 6.283185307179586;  // x in [-2 pi, 2 pi]
inline constexpr Index kToyGridPoints = 2000;
inline constexpr Index kToyProbePoints = 500;

/// Four fixed target functions of one input: sin(3x), 2x exp(-x^2),
/// |sin(2x)| - 1/2 and tanh(2x). Training inputs are the 2000-point grid on
/// [-2 pi, 2 pi]; the probe set is 500 seeded uniform draws from the same
/// interval, sorted. Network inputs are x / (2 pi).
Task toy_regression_task(std::uint64_t seed);
VectorXd toy_targets(double x);

/// One plane wave. With harmonic == 0 its phase is drawn independently per
/// image. With harmonic h >= 1 the phase is h * phi + offset, phi being one
/// random phase shared by the image's coupled waves; for a wave at h times a
/// base frequency this relation survives every cyclic shift.
struct FrequencyComponent {
  Index u = 0, v = 0;
  double amplitude = 1.0;
  int harmonic = 0;
  double offset = 0.0;
};

/// Labeled n x n images whose class is fixed by spatial-frequency content:
/// each image is a sum of its class's plane waves with jittered amplitudes,
/// plus pixel noise. A cyclic shift only moves phases (coupled waves keep
/// their relation), so labels are shift invariant. `augment` expands both
/// splits with every cyclic shift.
struct ConvTaskOptions {
  Index n = 8;
  Index channels = 1;
  Index train_per_class = 24;
  Index probe_per_class = 8;
  bool augment = true;
  double noise = 0.3;
  /// One entry per class. Classes 0 and 1 share a power spectrum (a wave and
  /// its second harmonic) and differ only in the harmonic's phase offset;
  /// class 2 has a different spectrum.
  std::vector<std::vector<FrequencyComponent>> classes{
      {{1, 0, 1.0, 1, 0.0}, {2, 0, 1.0, 2, 0.0}},
      {{1, 0, 1.0, 1, 0.0}, {2, 0, 1.0, 2, 3.141592653589793}},
      {{1, 0, 1.0, 0, 0.0}, {3, 3, 1.0, 0, 0.0}},
  };
};
Task synthetic_conv_task(std::uint64_t seed, const ConvTaskOptions& opts = {});

class Network {
 public:
  explicit Network(NetSpec spec);  ///< seeded initialisation
  Network(NetSpec spec, std::vector<Parameters> params);

  const NetSpec& spec() const { return spec_; }
  const std::vector<Parameters>& parameters() const { return params_; }
  std::vector<Parameters>& parameters() { return params_; }

  MatrixXd forward(const MatrixXd& inputs) const;
  /// Outputs of every layer (index-aligned with spec().layers).
  std::vector<MatrixXd> forward_all(const MatrixXd& inputs) const;
  /// Forward pass with the output of `layer` replaced by
  /// mean + P^T P (h - mean), P having orthonormal rows over its neurons.
  MatrixXd forward_projected(const MatrixXd& inputs, std::size_t layer, const MatrixXd& projector,
                             const VectorXd& mean) const;

  struct Gradients {
    std::vector<Parameters> params;
    double loss = 0.0;
  };
  Gradients gradients(const MatrixXd& inputs, const MatrixXd& targets, const std::vector<int>& labels,
                      TaskKind kind) const;

  /// Per-step products saved by not computing this parameter layer's weight
  /// gradient and (above the first layer) its input gradient.
  std::uint64_t gradient_flops(std::size_t param_index, Index batch) const;

  std::size_t layer_index(const std::string& name) const;

 private:
  NetSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> param_layers_;
  std::vector<Parameters> params_;
};

/// Mean squared error (regression) or mean cross-entropy (classification).
double loss(const MatrixXd& outputs, const Task& task, bool probe);
double accuracy(const MatrixXd& logits, const std::vector<int>& labels);

/// Freeze step per parameter layer (nullopt: never frozen).
struct FreezeSchedule {
  std::vector<std::optional<std::uint64_t>> steps;

  void validate(std::size_t parameter_layers) const;
  bool frozen(std::size_t param_index, std::uint64_t step) const;

  /// Hidden parameter layer i (1-based) frozen at ceil(total_steps * i / hidden);
  /// the output layer is never frozen.
  static FreezeSchedule linear(std::size_t parameter_layers, std::uint64_t total_steps);
  static FreezeSchedule all_at(std::size_t parameter_layers, std::uint64_t step);
};

struct TrainConfig {
  std::uint64_t steps = 5000;
  double learning_rate = 0.05;
  Index batch_size = 64;
  std::uint64_t checkpoint_every = 250;
  std::optional<FreezeSchedule> freeze;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<tensorio::ActivationDump> layers;  ///< recorded layers over the probe set
  std::vector<Parameters> params;
  double probe_loss = 0.0;
};

struct CheckpointSet {
  NetSpec spec;
  std::string dataset_id;
  std::vector<Checkpoint> checkpoints;  ///< steps strictly increasing; first is step 0
  std::uint64_t skipped_gradient_flops = 0;

  const Checkpoint& final() const { return checkpoints.back(); }
  const tensorio::ActivationDump& layer(const Checkpoint& cp, const std::string& name) const;
};

tensorio::ActivationDump record_layer(const MatrixXd& outputs, const Shape& shape, const std::string& name,
                                      std::uint64_t step);

/// Plain minibatch SGD. Frozen layers have their updates masked, so their
/// weights stay bit-identical; the products a truncated backward pass would
/// skip are tallied in skipped_gradient_flops. Throws NumericalError if the
/// loss becomes non-finite.
CheckpointSet train(const NetSpec& spec, const Task& task, const TrainConfig& config);

/// Analytic skipped-gradient products for a schedule: sum over frozen layers
/// of (steps - freeze step) * per-step gradient cost.
std::uint64_t predicted_skipped_flops(const NetSpec& spec, const FreezeSchedule& schedule, std::uint64_t steps, Index batch);

/// Same architecture and task, two different seeds.
std::pair<CheckpointSet, CheckpointSet> two_inits_experiment(const NetSpec& spec, const Task& task,
                                                             const TrainConfig& config, std::uint64_t seed_a,
                                                             std::uint64_t seed_b);

Network network_at(const CheckpointSet& set, const Checkpoint& cp);

/// Probe-set loss (MSE or cross-entropy) after
/// replacing `layer`'s output by its projection onto the first k rows of
/// `directions` (orthonormalised). No retraining.
double eval_with_projection(const CheckpointSet& set, const Checkpoint& cp, const std::string& layer,
                            const MatrixXd& directions, Index k, const Task& task);

double eval(const CheckpointSet& set, const Checkpoint& cp, const Task& task);

}  // namespace svcca::toynet
