#include "svcca/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace svcca::toynet {

namespace {

bool has_params(LayerKind k) { return k == LayerKind::dense || k == LayerKind::circular_conv; }

conv::ConvActivations as_tensor(const MatrixXd& m, const Shape& s) {
  conv::ConvActivations t;
  t.h = s.h;
  t.w = s.w;
  t.c = s.c;
  t.d = m.cols();
  t.data = m;
  return t;
}

conv::ConvKernel as_kernel(const Parameters& p, const LayerSpec& spec, Index in_channels) {
  conv::ConvKernel k(spec.units, in_channels, spec.kernel, spec.kernel);
  for (Index o = 0; o < spec.units; ++o) {
    for (Index j = 0; j < p.weight.cols(); ++j) k.weights[static_cast<std::size_t>(o * p.weight.cols() + j)] = p.weight(o, j);
    k.bias[static_cast<std::size_t>(o)] = p.bias(o);
  }
  return k;
}

Index mod(Index a, Index n) { return ((a % n) + n) % n; }

MatrixXd apply_nonlinearity(const MatrixXd& z, Nonlinearity f) {
  return f == Nonlinearity::tanh ? MatrixXd(z.array().tanh()) : MatrixXd(z.cwiseMax(0.0));
}

MatrixXd global_pool(const MatrixXd& a, const Shape& in) {
  MatrixXd out = MatrixXd::Zero(in.c, a.cols());
  for (Index pix = 0; pix < in.h * in.w; ++pix) out += a.middleRows(pix * in.c, in.c);
  return out / double(in.h * in.w);
}

MatrixXd softmax(const MatrixXd& logits) {
  MatrixXd p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp();
  return p.array().rowwise() / p.colwise().sum().array();
}

}  // namespace

// ---------------------------------------------------------------------------
// NetSpec
// ---------------------------------------------------------------------------

std::vector<Shape> NetSpec::shapes() const {
  std::vector<Shape> out;
  Shape s = input;
  if (s.size() < 1) throw FormatError("network input must be non-empty");
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::dense:
        if (l.units < 1) throw FormatError("dense layer needs units >= 1");
        s = Shape{1, 1, l.units, false};
        break;
      case LayerKind::circular_conv:
        if (!s.spatial) throw FormatError("conv layer needs a spatial input");
        if (l.units < 1 || l.kernel < 1 || l.kernel > s.h || l.kernel > s.w) throw FormatError("bad conv layer");
        if (l.stride < 1 || s.h % l.stride || s.w % l.stride) throw FormatError("conv stride must divide input size");
        s = Shape{s.h / l.stride, s.w / l.stride, l.units, true};
        break;
      case LayerKind::avg_pool:
        if (!s.spatial || l.pool < 1 || s.h % l.pool || s.w % l.pool) throw FormatError("pool window must tile the input");
        s = Shape{s.h / l.pool, s.w / l.pool, s.c, true};
        break;
      case LayerKind::global_avg_pool:
        if (!s.spatial) throw FormatError("global pool needs a spatial input");
        s = Shape{1, 1, s.c, false};
        break;
      case LayerKind::nonlinearity:
        break;
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> NetSpec::parameter_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (has_params(layers[i].kind)) idx.push_back(i);
  return idx;
}

std::vector<std::string> NetSpec::recorded_layers() const {
  std::vector<std::string> names;
  for (const auto& l : layers)
    if (!l.name.empty()) names.push_back(l.name);
  return names;
}

namespace {

LayerSpec layer(LayerKind kind, Index units = 0, std::string name = {}) {
  LayerSpec l;
  l.kind = kind;
  l.units = units;
  l.name = std::move(name);
  return l;
}

LayerSpec activation(Nonlinearity f, std::string name) {
  LayerSpec l = layer(LayerKind::nonlinearity, 0, std::move(name));
  l.nonlinearity = f;
  return l;
}

}  // namespace

NetSpec NetSpec::toy_mlp(std::uint64_t seed, Index width, Index depth, Index outputs) {
  NetSpec s;
  s.input = Shape{1, 1, 1, false};
  s.seed = seed;
  s.first_layer_init = 4.0;
  for (Index i = 1; i <= depth; ++i) {
    s.layers.push_back(layer(LayerKind::dense, width));
    s.layers.push_back(activation(Nonlinearity::tanh, "fc" + std::to_string(i)));
  }
  s.layers.push_back(layer(LayerKind::dense, outputs, "out"));
  return s;
}

NetSpec NetSpec::tiny_convnet(std::uint64_t seed, Index n, Index in_channels, Index classes, Index c1, Index c2) {
  NetSpec s;
  s.input = Shape{n, n, in_channels, true};
  s.seed = seed;
  s.layers.push_back(layer(LayerKind::circular_conv, c1));
  s.layers.push_back(activation(Nonlinearity::relu, "conv1"));
  s.layers.push_back(layer(LayerKind::avg_pool, 0, "pool1"));
  s.layers.push_back(layer(LayerKind::circular_conv, c2));
  s.layers.push_back(activation(Nonlinearity::relu, "conv2"));
  s.layers.push_back(layer(LayerKind::global_avg_pool, 0, "gap"));
  s.layers.push_back(layer(LayerKind::dense, classes, "logits"));
  return s;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

VectorXd toy_targets(double x) {
  VectorXd t(4);
  t << std::sin(3.0 * x), 2.0 * x * std::exp(-x * x), std::abs(std::sin(2.0 * x)) - 0.5, std::tanh(2.0 * x);
  return t;
}

Task toy_regression_task(std::uint64_t seed) {
  Task task;
  task.kind = TaskKind::regression;
  task.input_shape = Shape{1, 1, 1, false};
  task.train_inputs.resize(1, kToyGridPoints);
  task.train_targets.resize(4, kToyGridPoints);
  for (Index i = 0; i < kToyGridPoints; ++i) {
    const double x = -kToyDomain + 2.0 * kToyDomain * double(i) / double(kToyGridPoints - 1);
    task.train_inputs(0, i) = x / kToyDomain;
    task.train_targets.col(i) = toy_targets(x);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-kToyDomain, kToyDomain);
  std::vector<double> xs(static_cast<std::size_t>(kToyProbePoints));
  for (auto& x : xs) x = uniform(rng);
  std::sort(xs.begin(), xs.end());
  task.probe_inputs.resize(1, kToyProbePoints);
  task.probe_targets.resize(4, kToyProbePoints);
  for (Index i = 0; i < kToyProbePoints; ++i) {
    task.probe_inputs(0, i) = xs[static_cast<std::size_t>(i)] / kToyDomain;
    task.probe_targets.col(i) = toy_targets(xs[static_cast<std::size_t>(i)]);
  }
  task.dataset_id = "toy-regression/seed=" + std::to_string(seed);
  return task;
}

Task synthetic_conv_task(std::uint64_t seed, const ConvTaskOptions& opts) {
  if (opts.n < 1 || opts.n > 16) throw FormatError("synthetic_conv_task: n must be in [1, 16]");
  if (opts.classes.empty()) throw FormatError("synthetic_conv_task: need at least one class");
  const Index n = opts.n;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  std::normal_distribution<double> noise(0.0, opts.noise);

  auto make = [&](Index per_class, std::vector<int>& labels) {
    const Index classes = Index(opts.classes.size());
    conv::ConvActivations imgs(n, n, opts.channels, per_class * classes);
    Index p = 0;
    for (Index k = 0; k < per_class; ++k)
      for (Index cls = 0; cls < classes; ++cls, ++p) {
        labels.push_back(int(cls));
        for (Index ch = 0; ch < opts.channels; ++ch) {
          for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) imgs(i, j, ch, p) = noise(rng);
          const double shared = phase(rng);
          for (const auto& comp : opts.classes[static_cast<std::size_t>(cls)]) {
            const double a = comp.amplitude * jitter(rng);
            const double phi = comp.harmonic > 0 ? comp.harmonic * shared + comp.offset : phase(rng);
            for (Index i = 0; i < n; ++i)
              for (Index j = 0; j < n; ++j)
                imgs(i, j, ch, p) += a * std::cos(2.0 * std::numbers::pi * double(comp.u * i + comp.v * j) / double(n) + phi);
          }
        }
      }
    if (!opts.augment) return imgs;
    const Index shifts = n * n;
    std::vector<int> expanded;
    for (int l : labels)
      for (Index s = 0; s < shifts; ++s) expanded.push_back(l);
    labels = std::move(expanded);
    return conv::augment_translations(imgs);
  };

  Task task;
  task.kind = TaskKind::classification;
  task.input_shape = Shape{n, n, opts.channels, true};
  task.train_inputs = make(opts.train_per_class, task.train_labels).data;
  task.probe_inputs = make(opts.probe_per_class, task.probe_labels).data;
  std::ostringstream id;
  id << "synthetic-conv/seed=" << seed << "/n=" << n << "/classes=" << opts.classes.size()
     << (opts.augment ? "/augmented" : "");
  task.dataset_id = id.str();
  return task;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(NetSpec spec) : spec_(std::move(spec)), shapes_(spec_.shapes()), param_layers_(spec_.parameter_layers()) {
  std::mt19937_64 rng(spec_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t li : param_layers_) {
    const auto& l = spec_.layers[li];
    const Shape in = li == 0 ? spec_.input : shapes_[li - 1];
    Parameters p;
    if (l.kind == LayerKind::dense) {
      const Index fan_in = in.size();
      const bool scalar_input = li == 0 && fan_in == 1;
      const double scale = scalar_input ? spec_.first_layer_init : 1.0 / std::sqrt(double(fan_in));
      const double bias_scale = scalar_input ? spec_.first_layer_init : 0.1;
      p.weight = MatrixXd::NullaryExpr(l.units, fan_in, [&] { return scale * normal(rng); });
      p.bias = VectorXd::NullaryExpr(l.units, [&] { return bias_scale * normal(rng); });
    } else {
      const Index fan_in = in.c * l.kernel * l.kernel;
      const double scale = std::sqrt(2.0 / double(fan_in));
      p.weight = MatrixXd::NullaryExpr(l.units, fan_in, [&] { return scale * normal(rng); });
      p.bias = VectorXd::NullaryExpr(l.units, [&] { return 0.1 * normal(rng); });
    }
    params_.push_back(std::move(p));
  }
}

Network::Network(NetSpec spec, std::vector<Parameters> params)
    : spec_(std::move(spec)), shapes_(spec_.shapes()), param_layers_(spec_.parameter_layers()), params_(std::move(params)) {
  if (params_.size() != param_layers_.size()) throw FormatError("parameter count does not match the network");
}

std::size_t Network::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i)
    if (spec_.layers[i].name == name) return i;
  throw FormatError("unknown layer: " + name);
}

namespace {

struct LayerRunner {
  const NetSpec& spec;
  const std::vector<Shape>& shapes;
  const std::vector<std::size_t>& param_layers;
  const std::vector<Parameters>& params;

  Shape input_shape(std::size_t li) const { return li == 0 ? spec.input : shapes[li - 1]; }

  std::size_t param_slot(std::size_t li) const {
    return std::size_t(std::find(param_layers.begin(), param_layers.end(), li) - param_layers.begin());
  }

  MatrixXd run(std::size_t li, const MatrixXd& a) const {
    const auto& l = spec.layers[li];
    const Shape in = input_shape(li);
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& p = params[param_slot(li)];
        linalg::count_product<double>(p.weight.rows(), p.weight.cols(), a.cols());
        return (p.weight * a).colwise() + p.bias;
      }
      case LayerKind::circular_conv:
        return conv::circular_conv_forward(as_tensor(a, in), as_kernel(params[param_slot(li)], l, in.c), l.stride, 1).data;
      case LayerKind::avg_pool:
        return conv::average_pool(as_tensor(a, in), l.pool).data;
      case LayerKind::global_avg_pool:
        return global_pool(a, in);
      case LayerKind::nonlinearity:
        return apply_nonlinearity(a, l.nonlinearity);
    }
    return a;
  }
};

}  // namespace

std::vector<MatrixXd> Network::forward_all(const MatrixXd& inputs) const {
  if (inputs.rows() != spec_.input.size()) throw FormatError("input width does not match the network");
  const LayerRunner runner{spec_, shapes_, param_layers_, params_};
  std::vector<MatrixXd> outs;
  outs.reserve(spec_.layers.size());
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) outs.push_back(runner.run(li, li == 0 ? inputs : outs.back()));
  return outs;
}

MatrixXd Network::forward(const MatrixXd& inputs) const { return forward_all(inputs).back(); }

MatrixXd Network::forward_projected(const MatrixXd& inputs, std::size_t layer, const MatrixXd& projector,
                                    const VectorXd& mean) const {
  if (inputs.rows() != spec_.input.size()) throw FormatError("input width does not match the network");
  if (layer >= spec_.layers.size()) throw FormatError("layer index out of range");
  if (projector.cols() != shapes_[layer].size() || mean.size() != shapes_[layer].size())
    throw FormatError("projector does not match layer width");
  const LayerRunner runner{spec_, shapes_, param_layers_, params_};
  MatrixXd a = inputs;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    a = runner.run(li, a);
    if (li == layer) {
      const MatrixXd centered = a.colwise() - mean;
      a = (projector.transpose() * (projector * centered)).colwise() + mean;
    }
  }
  return a;
}

Network::Gradients Network::gradients(const MatrixXd& inputs, const MatrixXd& targets, const std::vector<int>& labels,
                                      TaskKind kind) const {
  const std::vector<MatrixXd> outs = forward_all(inputs);
  const MatrixXd& y = outs.back();
  const Index batch = inputs.cols();
  Gradients g;
  MatrixXd delta;
  if (kind == TaskKind::regression) {
    const MatrixXd diff = y - targets;
    g.loss = diff.squaredNorm() / double(diff.size());
    delta = 2.0 * diff / double(diff.size());
  } else {
    const MatrixXd p = softmax(y);
    delta = p;
    double nll = 0.0;
    for (Index j = 0; j < batch; ++j) {
      const int l = labels[static_cast<std::size_t>(j)];
      nll -= std::log(std::max(p(l, j), 1e-300));
      delta(l, j) -= 1.0;
    }
    g.loss = nll / double(batch);
    delta /= double(batch);
  }

  g.params.resize(params_.size());
  const LayerRunner runner{spec_, shapes_, param_layers_, params_};
  for (std::size_t li = spec_.layers.size(); li-- > 0;) {
    const auto& l = spec_.layers[li];
    const MatrixXd& a = li == 0 ? inputs : outs[li - 1];
    const Shape in = runner.input_shape(li);
    const Shape out = shapes_[li];
    switch (l.kind) {
      case LayerKind::dense: {
        const std::size_t slot = runner.param_slot(li);
        const auto& p = params_[slot];
        g.params[slot].weight = delta * a.transpose();
        g.params[slot].bias = delta.rowwise().sum();
        if (li > 0) delta = p.weight.transpose() * delta;
        break;
      }
      case LayerKind::circular_conv: {
        const std::size_t slot = runner.param_slot(li);
        const auto& p = params_[slot];
        const Index k = l.kernel;
        auto& gp = g.params[slot];
        gp.weight = MatrixXd::Zero(p.weight.rows(), p.weight.cols());
        gp.bias = VectorXd::Zero(p.bias.size());
        MatrixXd din = li > 0 ? MatrixXd::Zero(a.rows(), a.cols()) : MatrixXd();
        for (Index i = 0; i < out.h; ++i)
          for (Index j = 0; j < out.w; ++j)
            for (Index o = 0; o < out.c; ++o) {
              const auto d_row = delta.row((i * out.w + j) * out.c + o);
              gp.bias(o) += d_row.sum();
              for (Index ci = 0; ci < in.c; ++ci)
                for (Index u = 0; u < k; ++u)
                  for (Index v = 0; v < k; ++v) {
                    const Index si = mod(i * l.stride + u - k / 2, in.h);
                    const Index sj = mod(j * l.stride + v - k / 2, in.w);
                    const Index src = (si * in.w + sj) * in.c + ci;
                    const Index widx = (ci * k + u) * k + v;
                    gp.weight(o, widx) += d_row.dot(a.row(src));
                    if (li > 0) din.row(src) += p.weight(o, widx) * d_row;
                  }
            }
        delta = std::move(din);
        break;
      }
      case LayerKind::avg_pool: {
        MatrixXd din = MatrixXd::Zero(a.rows(), a.cols());
        const double scale = 1.0 / double(l.pool * l.pool);
        for (Index i = 0; i < in.h; ++i)
          for (Index j = 0; j < in.w; ++j)
            for (Index ch = 0; ch < in.c; ++ch)
              din.row((i * in.w + j) * in.c + ch) = scale * delta.row(((i / l.pool) * out.w + j / l.pool) * out.c + ch);
        delta = std::move(din);
        break;
      }
      case LayerKind::global_avg_pool: {
        MatrixXd din(a.rows(), a.cols());
        for (Index pix = 0; pix < in.h * in.w; ++pix) din.middleRows(pix * in.c, in.c) = delta / double(in.h * in.w);
        delta = std::move(din);
        break;
      }
      case LayerKind::nonlinearity: {
        const MatrixXd& y_l = outs[li];
        if (l.nonlinearity == Nonlinearity::tanh)
          delta = delta.cwiseProduct((1.0 - y_l.array().square()).matrix());
        else
          delta = delta.cwiseProduct((y_l.array() > 0.0).cast<double>().matrix());
        break;
      }
    }
  }
  return g;
}

std::uint64_t Network::gradient_flops(std::size_t param_index, Index batch) const {
  const std::size_t li = param_layers_.at(param_index);
  const auto& l = spec_.layers[li];
  const Shape in = li == 0 ? spec_.input : shapes_[li - 1];
  const Shape out = shapes_[li];
  std::uint64_t weight_grad = 0;
  if (l.kind == LayerKind::dense) {
    weight_grad = 2ull * std::uint64_t(out.size()) * std::uint64_t(in.size()) * std::uint64_t(batch);
  } else {
    weight_grad = 2ull * std::uint64_t(out.h * out.w) * std::uint64_t(out.c) * std::uint64_t(in.c * l.kernel * l.kernel) *
                  std::uint64_t(batch);
  }
  const std::uint64_t bias_grad = std::uint64_t(out.size()) * std::uint64_t(batch);
  const std::uint64_t input_grad = li > 0 ? weight_grad : 0;
  return weight_grad + bias_grad + input_grad;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double loss(const MatrixXd& outputs, const Task& task, bool probe) {
  if (task.kind == TaskKind::regression) {
    const MatrixXd& t = probe ? task.probe_targets : task.train_targets;
    return (outputs - t).squaredNorm() / double(t.size());
  }
  const auto& labels = probe ? task.probe_labels : task.train_labels;
  const MatrixXd p = softmax(outputs);
  double nll = 0.0;
  for (Index j = 0; j < outputs.cols(); ++j) nll -= std::log(std::max(p(labels[static_cast<std::size_t>(j)], j), 1e-300));
  return nll / double(outputs.cols());
}

double accuracy(const MatrixXd& logits, const std::vector<int>& labels) {
  Index correct = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    Index arg = 0;
    logits.col(j).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return logits.cols() > 0 ? double(correct) / double(logits.cols()) : 0.0;
}

// ---------------------------------------------------------------------------
// Freeze schedules
// ---------------------------------------------------------------------------

void FreezeSchedule::validate(std::size_t parameter_layers) const {
  if (steps.size() != parameter_layers) throw FormatError("freeze schedule must list every parameter layer");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (!steps[i - 1] && steps[i]) throw FormatError("freeze schedule: a layer above a never-frozen layer cannot freeze");
    if (steps[i - 1] && steps[i] && *steps[i] < *steps[i - 1])
      throw FormatError("freeze schedule must be non-decreasing from the input upward");
  }
}

bool FreezeSchedule::frozen(std::size_t param_index, std::uint64_t step) const {
  const auto& s = steps.at(param_index);
  return s.has_value() && step >= *s;
}

FreezeSchedule FreezeSchedule::linear(std::size_t parameter_layers, std::uint64_t total_steps) {
  FreezeSchedule f;
  const std::size_t hidden = parameter_layers > 0 ? parameter_layers - 1 : 0;
  for (std::size_t i = 1; i <= hidden; ++i) f.steps.push_back((total_steps * i + hidden - 1) / hidden);
  f.steps.push_back(std::nullopt);
  return f;
}

FreezeSchedule FreezeSchedule::all_at(std::size_t parameter_layers, std::uint64_t step) {
  FreezeSchedule f;
  f.steps.assign(parameter_layers, step);
  return f;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

tensorio::ActivationDump record_layer(const MatrixXd& outputs, const Shape& shape, const std::string& name,
                                      std::uint64_t step) {
  if (!shape.spatial) return tensorio::make_dense(outputs, name, tensorio::Dtype::f64, step);
  tensorio::ActivationDump dump;
  dump.kind = tensorio::Kind::conv;
  dump.dtype = tensorio::Dtype::f64;
  dump.dims = {std::uint64_t(shape.h), std::uint64_t(shape.w), std::uint64_t(shape.c), std::uint64_t(outputs.cols())};
  dump.layer_name = name;
  dump.step = step;
  dump.values.reserve(static_cast<std::size_t>(outputs.size()));
  for (Index r = 0; r < outputs.rows(); ++r)
    for (Index p = 0; p < outputs.cols(); ++p) dump.values.push_back(outputs(r, p));
  return dump;
}

const tensorio::ActivationDump& CheckpointSet::layer(const Checkpoint& cp, const std::string& name) const {
  for (const auto& d : cp.layers)
    if (d.layer_name == name) return d;
  throw FormatError("checkpoint has no layer " + name);
}

namespace {

Checkpoint snapshot(const Network& net, const Task& task, std::uint64_t step) {
  Checkpoint cp;
  cp.step = step;
  cp.params = net.parameters();
  const auto outs = net.forward_all(task.probe_inputs);
  const auto shapes = net.spec().shapes();
  for (std::size_t li = 0; li < outs.size(); ++li) {
    const auto& name = net.spec().layers[li].name;
    if (!name.empty()) cp.layers.push_back(record_layer(outs[li], shapes[li], name, step));
  }
  cp.probe_loss = loss(outs.back(), task, true);
  return cp;
}

}  // namespace

CheckpointSet train(const NetSpec& spec, const Task& task, const TrainConfig& config) {
  if (config.steps == 0) throw FormatError("train: steps must be positive");
  if (config.batch_size < 1) throw FormatError("train: batch size must be positive");
  if (config.checkpoint_every == 0) throw FormatError("train: checkpoint_every must be positive");
  if (spec.input != task.input_shape) throw FormatError("train: task input shape does not match the network");
  Network net(spec);
  if (config.freeze) config.freeze->validate(net.parameters().size());

  CheckpointSet set;
  set.spec = spec;
  set.dataset_id = task.dataset_id;
  set.checkpoints.push_back(snapshot(net, task, 0));

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  const Index n = task.train_inputs.cols();
  std::uniform_int_distribution<Index> pick(0, n - 1);
  const Index b = config.batch_size;
  MatrixXd inputs(task.train_inputs.rows(), b);
  MatrixXd targets(task.kind == TaskKind::regression ? task.train_targets.rows() : 0, b);
  std::vector<int> labels(static_cast<std::size_t>(b));

  for (std::uint64_t step = 0; step < config.steps; ++step) {
    for (Index j = 0; j < b; ++j) {
      const Index idx = pick(rng);
      inputs.col(j) = task.train_inputs.col(idx);
      if (task.kind == TaskKind::regression)
        targets.col(j) = task.train_targets.col(idx);
      else
        labels[static_cast<std::size_t>(j)] = task.train_labels[static_cast<std::size_t>(idx)];
    }
    const auto g = net.gradients(inputs, targets, labels, task.kind);
    if (!std::isfinite(g.loss)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (loss " << g.loss << ", learning rate " << config.learning_rate << ")";
      throw NumericalError(msg.str());
    }
    auto& params = net.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      if (config.freeze && config.freeze->frozen(pi, step)) {
        set.skipped_gradient_flops += net.gradient_flops(pi, b);
        continue;
      }
      params[pi].weight -= config.learning_rate * g.params[pi].weight;
      params[pi].bias -= config.learning_rate * g.params[pi].bias;
    }
    const std::uint64_t done = step + 1;
    if (done % config.checkpoint_every == 0 || done == config.steps) set.checkpoints.push_back(snapshot(net, task, done));
  }
  return set;
}

std::uint64_t predicted_skipped_flops(const NetSpec& spec, const FreezeSchedule& schedule, std::uint64_t steps, Index batch) {
  const Network net(spec);
  schedule.validate(net.parameters().size());
  std::uint64_t total = 0;
  for (std::size_t pi = 0; pi < schedule.steps.size(); ++pi) {
    if (!schedule.steps[pi]) continue;
    const std::uint64_t from = std::min(*schedule.steps[pi], steps);
    total += (steps - from) * net.gradient_flops(pi, batch);
  }
  return total;
}

std::pair<CheckpointSet, CheckpointSet> two_inits_experiment(const NetSpec& spec, const Task& task,
                                                             const TrainConfig& config, std::uint64_t seed_a,
                                                             std::uint64_t seed_b) {
  NetSpec a = spec;
  a.seed = seed_a;
  NetSpec b = spec;
  b.seed = seed_b;
  return {train(a, task, config), train(b, task, config)};
}

Network network_at(const CheckpointSet& set, const Checkpoint& cp) { return Network(set.spec, cp.params); }

double eval(const CheckpointSet& set, const Checkpoint& cp, const Task& task) {
  return loss(network_at(set, cp).forward(task.probe_inputs), task, true);
}

double eval_with_projection(const CheckpointSet& set, const Checkpoint& cp, const std::string& layer,
                            const MatrixXd& directions, Index k, const Task& task) {
  const Network net = network_at(set, cp);
  const std::size_t li = net.layer_index(layer);
  const MatrixXd acts = net.forward_all(task.probe_inputs)[li];
  if (directions.cols() != acts.rows()) throw FormatError("direction width does not match layer width");
  const MatrixXd p = topk_projector(directions, k);
  const VectorXd mean = acts.rowwise().mean();
  return loss(net.forward_projected(task.probe_inputs, li, p, mean), task, true);
}

}  // namespace svcca::toynet
