#include "svcca/experiments.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>


namespace svcca::experiments {

using nlohmann::json;

namespace {

template <typename T>
T median(std::vector<T> v) {
  if (v.empty()) return T{};
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / T(2);
}

void read_train(const json& j, toynet::TrainConfig& t) {
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") t.steps = value.get<std::uint64_t>();
    else if (key == "learning_rate") t.learning_rate = value.get<double>();
    else if (key == "batch_size") t.batch_size = value.get<Index>();
    else if (key == "checkpoint_every") t.checkpoint_every = value.get<std::uint64_t>();
    else throw FormatError("unknown config key: " + key);
  }
}

void read_conv(const json& j, Config& c) {
  for (const auto& [key, value] : j.items()) {
    auto& t = c.conv_task;
    if (key == "n") t.n = value.get<Index>();
    else if (key == "channels") t.channels = value.get<Index>();
    else if (key == "train_per_class") t.train_per_class = value.get<Index>();
    else if (key == "probe_per_class") t.probe_per_class = value.get<Index>();
    else if (key == "augment") t.augment = value.get<bool>();
    else if (key == "noise") t.noise = value.get<double>();
    else if (key == "c1") c.conv_c1 = value.get<Index>();
    else if (key == "c2") c.conv_c2 = value.get<Index>();
    else if (key == "train") read_train(value, c.conv_train);
    else throw FormatError("unknown config key: conv." + key);
  }
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

void emit(const std::filesystem::path& out, const std::string& stem, const Config& c, const analysis::SimilarityGrid& g) {
  for (auto f : c.formats) report::write_text(out / (stem + report::extension(f)), report::render(g, f));
}

void emit(const std::filesystem::path& out, const std::string& stem, const Config& c, const report::LineChart& chart) {
  for (auto f : c.formats) report::write_text(out / (stem + report::extension(f)), report::render(chart, f));
}

/// Dumps of every checkpoint plus a manifest referencing them.
void write_checkpoints(const toynet::CheckpointSet& set, const std::string& model_id, const std::filesystem::path& dir,
                       bool final_only) {
  tensorio::Manifest m;
  m.model_id = model_id;
  m.dataset_id = set.dataset_id;
  m.datapoint_count = set.checkpoints.front().layers.front().datapoints();
  for (const auto& cp : set.checkpoints) {
    if (final_only && &cp != &set.final()) continue;
    tensorio::Checkpoint mc;
    mc.step = cp.step;
    for (const auto& d : cp.layers) {
      const std::filesystem::path rel = std::filesystem::path("dumps") / ("step" + std::to_string(cp.step)) / (d.layer_name + ".svd");
      std::filesystem::create_directories((dir / rel).parent_path());
      tensorio::write_dump(d, dir / rel);
      mc.layers.push_back({d.layer_name, rel});
    }
    m.checkpoints.push_back(std::move(mc));
  }
  tensorio::write_manifest(m, dir / "manifest.json");
}

analysis::CompareOptions compare_options(const Config& c) {
  analysis::CompareOptions o;
  o.threshold = c.threshold;
  o.denominator = c.denominator;
  return o;
}

std::string fmt(double v) { return report::number(v); }

}  // namespace

Config parse_config(const std::string& json_text) {
  Config c;
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) throw FormatError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "seeds") c.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "partner_seed_offset") c.partner_seed_offset = value.get<std::uint64_t>();
      else if (key == "width") c.width = value.get<Index>();
      else if (key == "depth") c.depth = value.get<Index>();
      else if (key == "train") read_train(value, c.train);
      else if (key == "threshold") c.threshold = value.get<double>();
      else if (key == "denominator") c.denominator = analysis::parse_denominator(value.get<std::string>());
      else if (key == "layer") c.layer = value.get<std::string>();
      else if (key == "ks") c.ks = value.get<std::vector<Index>>();
      else if (key == "baseline_ks") c.baseline_ks = value.get<std::vector<Index>>();
      else if (key == "baseline_seed") c.baseline_seed = value.get<std::uint64_t>();
      else if (key == "ratio") c.ratio = value.get<double>();
      else if (key == "compress_layers") c.compress_layers = value.get<std::vector<std::string>>();
      else if (key == "directions") {
        const auto s = value.get<std::string>();
        if (s == "two-run") c.directions = analysis::DirectionSource::two_run;
        else if (s == "logits") c.directions = analysis::DirectionSource::logits;
        else throw FormatError("unknown direction source: " + s);
      } else if (key == "conv") read_conv(value, c);
      else if (key == "null_trials") c.null_trials = value.get<Index>();
      else if (key == "formats") {
        c.formats.clear();
        for (const auto& f : value) c.formats.push_back(report::parse_format(f.get<std::string>()));
      } else if (key == "write_dumps") c.write_dumps = value.get<bool>();
      else throw FormatError("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  check_threshold(c.threshold);
  if (c.seeds.empty()) throw FormatError("config: seeds must not be empty");
  if (c.width < 1 || c.depth < 1) throw FormatError("config: width and depth must be positive");
  if (!(c.ratio > 0.0 && c.ratio <= 1.0)) throw FormatError("config: ratio must be in (0, 1]");
  return c;
}

Config read_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot read config " + path.string());
  return parse_config(std::string(std::istreambuf_iterator<char>(f), {}));
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"toy-regression", "two-inits", "freeze", "projection-sweep", "compression",
                                              "sensitivity"};
  return names;
}

toynet::NetSpec toy_spec(const Config& c, std::uint64_t seed) { return toynet::NetSpec::toy_mlp(seed, c.width, c.depth, 4); }

toynet::NetSpec conv_spec(const Config& c, std::uint64_t seed) {
  return toynet::NetSpec::tiny_convnet(seed, c.conv_task.n, c.conv_task.channels, Index(c.conv_task.classes.size()),
                                       c.conv_c1, c.conv_c2);
}

RunPair train_pair(const Config& c, const toynet::Task& task, std::uint64_t seed) {
  auto [a, b] = toynet::two_inits_experiment(toy_spec(c, seed), task, c.train, seed, seed + c.partner_seed_offset);
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

ProjectionSweep projection_sweep(const RunPair& runs, const toynet::Task& task, const std::string& layer,
                                 const std::vector<Index>& ks, double threshold, std::uint64_t baseline_seed) {
  const auto& cp = runs.a.final();
  const MatrixXd x = tensorio::dense_matrix(runs.a.layer(cp, layer));
  const MatrixXd y = tensorio::dense_matrix(runs.b.layer(runs.b.final(), layer));
  const MatrixXd directions = analysis::compression_directions(x, y, threshold);

  ProjectionSweep s;
  s.layer = layer;
  s.ks = ks;
  s.full_loss = toynet::eval(runs.a, cp, task);
  for (Index k : ks) {
    s.svcca_loss.push_back(toynet::eval_with_projection(runs.a, cp, layer, directions, k, task));
    s.random_loss.push_back(toynet::eval_with_projection(
        runs.a, cp, layer, neuron_baseline_basis(x, k, BaselineMode::random, baseline_seed), k, task));
    s.max_activation_loss.push_back(toynet::eval_with_projection(
        runs.a, cp, layer, neuron_baseline_basis(x, k, BaselineMode::max_activation, baseline_seed), k, task));
  }
  return s;
}

FreezeReport freeze_comparison(const toynet::NetSpec& spec, const toynet::Task& task, const toynet::TrainConfig& train) {
  FreezeReport r;
  const std::size_t layers = spec.parameter_layers().size();
  r.schedule = toynet::FreezeSchedule::linear(layers, train.steps);
  const auto baseline = toynet::train(spec, task, train);
  toynet::TrainConfig frozen_cfg = train;
  frozen_cfg.freeze = r.schedule;
  const auto frozen = toynet::train(spec, task, frozen_cfg);
  r.baseline_loss = baseline.final().probe_loss;
  r.frozen_loss = frozen.final().probe_loss;
  r.skipped_flops = frozen.skipped_gradient_flops;
  r.predicted_flops = toynet::predicted_skipped_flops(spec, r.schedule, train.steps, train.batch_size);

  r.frozen_weights_identical = true;
  for (std::size_t pi = 0; pi < layers; ++pi) {
    const auto& at = r.schedule.steps[pi];
    if (!at) continue;
    const toynet::Parameters* first = nullptr;
    for (const auto& cp : frozen.checkpoints) {
      if (cp.step < *at) continue;
      if (!first) first = &cp.params[pi];
      else if (!(cp.params[pi] == *first)) r.frozen_weights_identical = false;
    }
  }
  return r;
}

CompressionReport compression(const RunPair& runs, const toynet::Task& task, const std::vector<std::string>& layers,
                              double ratio, analysis::DirectionSource source, double threshold) {
  CompressionReport r;
  const auto& cp = runs.a.final();
  const toynet::Network net = toynet::network_at(runs.a, cp);
  const auto param_layers = net.spec().parameter_layers();
  for (const auto& name : layers) {
    const MatrixXd x = tensorio::dense_matrix(runs.a.layer(cp, name));
    const MatrixXd partner = source == analysis::DirectionSource::two_run
                                 ? tensorio::dense_matrix(runs.b.layer(runs.b.final(), name))
                                 : net.forward(task.probe_inputs);
    const MatrixXd directions = analysis::compression_directions(x, partner, threshold);
    const std::size_t li = analysis::consumer_layer(net.spec(), name);
    const std::size_t slot = std::size_t(std::find(param_layers.begin(), param_layers.end(), li) - param_layers.begin());
    const auto& p = net.parameters()[slot];
    const Index k = std::max<Index>(1, Index(std::llround(ratio * double(x.rows()))));
    auto plan = analysis::build_compression_plan(p.weight, p.bias, x, directions, k, name);
    const MatrixXd reference = (p.weight * (plan.projection.transpose() * (plan.projection * x))).colwise() + plan.bias;
    r.fold_error = std::max(r.fold_error, (plan.apply(x) - reference).cwiseAbs().maxCoeff());
    r.plans.push_back(std::move(plan));
  }
  r.full_loss = toynet::eval(runs.a, cp, task);
  r.compressed_loss = toynet::loss(analysis::compressed_network(net, r.plans).forward(task.probe_inputs), task, true);
  return r;
}

SensitivityReport sensitivity(const Config& c, std::uint64_t seed) {
  const auto task = toynet::synthetic_conv_task(seed, c.conv_task);
  const auto set = toynet::train(conv_spec(c, seed), task, c.conv_train);
  const auto net = toynet::network_at(set, set.final());
  SensitivityReport r;
  r.train_accuracy = toynet::accuracy(net.forward(task.train_inputs), task.train_labels);

  std::vector<tensorio::ActivationDump> layers;
  MatrixXd logits;
  for (const auto& d : set.final().layers) {
    if (d.layer_name == "logits") logits = tensorio::dense_matrix(d);
    else layers.push_back(d);
  }
  analysis::SensitivityOptions so;
  so.threshold = c.threshold;
  so.null_trials = c.null_trials;
  so.null_seed = seed;
  r.curves = analysis::class_sensitivity(layers, logits, so);
  if (logits.rows() >= 3) {
    r.similar_pair = analysis::curve_distance(r.curves, 0, 1);
    r.distinct_from_0 = analysis::curve_distance(r.curves, 0, 2);
    r.distinct_from_1 = analysis::curve_distance(r.curves, 1, 2);
  }
  return r;
}

double max_neuron_correlation(const MatrixXd& x, const MatrixXd& y) {
  if (x.cols() != y.cols()) throw FormatError("datapoint count mismatch");
  auto standardize = [](const MatrixXd& m) {
    MatrixXd z = m.colwise() - m.rowwise().mean();
    for (Index i = 0; i < z.rows(); ++i) {
      const double n = z.row(i).norm();
      if (n > 1e-12) z.row(i) /= n;
      else z.row(i).setZero();
    }
    return z;
  };
  return (standardize(x) * standardize(y).transpose()).cwiseAbs().maxCoeff();
}

TwoInitsReport two_inits(const RunPair& runs, const std::string& layer, const analysis::CompareOptions& opts) {
  TwoInitsReport r;
  r.grid = analysis::cross_model_grid(analysis::timeline(runs.a, "run-a"), analysis::timeline(runs.b, "run-b"), opts);
  const auto& xa = runs.a.layer(runs.a.final(), layer);
  const auto& xb = runs.b.layer(runs.b.final(), layer);
  const auto s = analysis::compare(xa, xb, opts);
  r.top_correlation = s.correlations.size() ? s.correlations(0) : 0.0;
  r.max_neuron_correlation = max_neuron_correlation(tensorio::dense_matrix(xa), tensorio::dense_matrix(xb));
  r.untrained_similarity = analysis::compare(runs.a.layer(runs.a.checkpoints.front(), layer), xb, opts).mean_similarity;
  return r;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

std::string run(const std::string& name, const Config& c, const std::filesystem::path& out) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) throw FormatError("unknown experiment: " + name);
  std::filesystem::create_directories(out);
  std::ostringstream log;
  log << "experiment " << name << "\n";

  if (name == "toy-regression") {
    const auto task = toynet::toy_regression_task(c.seed);
    const auto set = toynet::train(toy_spec(c, c.seed), task, c.train);
    if (c.write_dumps) write_checkpoints(set, "toy-mlp/" + seed_tag(c.seed), out, false);
    const auto grids = analysis::dynamics_grid(analysis::timeline(set), compare_options(c));
    for (const auto& g : grids) emit(out / "grids", "step" + std::to_string(g.row_step), c, g);
    const auto curves = analysis::convergence_curves(grids);
    emit(out, "convergence", c, report::convergence_chart(curves));
    const auto steps = analysis::convergence_steps(curves, 0.9);
    log << "final probe loss " << fmt(set.final().probe_loss) << "\n";
    for (std::size_t l = 0; l < curves.layers.size(); ++l)
      log << "  " << curves.layers[l] << " converges (>= 0.9) at step " << steps[l] << "\n";
  } else if (name == "two-inits") {
    const auto task = toynet::toy_regression_task(c.seed);
    const auto runs = train_pair(c, task, c.seed);
    if (c.write_dumps) {
      write_checkpoints(runs.a, "toy-mlp/" + seed_tag(c.seed), out / "run_a", true);
      write_checkpoints(runs.b, "toy-mlp/" + seed_tag(c.seed + c.partner_seed_offset), out / "run_b", true);
    }
    const auto r = two_inits(runs, c.layer, compare_options(c));
    emit(out, "cross_model", c, r.grid);
    log << "layer " << c.layer << ": top correlation " << fmt(r.top_correlation) << ", best single-neuron correlation "
        << fmt(r.max_neuron_correlation) << ", untrained-vs-trained similarity " << fmt(r.untrained_similarity) << "\n";
    for (std::size_t i = 0; i < r.grid.rows.size(); ++i)
      log << "  " << r.grid.rows[i] << " similarity " << fmt(r.grid.values(Index(i), Index(i))) << "\n";
  } else if (name == "freeze") {
    const auto task = toynet::toy_regression_task(c.seed);
    const auto r = freeze_comparison(toy_spec(c, c.seed), task, c.train);
    json j;
    j["baseline_loss"] = r.baseline_loss;
    j["frozen_loss"] = r.frozen_loss;
    j["skipped_gradient_flops"] = r.skipped_flops;
    j["predicted_skipped_flops"] = r.predicted_flops;
    j["frozen_weights_identical"] = r.frozen_weights_identical;
    json steps = json::array();
    for (const auto& s : r.schedule.steps) steps.push_back(s ? json(*s) : json(nullptr));
    j["freeze_steps"] = steps;
    report::write_text(out / "freeze.json", j.dump(2) + "\n");
    log << "baseline loss " << fmt(r.baseline_loss) << ", freeze-trained loss " << fmt(r.frozen_loss) << "\n"
        << "skipped gradient flops " << r.skipped_flops << " (predicted " << r.predicted_flops << ")\n"
        << "frozen weights bit-identical: " << (r.frozen_weights_identical ? "yes" : "no") << "\n";
  } else if (name == "projection-sweep") {
    const auto task = toynet::toy_regression_task(c.seed);
    std::vector<ProjectionSweep> sweeps(c.seeds.size());
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      const auto runs = train_pair(c, task, c.seeds[i]);
      sweeps[i] = projection_sweep(runs, task, c.layer, c.ks, c.threshold, c.baseline_seed);
      report::LineChart chart;
      chart.title = "probe loss after projecting " + c.layer;
      chart.x_label = "k";
      chart.y_label = "loss";
      for (Index k : c.ks) chart.x.push_back(double(k));
      chart.series = {"svcca", "random", "max_activation", "full"};
      chart.y.resize(4, Index(c.ks.size()));
      for (std::size_t p = 0; p < c.ks.size(); ++p) {
        chart.y(0, Index(p)) = sweeps[i].svcca_loss[p];
        chart.y(1, Index(p)) = sweeps[i].random_loss[p];
        chart.y(2, Index(p)) = sweeps[i].max_activation_loss[p];
        chart.y(3, Index(p)) = sweeps[i].full_loss;
      }
      emit(out, "projection_" + seed_tag(c.seeds[i]), c, chart);
    }
    for (std::size_t p = 0; p < c.ks.size(); ++p) {
      std::vector<double> s, r, m;
      for (const auto& sw : sweeps) {
        s.push_back(sw.svcca_loss[p]);
        r.push_back(sw.random_loss[p]);
        m.push_back(sw.max_activation_loss[p]);
      }
      log << "k=" << c.ks[p] << " median loss: svcca " << fmt(median(s)) << ", random " << fmt(median(r))
          << ", max-activation " << fmt(median(m)) << "\n";
    }
    std::vector<double> full;
    for (const auto& sw : sweeps) full.push_back(sw.full_loss);
    log << "full-width median loss " << fmt(median(full)) << "\n";
  } else if (name == "compression") {
    const auto task = toynet::toy_regression_task(c.seed);
    const auto runs = train_pair(c, task, c.seed);
    const auto r = compression(runs, task, c.compress_layers, c.ratio, c.directions, c.threshold);
    json j;
    j["full_loss"] = r.full_loss;
    j["compressed_loss"] = r.compressed_loss;
    j["fold_error"] = r.fold_error;
    j["plans"] = json::array();
    for (const auto& p : r.plans) j["plans"].push_back(json::parse(report::plan_json(p)));
    report::write_text(out / "compression.json", j.dump(2) + "\n");
    log << "uncompressed loss " << fmt(r.full_loss) << ", compressed loss " << fmt(r.compressed_loss) << "\n";
    for (const auto& p : r.plans)
      log << "  " << p.layer << ": k=" << p.k << " of " << p.n << " (size ratio " << fmt(p.size_ratio) << ")\n";
  } else if (name == "sensitivity") {
    std::vector<double> similar, distinct;
    for (auto seed : c.seeds) {
      const auto r = sensitivity(c, seed);
      emit(out, "sensitivity_" + seed_tag(seed), c, report::sensitivity_chart(r.curves));
      similar.push_back(r.similar_pair);
      distinct.push_back(std::min(r.distinct_from_0, r.distinct_from_1));
      log << seed_tag(seed) << ": train accuracy " << fmt(r.train_accuracy) << ", similar-pair distance " << fmt(r.similar_pair)
          << ", distinct distances " << fmt(r.distinct_from_0) << " / " << fmt(r.distinct_from_1) << "\n";
    }
    log << "median similar-pair distance " << fmt(median(similar)) << ", median nearest distinct distance "
        << fmt(median(distinct)) << "\n";
  }
  report::write_text(out / "summary.txt", log.str());
  return log.str();
}

}  // namespace svcca::experiments
