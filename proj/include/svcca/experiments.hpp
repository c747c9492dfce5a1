#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svcca/analysis.hpp"
#include "svcca/report.hpp"
#include "svcca/toynet.hpp"

namespace svcca::experiments {

/// Declarative experiment configuration. Every key is optional; unknown keys
/// are rejected. See docs/formats.md for the JSON schema.
struct Config {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::uint64_t partner_seed_offset = 1000;  ///< second run of a pair uses seed + offset

  Index width = 200;
  Index depth = 4;
  toynet::TrainConfig train{};

  double threshold = kDefaultThreshold;
  Denominator denominator = Denominator::retained;

  std::string layer = "fc4";
  std::vector<Index> ks{2, 6, 15, 30, 200};
  std::vector<Index> baseline_ks{5, 10, 20};
  std::uint64_t baseline_seed = 7;

  double ratio = 0.35;
  std::vector<std::string> compress_layers{"fc3", "fc4"};
  analysis::DirectionSource directions = analysis::DirectionSource::two_run;

  toynet::ConvTaskOptions conv_task{};
  Index conv_c1 = 8, conv_c2 = 8;
  toynet::TrainConfig conv_train{1500, 0.1, 32, 500, std::nullopt};
  Index null_trials = 100;

  std::vector<report::Format> formats{report::Format::csv, report::Format::json, report::Format::svg};
  bool write_dumps = true;
};

Config parse_config(const std::string& json_text);
Config read_config(const std::filesystem::path& path);

const std::vector<std::string>& experiment_names();

toynet::NetSpec toy_spec(const Config& c, std::uint64_t seed);
toynet::NetSpec conv_spec(const Config& c, std::uint64_t seed);

/// Two toy-regression runs differing only in seed.
struct RunPair {
  toynet::CheckpointSet a, b;
};
RunPair train_pair(const Config& c, const toynet::Task& task, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Structured results
// ---------------------------------------------------------------------------

struct ProjectionSweep {
  std::string layer;
  std::vector<Index> ks;
  std::vector<double> svcca_loss;
  std::vector<double> random_loss;
  std::vector<double> max_activation_loss;
  double full_loss = 0.0;
};

/// Probe loss of run `a` with `layer` projected onto the top-k SVCCA
/// directions (from comparing with run `b`), k random neurons, or the k
/// highest-RMS neurons.
ProjectionSweep projection_sweep(const RunPair& runs, const toynet::Task& task, const std::string& layer,
                                 const std::vector<Index>& ks, double threshold, std::uint64_t baseline_seed);

struct FreezeReport {
  double baseline_loss = 0.0;
  double frozen_loss = 0.0;
  std::uint64_t skipped_flops = 0;
  std::uint64_t predicted_flops = 0;
  bool frozen_weights_identical = false;  ///< every post-freeze checkpoint pair, every frozen layer
  toynet::FreezeSchedule schedule;
};

FreezeReport freeze_comparison(const toynet::NetSpec& spec, const toynet::Task& task, const toynet::TrainConfig& train);

struct CompressionReport {
  std::vector<analysis::CompressionPlan> plans;
  double full_loss = 0.0;
  double compressed_loss = 0.0;
  /// max |plan.apply(x) - (W P^T)(P x) - b'| over the probe set.
  double fold_error = 0.0;
};

CompressionReport compression(const RunPair& runs, const toynet::Task& task, const std::vector<std::string>& layers,
                              double ratio, analysis::DirectionSource source, double threshold);

struct SensitivityReport {
  analysis::ClassSensitivity curves;
  double train_accuracy = 0.0;
  double similar_pair = 0.0;      ///< curve distance between classes 0 and 1
  double distinct_from_0 = 0.0;   ///< classes 0 and 2
  double distinct_from_1 = 0.0;   ///< classes 1 and 2
};

SensitivityReport sensitivity(const Config& c, std::uint64_t seed);

struct TwoInitsReport {
  analysis::SimilarityGrid grid;
  double top_correlation = 0.0;        ///< rho_1 at `layer`
  double max_neuron_correlation = 0.0; ///< best single-neuron match at `layer`
  double untrained_similarity = 0.0;   ///< initial vs final run a at `layer`
};

TwoInitsReport two_inits(const RunPair& runs, const std::string& layer, const analysis::CompareOptions& opts);

/// Largest |Pearson correlation| between any neuron of X and any neuron of Y.
double max_neuron_correlation(const MatrixXd& x, const MatrixXd& y);

/// Runs a named experiment, writes its artifacts under `out`, and returns
/// the human-readable summary. Throws FormatError for unknown names.
std::string run(const std::string& name, const Config& c, const std::filesystem::path& out);

}  // namespace svcca::experiments
