#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svcca/convdft.hpp"
#include "svcca/tensorio.hpp"
#include "svcca/toynet.hpp"

namespace svcca::analysis {

/// How two dumps are turned into activation matrices before SVCCA.
///   automatic:   dense pairs as-is; two conv dumps of the same layer name and
///                shape use same_layer, anything else involving conv uses
///                cross_layer.
///   same_layer:  c neurons over h*w*d datapoints (both conv, same h, w).
///   cross_layer: conv dumps flattened to h*w*c neurons over d datapoints.
///   dft:         block-diagonal frequency path (both conv, same h = w).
enum class CompareMode { automatic, dense, same_layer, cross_layer, dft };

struct CompareOptions {
  double threshold = kDefaultThreshold;
  Denominator denominator = Denominator::retained;
  CompareMode mode = CompareMode::automatic;
  conv::DftMode dft_mode = conv::DftMode::exact;
  conv::TruncationScope scope = conv::TruncationScope::per_block;
};

/// Result summary shared by the dense and frequency-domain paths.
struct Similarity {
  double mean_similarity = 0.0;
  VectorXd correlations;  ///< descending
  Index kept_x = 0, kept_y = 0;
  Index original_x = 0, original_y = 0;
  Denominator denominator = Denominator::retained;
  CompareMode mode = CompareMode::dense;  ///< the path actually taken
  bool exact = true;
};

Similarity summarize(const SvccaResult<double>& r);
Similarity summarize(const conv::DftCcaResult& r);

conv::ConvActivations conv_tensor(const tensorio::ActivationDump& dump);
/// Neurons x datapoints for dense dumps; the cross-layer view for conv.
MatrixXd flattened(const tensorio::ActivationDump& dump);

Similarity compare(const tensorio::ActivationDump& a, const tensorio::ActivationDump& b, const CompareOptions& opts = {});

const char* to_string(CompareMode mode);
CompareMode parse_compare_mode(const std::string& s);
const char* to_string(Denominator d);
Denominator parse_denominator(const std::string& s);

// ---------------------------------------------------------------------------
// Grids over layers and checkpoints
// ---------------------------------------------------------------------------

struct SimilarityGrid {
  std::vector<std::string> rows, cols;
  MatrixXd values;  ///< rows.size() x cols.size(), entries in [0, 1]
  std::uint64_t row_step = 0, col_step = 0;
  double threshold = kDefaultThreshold;
  Denominator denominator = Denominator::retained;
};

/// Recorded layers at every checkpoint, all over one probe set.
struct Timeline {
  std::string model_id;
  std::string dataset_id;
  std::vector<std::uint64_t> steps;
  std::vector<std::vector<tensorio::ActivationDump>> layers;  ///< [checkpoint][layer]
};

Timeline timeline(const toynet::CheckpointSet& set, std::string model_id = "toynet");
/// Loads every dump of a manifest; throws FormatError when the manifest has
/// no checkpoints or layer names differ between checkpoints.
Timeline load_timeline(const tensorio::Manifest& manifest, const std::filesystem::path& base_dir);

/// Layers x layers grid; every dump must share one datapoint count.
SimilarityGrid layer_grid(const std::vector<tensorio::ActivationDump>& rows, const std::vector<tensorio::ActivationDump>& cols,
                          const CompareOptions& opts = {});

/// One grid per checkpoint: entry (i, j) compares layer i at that step with
/// layer j at the final step.
std::vector<SimilarityGrid> dynamics_grid(const Timeline& t, const CompareOptions& opts = {});

/// Final layers of two models.
SimilarityGrid cross_model_grid(const Timeline& a, const Timeline& b, const CompareOptions& opts = {});

struct ConvergenceCurves {
  std::vector<std::string> layers;
  std::vector<std::uint64_t> steps;
  MatrixXd values;  ///< layers x steps: similarity with the same layer at the final step
};

/// Diagonals of dynamics grids (requires rows == cols).
ConvergenceCurves convergence_curves(const std::vector<SimilarityGrid>& grids);

/// First checkpoint step at which each curve reaches `level`.
std::vector<std::uint64_t> convergence_steps(const ConvergenceCurves& c, double level = 0.9);

/// Per layer, the fraction of consecutive step pairs where the curve drops.
std::vector<double> decrease_fractions(const ConvergenceCurves& c);

// ---------------------------------------------------------------------------
// Class sensitivity
// ---------------------------------------------------------------------------

struct SensitivityOptions {
  double threshold = kDefaultThreshold;  ///< applied to the layer side only
  /// Conv layers are compared through their zero-frequency block (per-channel
  /// spatial sums). Shift-invariant logits have no covariance with any other
  /// frequency on translation-augmented data. Otherwise the cross-layer view.
  bool conv_dc_block = true;
  Index null_trials = 100;
  std::uint64_t null_seed = 0;
};

struct ClassSensitivity {
  std::vector<std::string> layers;
  MatrixXd values;     ///< classes x layers
  MatrixXd null_mean;  ///< classes x layers, shuffled-logit baseline
  MatrixXd null_q95;
};

/// Similarity of one logit (1 x d) with a layer's truncated subspace.
double logit_similarity(const VectorXd& logit, const tensorio::ActivationDump& layer, const SensitivityOptions& opts = {});

ClassSensitivity class_sensitivity(const std::vector<tensorio::ActivationDump>& layers, const MatrixXd& logits,
                                   const SensitivityOptions& opts = {});

/// Largest absolute gap between two classes' curves over all layers.
double curve_distance(const ClassSensitivity& s, Index a, Index b);

// ---------------------------------------------------------------------------
// Compression
// ---------------------------------------------------------------------------

/// Replaces W x + b on a dense layer's input x by (W P^T)(P x) + b', where P
/// holds k orthonormal directions over the n input neurons and b' absorbs the
/// probe-set mean of x outside span(P): b' = b + W (mean - P^T P mean).
struct CompressionPlan {
  std::string layer;  ///< name of the recorded layer whose output is projected
  Index k = 0, n = 0, out = 0;
  MatrixXd projection;  ///< k x n, orthonormal rows
  MatrixXd folded;      ///< out x k, W P^T
  VectorXd bias;        ///< out
  double size_ratio = 0.0;

  MatrixXd apply(const MatrixXd& x) const { return (folded * (projection * x)).colwise() + bias; }
  Index parameter_count() const { return k * (n + out); }
  Index original_parameter_count() const { return n * out; }
};

/// `directions` are rows over the n neurons of `acts` (n x d), best first.
CompressionPlan build_compression_plan(const MatrixXd& weight, const VectorXd& bias, const MatrixXd& acts,
                                       const MatrixXd& directions, Index k, std::string layer = {});

enum class DirectionSource { two_run, logits };

/// Complete neuron-space basis for `acts`, canonical directions first. The
/// partner is the same layer in a second run (two_run) or the network's
/// logits over the same probe set.
MatrixXd compression_directions(const MatrixXd& acts, const MatrixXd& partner, double threshold = kDefaultThreshold);

/// Network whose dense layers consuming planned layers use W_eff = (W P^T) P
/// and b'. Its forward pass equals chaining the plans' apply().
toynet::Network compressed_network(const toynet::Network& net, const std::vector<CompressionPlan>& plans);

/// Index (into spec.layers) of the dense layer that consumes `layer`'s output.
std::size_t consumer_layer(const toynet::NetSpec& spec, const std::string& layer);

}  // namespace svcca::analysis
