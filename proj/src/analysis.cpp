#include "svcca/analysis.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <random>

#include "svcca/parallel.hpp"

namespace svcca::analysis {

namespace {

bool is_conv(const tensorio::ActivationDump& d) { return d.kind == tensorio::Kind::conv; }

void require_same_probe(const std::vector<const tensorio::ActivationDump*>& dumps) {
  for (const auto* d : dumps)
    if (d->datapoints() != dumps.front()->datapoints()) throw FormatError("probe dataset mismatch");
}

CompareMode resolve(const tensorio::ActivationDump& a, const tensorio::ActivationDump& b, CompareMode mode) {
  if (mode != CompareMode::automatic) return mode;
  if (!is_conv(a) && !is_conv(b)) return CompareMode::dense;
  if (is_conv(a) && is_conv(b) && a.layer_name == b.layer_name && a.dims == b.dims) return CompareMode::same_layer;
  return CompareMode::cross_layer;
}

SvccaOptions svcca_options(const CompareOptions& o) {
  SvccaOptions s;
  s.threshold = o.threshold;
  s.denominator = o.denominator;
  return s;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

using Basis = TruncatedBasis<double>;

/// Bases for the flattened paths, computed once per dump.
std::vector<std::unique_ptr<Basis>> flattened_bases(const std::vector<const tensorio::ActivationDump*>& dumps,
                                                    const std::vector<bool>& needed, double threshold) {
  std::vector<std::unique_ptr<Basis>> out(dumps.size());
  parallel_for(dumps.size(), [&](std::size_t i) {
    if (needed[i]) out[i] = std::make_unique<Basis>(truncate_by_variance(flattened(*dumps[i]), threshold));
  });
  return out;
}

/// Fills `grid.values` comparing every row dump with every column dump.
void fill_grid(SimilarityGrid& grid, const std::vector<const tensorio::ActivationDump*>& rows,
               const std::vector<const tensorio::ActivationDump*>& cols, const std::vector<std::unique_ptr<Basis>>& row_bases,
               const std::vector<std::unique_ptr<Basis>>& col_bases, const CompareOptions& opts) {
  const std::size_t nr = rows.size(), nc = cols.size();
  grid.values = MatrixXd::Zero(Index(nr), Index(nc));
  const SvccaOptions so = svcca_options(opts);
  parallel_for(nr * nc, [&](std::size_t cell) {
    const std::size_t i = cell / nc, j = cell % nc;
    const CompareMode mode = resolve(*rows[i], *cols[j], opts.mode);
    double v = 0.0;
    if ((mode == CompareMode::dense || mode == CompareMode::cross_layer) && row_bases[i] && col_bases[j])
      v = svcca_from_bases(*row_bases[i], *col_bases[j], so).mean_similarity;
    else
      v = compare(*rows[i], *cols[j], opts).mean_similarity;
    grid.values(Index(i), Index(j)) = clamp01(v);
  });
}

std::vector<bool> needs_basis(const std::vector<const tensorio::ActivationDump*>& self,
                              const std::vector<const tensorio::ActivationDump*>& other, CompareMode mode) {
  std::vector<bool> needed(self.size(), false);
  for (std::size_t i = 0; i < self.size(); ++i)
    for (const auto* o : other) {
      const CompareMode m = resolve(*self[i], *o, mode);
      if (m == CompareMode::dense || m == CompareMode::cross_layer) needed[i] = true;
    }
  return needed;
}

std::vector<const tensorio::ActivationDump*> pointers(const std::vector<tensorio::ActivationDump>& v) {
  std::vector<const tensorio::ActivationDump*> out;
  for (const auto& d : v) out.push_back(&d);
  return out;
}

std::vector<std::string> names(const std::vector<tensorio::ActivationDump>& v) {
  std::vector<std::string> out;
  for (const auto& d : v) out.push_back(d.layer_name);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pairwise comparison
// ---------------------------------------------------------------------------

Similarity summarize(const SvccaResult<double>& r) {
  Similarity s;
  s.mean_similarity = r.mean_similarity;
  s.correlations = r.cca.correlations;
  s.kept_x = r.kept_x;
  s.kept_y = r.kept_y;
  s.original_x = r.original_x;
  s.original_y = r.original_y;
  s.denominator = r.denominator;
  s.exact = r.exact;
  return s;
}

Similarity summarize(const conv::DftCcaResult& r) {
  Similarity s;
  s.mean_similarity = r.mean_similarity;
  s.correlations = r.correlations;
  s.kept_x = r.kept_x;
  s.kept_y = r.kept_y;
  s.original_x = r.original_x;
  s.original_y = r.original_y;
  s.denominator = r.denominator;
  s.mode = CompareMode::dft;
  s.exact = r.exact;
  return s;
}

conv::ConvActivations conv_tensor(const tensorio::ActivationDump& dump) {
  if (!is_conv(dump)) throw FormatError("expected a conv dump: " + dump.layer_name);
  tensorio::validate(dump);
  const auto& dims = dump.dims;
  conv::ConvActivations t{Index(dims[0]), Index(dims[1]), Index(dims[2]), Index(dims[3])};
  t.data = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      dump.values.data(), t.h * t.w * t.c, t.d);
  return t;
}

MatrixXd flattened(const tensorio::ActivationDump& dump) {
  return is_conv(dump) ? conv_tensor(dump).data : tensorio::dense_matrix(dump);
}

Similarity compare(const tensorio::ActivationDump& a, const tensorio::ActivationDump& b, const CompareOptions& opts) {
  if (a.datapoints() != b.datapoints()) throw FormatError("datapoint count mismatch");
  const CompareMode mode = resolve(a, b, opts.mode);
  const SvccaOptions so = svcca_options(opts);
  Similarity s;
  switch (mode) {
    case CompareMode::dense:
      if (is_conv(a) || is_conv(b)) throw FormatError("dense mode needs two dense dumps");
      s = summarize(svcca(tensorio::dense_matrix(a), tensorio::dense_matrix(b), so));
      break;
    case CompareMode::cross_layer:
      s = summarize(svcca(flattened(a), flattened(b), so));
      break;
    case CompareMode::same_layer: {
      const auto ta = conv_tensor(a);
      const auto tb = conv_tensor(b);
      if (ta.h != tb.h || ta.w != tb.w) throw FormatError("same-layer mode needs matching spatial sizes");
      s = summarize(svcca(conv::same_layer_view(ta), conv::same_layer_view(tb), so));
      break;
    }
    case CompareMode::dft: {
      conv::DftCcaOptions d;
      d.threshold = opts.threshold;
      d.denominator = opts.denominator;
      d.mode = opts.dft_mode;
      d.scope = opts.scope;
      s = summarize(conv::dft_cca(conv_tensor(a), conv_tensor(b), d));
      break;
    }
    case CompareMode::automatic:
      break;
  }
  s.mode = mode;
  return s;
}

const char* to_string(CompareMode mode) {
  switch (mode) {
    case CompareMode::automatic: return "auto";
    case CompareMode::dense: return "dense";
    case CompareMode::same_layer: return "same-layer";
    case CompareMode::cross_layer: return "cross-layer";
    case CompareMode::dft: return "dft";
  }
  return "?";
}

CompareMode parse_compare_mode(const std::string& s) {
  for (auto m : {CompareMode::automatic, CompareMode::dense, CompareMode::same_layer, CompareMode::cross_layer, CompareMode::dft})
    if (s == to_string(m)) return m;
  throw FormatError("unknown mode: " + s);
}

const char* to_string(Denominator d) { return d == Denominator::retained ? "retained" : "layer_size"; }

Denominator parse_denominator(const std::string& s) {
  if (s == "retained") return Denominator::retained;
  if (s == "layer_size" || s == "layer-size") return Denominator::layer_size;
  throw FormatError("unknown denominator: " + s);
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

Timeline timeline(const toynet::CheckpointSet& set, std::string model_id) {
  Timeline t;
  t.model_id = std::move(model_id);
  t.dataset_id = set.dataset_id;
  for (const auto& cp : set.checkpoints) {
    t.steps.push_back(cp.step);
    t.layers.push_back(cp.layers);
  }
  return t;
}

Timeline load_timeline(const tensorio::Manifest& manifest, const std::filesystem::path& base_dir) {
  if (manifest.checkpoints.empty()) throw FormatError("manifest has no checkpoints");
  tensorio::validate_manifest_files(manifest, base_dir);
  Timeline t;
  t.model_id = manifest.model_id;
  t.dataset_id = manifest.dataset_id;
  for (const auto& cp : manifest.checkpoints) {
    if (cp.layers.empty()) throw FormatError("checkpoint has no layers");
    if (cp.layers.size() != manifest.checkpoints.front().layers.size()) throw FormatError("layer sets differ between checkpoints");
    std::vector<tensorio::ActivationDump> layers;
    for (std::size_t i = 0; i < cp.layers.size(); ++i) {
      if (cp.layers[i].name != manifest.checkpoints.front().layers[i].name)
        throw FormatError("layer sets differ between checkpoints");
      auto dump = tensorio::read_dump(tensorio::resolve(base_dir, cp.layers[i].path));
      dump.layer_name = cp.layers[i].name;
      layers.push_back(std::move(dump));
    }
    t.steps.push_back(cp.step);
    t.layers.push_back(std::move(layers));
  }
  return t;
}

SimilarityGrid layer_grid(const std::vector<tensorio::ActivationDump>& rows, const std::vector<tensorio::ActivationDump>& cols,
                          const CompareOptions& opts) {
  const auto rp = pointers(rows), cp = pointers(cols);
  auto all = rp;
  all.insert(all.end(), cp.begin(), cp.end());
  if (all.empty()) throw FormatError("empty layer list");
  require_same_probe(all);
  SimilarityGrid g;
  g.rows = names(rows);
  g.cols = names(cols);
  g.threshold = opts.threshold;
  g.denominator = opts.denominator;
  if (!rows.empty() && rows.front().step) g.row_step = *rows.front().step;
  if (!cols.empty() && cols.front().step) g.col_step = *cols.front().step;
  fill_grid(g, rp, cp, flattened_bases(rp, needs_basis(rp, cp, opts.mode), opts.threshold),
            flattened_bases(cp, needs_basis(cp, rp, opts.mode), opts.threshold), opts);
  return g;
}

std::vector<SimilarityGrid> dynamics_grid(const Timeline& t, const CompareOptions& opts) {
  if (t.layers.empty()) throw FormatError("no checkpoints");
  std::vector<const tensorio::ActivationDump*> all;
  for (const auto& layers : t.layers)
    for (const auto& d : layers) all.push_back(&d);
  require_same_probe(all);

  const auto final_layers = pointers(t.layers.back());
  // Bases for every (step, layer), computed once and shared by all grids.
  std::vector<bool> needed;
  for (const auto& layers : t.layers) {
    const auto n = needs_basis(pointers(layers), final_layers, opts.mode);
    needed.insert(needed.end(), n.begin(), n.end());
  }
  auto bases = flattened_bases(all, needed, opts.threshold);
  std::vector<std::unique_ptr<Basis>> final_bases;
  const std::size_t final_offset = all.size() - final_layers.size();
  for (std::size_t j = 0; j < final_layers.size(); ++j) {
    const auto* b = bases[final_offset + j].get();
    final_bases.push_back(b ? std::make_unique<Basis>(*b) : nullptr);
  }

  std::vector<SimilarityGrid> grids;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < t.layers.size(); ++s) {
    SimilarityGrid g;
    g.rows = names(t.layers[s]);
    g.cols = names(t.layers.back());
    g.row_step = t.steps[s];
    g.col_step = t.steps.back();
    g.threshold = opts.threshold;
    g.denominator = opts.denominator;
    const auto rp = pointers(t.layers[s]);
    std::vector<std::unique_ptr<Basis>> row_bases(rp.size());
    for (std::size_t i = 0; i < rp.size(); ++i) row_bases[i] = std::move(bases[offset + i]);
    if (s + 1 == t.layers.size())
      for (std::size_t i = 0; i < rp.size(); ++i)
        if (final_bases[i]) row_bases[i] = std::make_unique<Basis>(*final_bases[i]);
    fill_grid(g, rp, final_layers, row_bases, final_bases, opts);
    offset += rp.size();
    grids.push_back(std::move(g));
  }
  return grids;
}

SimilarityGrid cross_model_grid(const Timeline& a, const Timeline& b, const CompareOptions& opts) {
  if (a.layers.empty() || b.layers.empty()) throw FormatError("no checkpoints");
  if (!a.dataset_id.empty() && !b.dataset_id.empty() && a.dataset_id != b.dataset_id) throw FormatError("probe dataset mismatch");
  auto g = layer_grid(a.layers.back(), b.layers.back(), opts);
  g.row_step = a.steps.back();
  g.col_step = b.steps.back();
  return g;
}

ConvergenceCurves convergence_curves(const std::vector<SimilarityGrid>& grids) {
  ConvergenceCurves c;
  if (grids.empty()) return c;
  c.layers = grids.front().rows;
  c.values = MatrixXd::Zero(Index(c.layers.size()), Index(grids.size()));
  for (std::size_t s = 0; s < grids.size(); ++s) {
    const auto& g = grids[s];
    if (g.rows != c.layers || g.cols != c.layers) throw FormatError("convergence curves need matching layer sets");
    c.steps.push_back(g.row_step);
    c.values.col(Index(s)) = g.values.diagonal();
  }
  return c;
}

std::vector<std::uint64_t> convergence_steps(const ConvergenceCurves& c, double level) {
  std::vector<std::uint64_t> out;
  for (Index l = 0; l < c.values.rows(); ++l) {
    std::uint64_t step = c.steps.empty() ? 0 : c.steps.back();
    for (Index s = 0; s < c.values.cols(); ++s)
      if (c.values(l, s) >= level) {
        step = c.steps[std::size_t(s)];
        break;
      }
    out.push_back(step);
  }
  return out;
}

std::vector<double> decrease_fractions(const ConvergenceCurves& c) {
  std::vector<double> out;
  for (Index l = 0; l < c.values.rows(); ++l) {
    Index drops = 0;
    for (Index s = 1; s < c.values.cols(); ++s)
      if (c.values(l, s) < c.values(l, s - 1)) ++drops;
    out.push_back(c.values.cols() > 1 ? double(drops) / double(c.values.cols() - 1) : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Class sensitivity
// ---------------------------------------------------------------------------

namespace {

MatrixXd sensitivity_view(const tensorio::ActivationDump& layer, const SensitivityOptions& opts) {
  if (!is_conv(layer)) return tensorio::dense_matrix(layer);
  const auto t = conv_tensor(layer);
  if (!opts.conv_dc_block) return t.data;
  MatrixXd dc = MatrixXd::Zero(t.c, t.d);
  for (Index pix = 0; pix < t.h * t.w; ++pix) dc += t.data.middleRows(pix * t.c, t.c);
  return dc;
}

double first_correlation(const MatrixXd& reduced, const VectorXd& logit) {
  const auto r = cca(reduced, MatrixXd(logit.transpose()));
  return r.correlations.size() > 0 ? clamp01(r.correlations(0)) : 0.0;
}

}  // namespace

double logit_similarity(const VectorXd& logit, const tensorio::ActivationDump& layer, const SensitivityOptions& opts) {
  if (Index(layer.datapoints()) != logit.size()) throw FormatError("datapoint count mismatch");
  return first_correlation(truncate_by_variance(sensitivity_view(layer, opts), opts.threshold).reduced(), logit);
}

ClassSensitivity class_sensitivity(const std::vector<tensorio::ActivationDump>& layers, const MatrixXd& logits,
                                   const SensitivityOptions& opts) {
  for (const auto& l : layers)
    if (Index(l.datapoints()) != logits.cols()) throw FormatError("datapoint count mismatch");
  if (opts.null_trials < 0) throw FormatError("null_trials must be non-negative");
  const Index classes = logits.rows(), nl = Index(layers.size()), d = logits.cols();
  ClassSensitivity s;
  s.layers = names(layers);
  s.values = MatrixXd::Zero(classes, nl);
  s.null_mean = MatrixXd::Zero(classes, nl);
  s.null_q95 = MatrixXd::Zero(classes, nl);

  // Shuffles are drawn once so every layer sees the same permutations.
  std::vector<std::vector<Index>> perms(std::size_t(opts.null_trials));
  std::mt19937_64 rng(opts.null_seed);
  for (auto& p : perms) {
    p.resize(std::size_t(d));
    std::iota(p.begin(), p.end(), Index(0));
    std::shuffle(p.begin(), p.end(), rng);
  }

  parallel_for(std::size_t(nl), [&](std::size_t li) {
    const MatrixXd reduced = truncate_by_variance(sensitivity_view(layers[li], opts), opts.threshold).reduced();
    for (Index c = 0; c < classes; ++c) {
      const VectorXd logit = logits.row(c).transpose();
      s.values(c, Index(li)) = first_correlation(reduced, logit);
      if (perms.empty()) continue;
      std::vector<double> nulls;
      VectorXd shuffled(d);
      for (const auto& p : perms) {
        for (Index i = 0; i < d; ++i) shuffled(i) = logit(p[std::size_t(i)]);
        nulls.push_back(first_correlation(reduced, shuffled));
      }
      s.null_mean(c, Index(li)) = std::accumulate(nulls.begin(), nulls.end(), 0.0) / double(nulls.size());
      std::sort(nulls.begin(), nulls.end());
      s.null_q95(c, Index(li)) = nulls[std::min(nulls.size() - 1, std::size_t(0.95 * double(nulls.size())))];
    }
  });
  return s;
}

double curve_distance(const ClassSensitivity& s, Index a, Index b) {
  if (a < 0 || b < 0 || a >= s.values.rows() || b >= s.values.rows()) throw FormatError("class index out of range");
  return (s.values.row(a) - s.values.row(b)).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Compression
// ---------------------------------------------------------------------------

CompressionPlan build_compression_plan(const MatrixXd& weight, const VectorXd& bias, const MatrixXd& acts,
                                       const MatrixXd& directions, Index k, std::string layer) {
  const Index n = weight.cols();
  if (acts.rows() != n || directions.cols() != n) throw FormatError("plan: layer width mismatch");
  if (bias.size() != weight.rows()) throw FormatError("plan: bias size mismatch");
  if (k < 1 || k > n) throw FormatError("k out of range");
  CompressionPlan p;
  p.layer = std::move(layer);
  p.k = k;
  p.n = n;
  p.out = weight.rows();
  p.projection = topk_projector(directions, k);
  p.folded = weight * p.projection.transpose();
  const VectorXd mean = acts.rowwise().mean();
  p.bias = bias + weight * (mean - p.projection.transpose() * (p.projection * mean));
  p.size_ratio = double(k) / double(n);
  return p;
}

MatrixXd compression_directions(const MatrixXd& acts, const MatrixXd& partner, double threshold) {
  const auto bx = truncate_by_variance(acts, threshold);
  const auto by = truncate_by_variance(partner, threshold);
  SvccaOptions o;
  o.threshold = threshold;
  const auto r = svcca_from_bases(bx, by, o);
  return canonical_neuron_basis(r.neuron_loadings_x, bx);
}

std::size_t consumer_layer(const toynet::NetSpec& spec, const std::string& layer) {
  std::size_t li = spec.layers.size();
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].name == layer) li = i;
  if (li == spec.layers.size()) throw FormatError("unknown layer: " + layer);
  if (li + 1 >= spec.layers.size() || spec.layers[li + 1].kind != toynet::LayerKind::dense)
    throw FormatError("layer " + layer + " does not feed a dense layer");
  return li + 1;
}

toynet::Network compressed_network(const toynet::Network& net, const std::vector<CompressionPlan>& plans) {
  auto params = net.parameters();
  const auto param_layers = net.spec().parameter_layers();
  for (const auto& plan : plans) {
    const std::size_t li = consumer_layer(net.spec(), plan.layer);
    const std::size_t slot = std::size_t(std::find(param_layers.begin(), param_layers.end(), li) - param_layers.begin());
    if (params[slot].weight.cols() != plan.n || params[slot].weight.rows() != plan.out)
      throw FormatError("plan does not match layer " + plan.layer);
    params[slot].weight = plan.folded * plan.projection;
    params[slot].bias = plan.bias;
  }
  return toynet::Network(net.spec(), std::move(params));
}

}  // namespace svcca::analysis
