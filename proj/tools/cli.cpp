#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "svcca/analysis.hpp"
#include "svcca/convdft.hpp"
#include "svcca/experiments.hpp"
#include "svcca/report.hpp"
#include "svcca/tensorio.hpp"

namespace svcca::cli {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

struct Check {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool asserted = true;
  bool pass() const { return !asserted || value < tolerance; }
};

int print_checks(const std::vector<Check>& checks, std::ostream& out) {
  bool ok = true;
  for (const auto& c : checks) {
    out << c.name << ": " << sci(c.value);
    if (c.asserted) {
      out << " (tolerance " << sci(c.tolerance) << ") " << (c.pass() ? "PASS" : "FAIL") << "\n";
      ok = ok && c.pass();
    } else {
      out << " (approximate, not asserted)\n";
    }
  }
  out << (ok ? "verification passed" : "verification FAILED") << "\n";
  return ok ? kOk : kVerificationFailed;
}

struct VerifyFlags {
  std::string theorem;
  Index n = 4;
  Index c = 2;
  Index images = 8;
  Index trials = 100;
  std::uint64_t seed = 1;
  bool no_augment = false;
};

MatrixXcd complex_random(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return MatrixXcd::NullaryExpr(rows, cols, [&] { return std::complex<double>(normal(rng), normal(rng)); });
}

double relative_off_block(const MatrixXcd& cov, Index blocks, Index c1, Index c2) {
  return conv::block_structure(cov, blocks, c1, c2).ratio();
}

std::vector<Check> verify_circulant_structure(const VerifyFlags& f) {
  const auto fx = conv::translation_fixture(f.n, f.c, f.images, f.seed, !f.no_augment);
  const Index n2 = f.n * f.n;
  double worst = 0.0;
  for (const auto* layer : {&fx.x, &fx.y})
    for (Index a = 0; a < f.c; ++a)
      for (Index b = 0; b < f.c; ++b) {
        // Rows of one channel in spatial order i*n + j.
        MatrixXd xa(n2, layer->d), xb(n2, layer->d);
        for (Index s = 0; s < n2; ++s) {
          xa.row(s) = layer->data.row(s * f.c + a);
          xb.row(s) = layer->data.row(s * f.c + b);
        }
        const MatrixXcd cov = centered_covariances(center(xa), center(xb)).xy.cast<std::complex<double>>();
        const double scale = cov.cwiseAbs().maxCoeff();
        if (scale > 0) worst = std::max(worst, conv::verify_circulant(cov, f.n).max() / scale);
      }
  return {{"circulant: max relative deviation from 2-D shift invariance", worst, 1e-9, !f.no_augment}};
}

std::vector<Check> verify_dft_diagonal(const VerifyFlags& f) {
  std::mt19937_64 rng(f.seed);
  double worst = 0.0;
  for (Index t = 0; t < f.trials; ++t) {
    const MatrixXcd a = conv::circulant(complex_random(1, f.n, rng).row(0).transpose());
    const MatrixXcd fa = linalg::dft_matrix(f.n) * a * linalg::dft_matrix(f.n).adjoint();
    worst = std::max(worst, conv::verify_dft_diagonalizes(a) / fa.cwiseAbs().maxCoeff());
  }
  return {{"dft-diagonal: max relative off-diagonal of F A F* over " + std::to_string(f.trials) + " circulant matrices", worst,
           1e-10, true}};
}

std::vector<Check> verify_block_cov(const VerifyFlags& f) {
  const auto fx = conv::translation_fixture(f.n, f.c, f.images, f.seed, !f.no_augment);
  const auto x = conv::dft_preprocess(fx.x);
  const auto y = conv::dft_preprocess(fx.y);
  const Index blocks = f.n * f.n;
  const bool exact = !f.no_augment;
  std::vector<Check> checks;
  checks.push_back({"block-cov: relative off-block cross-covariance", relative_off_block(conv::dense_covariance(x, y), blocks, f.c, f.c),
                    1e-9, exact});
  checks.push_back({"block-cov: relative off-block self-covariance", relative_off_block(conv::dense_covariance(x, x), blocks, f.c, f.c),
                    1e-9, exact});
  // One channel alone: the frequency-domain covariance is diagonal.
  double diag = 0.0;
  for (Index ch = 0; ch < f.c; ++ch) {
    MatrixXcd rows(blocks, x.d);
    for (Index s = 0; s < blocks; ++s) rows.row(s) = x.data.row(s * f.c + ch);
    const MatrixXcd cov = centered_covariances(center(rows), center(rows)).xy;
    diag = std::max(diag, relative_off_block(cov, blocks, 1, 1));
  }
  checks.push_back({"block-cov: relative off-diagonal of single-channel covariance", diag, 1e-9, exact});
  return checks;
}

std::vector<Check> verify_dft_cca_equiv(const VerifyFlags& f) {
  const auto fx = conv::translation_fixture(f.n, f.c, f.images, f.seed, !f.no_augment);
  conv::DftCcaOptions o;
  o.threshold = 1.0;
  o.mode = f.no_augment ? conv::DftMode::approximate : conv::DftMode::exact;
  const auto fast = conv::dft_cca(fx.x, fx.y, o);
  SvccaOptions so;
  so.threshold = 1.0;
  const auto dense = svcca(conv::cross_layer_view(fx.x), conv::cross_layer_view(fx.y), so);
  const VectorXd& a = fast.correlations;
  const VectorXd& b = dense.cca.correlations;
  const Index k = std::min(a.size(), b.size());
  double gap = (a.head(k) - b.head(k)).cwiseAbs().maxCoeff();
  if (a.size() > k) gap = std::max(gap, a.tail(a.size() - k).maxCoeff());
  if (b.size() > k) gap = std::max(gap, b.tail(b.size() - k).maxCoeff());
  return {{"dft-cca-equiv: max difference between frequency-domain and dense coefficients", gap, 1e-6, !f.no_augment}};
}

std::vector<Check> verify_kronecker(const VerifyFlags& f) {
  std::mt19937_64 rng(f.seed);
  double worst = 0.0;
  for (Index t = 0; t < f.trials; ++t) {
    const Index p = 1 + Index(rng() % std::uint64_t(f.n)), q = 1 + Index(rng() % std::uint64_t(f.n));
    const Index r = 1 + Index(rng() % std::uint64_t(f.n)), s = 1 + Index(rng() % std::uint64_t(f.n));
    const MatrixXcd a = complex_random(p, q, rng), c = complex_random(q, r, rng), b = complex_random(r, s, rng);
    const double scale = std::max(1.0, (a * c * b).cwiseAbs().maxCoeff());
    worst = std::max(worst, conv::kronecker_vec_residual(a, c, b) / scale);
  }
  return {{"kronecker: max relative residual of vec(ACB) = (B^T (x) A) vec(C)", worst, 1e-12, true}};
}

int cmd_verify(const VerifyFlags& f, std::ostream& out) {
  if (f.n < 1 || f.n > 64 || f.c < 1 || f.images < 1 || f.trials < 1) throw FormatError("verify: sizes must be positive (n <= 64)");
  out << "verify " << f.theorem << " n=" << f.n << " c=" << f.c << (f.no_augment ? " (no augmentation)" : "") << "\n";
  if (f.theorem == "circulant") return print_checks(verify_circulant_structure(f), out);
  if (f.theorem == "dft-diagonal") return print_checks(verify_dft_diagonal(f), out);
  if (f.theorem == "block-cov") return print_checks(verify_block_cov(f), out);
  if (f.theorem == "dft-cca-equiv") return print_checks(verify_dft_cca_equiv(f), out);
  if (f.theorem == "kronecker") return print_checks(verify_kronecker(f), out);
  throw FormatError("unknown check: " + f.theorem);
}

struct CompareFlags {
  std::string a, b;
  double threshold = kDefaultThreshold;
  std::string denominator = "retained";
  std::string mode = "auto";
  std::string dft_mode = "exact";
  std::string scope = "per-block";
  std::string out;
};

analysis::CompareOptions compare_options(double threshold, const std::string& denominator, const std::string& mode,
                                         const std::string& dft_mode, const std::string& scope) {
  analysis::CompareOptions o;
  check_threshold(threshold);
  o.threshold = threshold;
  o.denominator = analysis::parse_denominator(denominator);
  o.mode = analysis::parse_compare_mode(mode);
  if (dft_mode == "exact") o.dft_mode = conv::DftMode::exact;
  else if (dft_mode == "approximate") o.dft_mode = conv::DftMode::approximate;
  else throw FormatError("unknown dft mode: " + dft_mode);
  if (scope == "per-block") o.scope = conv::TruncationScope::per_block;
  else if (scope == "pooled") o.scope = conv::TruncationScope::pooled;
  else throw FormatError("unknown truncation scope: " + scope);
  return o;
}

int cmd_compare(const CompareFlags& f, std::ostream& out) {
  const auto opts = compare_options(f.threshold, f.denominator, f.mode, f.dft_mode, f.scope);
  const auto a = tensorio::read_dump(f.a);
  const auto b = tensorio::read_dump(f.b);
  const auto s = analysis::compare(a, b, opts);
  char rho[32];
  std::snprintf(rho, sizeof rho, "%.6f", s.mean_similarity);
  out << "mode: " << analysis::to_string(s.mode) << (s.exact ? "" : " (approximate)") << "\n";
  out << "kept: " << s.kept_x << " of " << s.original_x << ", " << s.kept_y << " of " << s.original_y << "\n";
  out << "mean similarity (" << analysis::to_string(s.denominator) << "): " << rho << "\n";
  out << "correlations:";
  for (Index i = 0; i < s.correlations.size(); ++i) out << ' ' << report::number(s.correlations(i));
  out << "\n";
  if (!f.out.empty()) {
    nlohmann::ordered_json j;
    j["a"] = a.layer_name;
    j["b"] = b.layer_name;
    j["mode"] = analysis::to_string(s.mode);
    j["exact"] = s.exact;
    j["threshold"] = opts.threshold;
    j["denominator"] = analysis::to_string(s.denominator);
    j["kept_x"] = s.kept_x;
    j["kept_y"] = s.kept_y;
    j["original_x"] = s.original_x;
    j["original_y"] = s.original_y;
    j["mean_similarity"] = s.mean_similarity;
    j["correlations"] = std::vector<double>(s.correlations.data(), s.correlations.data() + s.correlations.size());
    report::write_text(std::filesystem::path(f.out) / "compare.json", j.dump(2) + "\n");
  }
  return kOk;
}

struct DynamicsFlags {
  std::string manifest;
  std::string out;
  double threshold = kDefaultThreshold;
  std::string denominator = "retained";
  std::string mode = "auto";
  std::vector<std::string> formats{"csv", "json", "svg"};
};

int cmd_dynamics(const DynamicsFlags& f, std::ostream& out) {
  const auto opts = compare_options(f.threshold, f.denominator, f.mode, "exact", "per-block");
  std::vector<report::Format> formats;
  for (const auto& s : f.formats) formats.push_back(report::parse_format(s));
  const std::filesystem::path manifest_path(f.manifest);
  const auto manifest = tensorio::read_manifest(manifest_path);
  const auto t = analysis::load_timeline(manifest, manifest_path.parent_path());
  const auto grids = analysis::dynamics_grid(t, opts);
  const std::filesystem::path dir(f.out);
  for (const auto& g : grids)
    for (auto fmt : formats)
      report::write_text(dir / "grids" / ("step" + std::to_string(g.row_step) + report::extension(fmt)), report::render(g, fmt));
  const auto curves = analysis::convergence_curves(grids);
  for (auto fmt : formats)
    report::write_text(dir / (std::string("convergence") + report::extension(fmt)), report::render(report::convergence_chart(curves), fmt));
  const auto steps = analysis::convergence_steps(curves, 0.9);
  out << "model " << t.model_id << ": " << grids.size() << " checkpoints, " << curves.layers.size() << " layers\n";
  for (std::size_t l = 0; l < curves.layers.size(); ++l)
    out << "  " << curves.layers[l] << " reaches 0.9 of final at step " << steps[l] << "\n";
  return kOk;
}

struct ExperimentFlags {
  std::string name;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_experiment(const ExperimentFlags& f, std::ostream& out) {
  const auto& names = experiments::experiment_names();
  if (std::find(names.begin(), names.end(), f.name) == names.end()) throw FormatError("unknown experiment: " + f.name);
  auto config = f.config.empty() ? experiments::Config{} : experiments::read_config(f.config);
  if (f.seed) {
    config.seed = *f.seed;
    config.seeds = {*f.seed};
  }
  out << experiments::run(f.name, config, f.out);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SVCCA toolkit: compare layer representations, run experiments, verify the frequency-domain path"};
  app.name("svcca");
  app.require_subcommand(1);

  CompareFlags cf;
  auto* compare = app.add_subcommand("compare", "SVCCA between two activation dumps");
  compare->add_option("dump_a", cf.a)->required();
  compare->add_option("dump_b", cf.b)->required();
  compare->add_option("--threshold", cf.threshold, "fraction of summed singular values kept")->capture_default_str();
  compare->add_option("--denominator", cf.denominator, "retained | layer_size")->capture_default_str();
  compare->add_option("--mode", cf.mode, "auto | dense | same-layer | cross-layer | dft")->capture_default_str();
  compare->add_option("--dft-mode", cf.dft_mode, "exact | approximate")->capture_default_str();
  compare->add_option("--scope", cf.scope, "per-block | pooled truncation for the dft mode")->capture_default_str();
  compare->add_option("--out", cf.out, "directory for compare.json");

  DynamicsFlags df;
  auto* dynamics = app.add_subcommand("dynamics", "grids of every checkpoint against the final one");
  dynamics->add_option("manifest", df.manifest)->required();
  dynamics->add_option("--out", df.out)->required();
  dynamics->add_option("--threshold", df.threshold)->capture_default_str();
  dynamics->add_option("--denominator", df.denominator)->capture_default_str();
  dynamics->add_option("--mode", df.mode)->capture_default_str();
  dynamics->add_option("--format", df.formats, "csv, json and/or svg")->delimiter(',')->capture_default_str();

  VerifyFlags vf;
  auto* verify = app.add_subcommand("verify", "check circulant / DFT structure on self-generated fixtures");
  verify->add_option("theorem", vf.theorem, "circulant | dft-diagonal | block-cov | dft-cca-equiv | kronecker")->required();
  verify->add_option("--n", vf.n, "spatial size")->capture_default_str();
  verify->add_option("--c", vf.c, "channels")->capture_default_str();
  verify->add_option("--images", vf.images, "images before augmentation")->capture_default_str();
  verify->add_option("--trials", vf.trials, "random matrices for dft-diagonal and kronecker")->capture_default_str();
  verify->add_option("--seed", vf.seed)->capture_default_str();
  verify->add_flag("--no-augment", vf.no_augment, "skip translation augmentation (structure is then approximate)");

  ExperimentFlags ef;
  auto* experiment = app.add_subcommand("experiment", "run a named experiment end to end");
  experiment->add_option("name", ef.name, "toy-regression | two-inits | freeze | projection-sweep | compression | sensitivity")
      ->required();
  experiment->add_option("--config", ef.config, "JSON config file");
  experiment->add_option("--out", ef.out)->required();
  experiment->add_option("--seed", ef.seed, "overrides seed and seeds");

  std::vector<std::string> argv_store{"svcca"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*compare) return cmd_compare(cf, out);
    if (*dynamics) return cmd_dynamics(df, out);
    if (*verify) return cmd_verify(vf, out);
    if (*experiment) return cmd_experiment(ef, out);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace svcca::cli
