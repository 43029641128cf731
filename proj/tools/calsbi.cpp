#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "calsbi/diagnostics.hpp"
#include "calsbi/estimators/checkpoint.hpp"
#include "calsbi/estimators/oracles.hpp"
#include "calsbi/problems/dataset.hpp"
#include "calsbi/report.hpp"
#include "calsbi/trainer.hpp"
#include "calsbi/version.hpp"

namespace fs = std::filesystem;
using namespace calsbi;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// Bad input that is not a flag-parsing problem: missing files, mismatched
// problems, unsupported oracle modes.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

// One flat key=value file per run. Option values are recorded under
// "<command>.<flag>", so the manifest doubles as a --config file.
class Manifest {
 public:
  Manifest(const CLI::App& sub, std::uint64_t seed) : start_(Clock::now()) {
    kv_.set("command", sub.get_name());
    kv_.set("version", std::string(kVersion));
    kv_.set("seed", seed);
    for (const CLI::Option* opt : sub.get_options()) {
      if (opt->get_lnames().empty() || opt->get_lnames()[0] == "help") continue;
      std::string value;
      if (opt->count() > 0) {
        for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      } else {
        value = opt->get_default_str();
      }
      if (opt->get_type_size() == 0 && value.empty()) value = opt->count() ? "true" : "false";
      kv_.set(sub.get_name() + "." + opt->get_lnames()[0], value);
    }
  }

  void output(const std::string& key, const fs::path& p) { kv_.set("output." + key, p.string()); }
  void input(const std::string& key, const fs::path& p) { kv_.set("input." + key, p.string()); }
  void note(const std::string& key, const std::string& v) { kv_.set(key, v); }

  void write(const fs::path& path) {
    kv_.set("wall_time_s", io::format_g17(std::chrono::duration<double>(Clock::now() - start_).count()));
    std::ofstream os(path);
    if (!os) throw InputError("cannot write manifest " + path.string());
    os << kv_.str();
  }

 private:
  io::KeyValue kv_;
  Clock::time_point start_;
};

std::ofstream open_output(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw InputError("cannot write " + p.string());
  return os;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir.string() + ": " + ec.message());
}

Dataset load_data(const fs::path& p) {
  if (!fs::exists(p)) throw InputError("dataset not found: " + p.string());
  return load_dataset(p);
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string problem = "gaussian-linear";
  std::size_t n = 1024;
  std::uint64_t seed = 0;
  std::string out = "data.sbid";
  std::string csv;
};

int run_simulate(const CLI::App& sub, const SimulateArgs& a) {
  Manifest m(sub, a.seed);
  auto d = simulate_dataset(a.problem, a.n, a.seed);
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_dataset(out, d);
  m.output("dataset", out);
  if (!a.csv.empty()) {
    auto os = open_output(a.csv);
    write_dataset_csv(os, d);
    m.output("csv", a.csv);
  }
  m.write(out.string() + ".manifest");
  std::cout << "wrote " << d.count() << " rows of " << a.problem << " to " << out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  TrainConfig cfg;
  std::string reg = "conservative";
  std::string loss_form = "sorting";
  std::size_t levels = 19;
  std::string data;
  std::string out_dir = "run";
};

int run_train(const CLI::App& sub, TrainArgs a) {
  Manifest m(sub, a.cfg.seed);
  TrainConfig& cfg = a.cfg;
  cfg.use_regularizer = a.reg != "none";
  if (cfg.use_regularizer) cfg.reg.mode = covreg::parse_mode(a.reg);
  cfg.reg.loss_form = covreg::parse_loss_form(a.loss_form);
  cfg.reg.levels = covreg::evenly_spaced_levels(a.levels);
  if (!cfg.use_regularizer && sub.get_option("--lambda")->count() > 0)
    std::cerr << "warning: --reg none, so --lambda " << cfg.reg.lambda << " is ignored\n";

  const Dataset d = load_data(a.data);
  m.input("data", a.data);
  cfg.problem = d.problem;
  m.note("train.problem", d.problem);

  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  TrainOptions opts;
  opts.out_dir = dir;
  auto r = train(cfg, d, opts);
  for (const auto& w : r.report.warnings) std::cerr << "warning: " << w << "\n";
  m.output("checkpoint", r.report.checkpoint_path);
  m.output("best_checkpoint", r.report.best_checkpoint_path);
  m.output("train_csv", dir / "train.csv");
  m.output("steps_csv", dir / "steps.csv");
  m.note("train.best_epoch", std::to_string(r.report.best_epoch));
  m.write(dir / "manifest.txt");
  const auto& last = r.report.epochs.back();
  std::cout << "trained " << cfg.method << " for " << r.report.epochs.size() << " epochs in "
            << io::format_double(std::round(r.report.seconds * 100) / 100) << " s; final base loss "
            << io::format_g17(last.base_loss) << ", regularizer " << io::format_g17(last.reg_loss) << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string oracle;
  double scale = 0.5;
  std::string data;
  std::size_t levels = 19;
  double level_min = 0.05, level_max = 0.95;
  std::string ecp = "rank";
  std::size_t samples = diagnostics::kDefaultEvalSamples;
  std::size_t grid_res = diagnostics::kDefaultGridResolution;
  std::size_t sbc_bins = 20;
  std::uint64_t seed = 0;
  std::string out_dir = "eval";
  bool no_svg = false;
};

std::unique_ptr<PosteriorDensity> oracle_for(const EvalArgs& a, const Problem& problem) {
  if (a.oracle == "prior") return std::make_unique<PriorPosterior>(problem.prior(), problem.dim_x());
  if (problem.oracle_kind() != OracleKind::analytic) {
    throw InputError("--oracle " + a.oracle + " needs a closed-form posterior, which '" + problem.id() +
                     "' does not have; use --oracle prior or a checkpoint");
  }
  return analytic_posterior(problem, a.oracle == "scaled" ? a.scale : 1.0);
}

int run_eval(const CLI::App& sub, const EvalArgs& a) {
  Manifest m(sub, a.seed);
  if (a.checkpoint.empty() == a.oracle.empty()) throw InputError("give exactly one of --checkpoint and --oracle");
  if (!(a.level_min > 0 && a.level_max < 1 && a.level_min < a.level_max))
    throw InputError("levels must satisfy 0 < --level-min < --level-max < 1");

  const Dataset d = load_data(a.data);
  m.input("data", a.data);
  const auto problem = make_problem(d.problem);
  std::unique_ptr<PosteriorDensity> posterior;
  if (!a.checkpoint.empty()) {
    if (!fs::exists(a.checkpoint)) throw InputError("checkpoint not found: " + a.checkpoint);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    const std::string trained_on = ck.config.get_or("train.problem", d.problem);
    if (trained_on != d.problem)
      throw InputError("checkpoint was trained on '" + trained_on + "' but the data is '" + d.problem + "'");
    posterior = restore_estimator(ck);
    m.input("checkpoint", a.checkpoint);
  } else {
    posterior = oracle_for(a, *problem);
  }
  if (a.ecp != "rank" && problem->dim_theta() > 2) throw InputError("grid ECP needs at most two parameters");

  const auto levels = covreg::evenly_spaced_levels(a.levels, a.level_min, a.level_max);
  PriorProposal proposal(problem->prior());
  std::vector<diagnostics::CoverageCurve> curves;
  std::vector<double> alphas;
  if (a.ecp == "rank" || a.ecp == "both") {
    alphas = diagnostics::rank_statistics(*posterior, d.theta, d.x, proposal, a.samples,
                                          substream(a.seed, Stream::evaluation)());
    curves.push_back(diagnostics::ecp_from_rank_statistics(alphas, levels, a.samples));
  }
  if (a.ecp == "grid" || a.ecp == "both") {
    auto above = diagnostics::grid_mass_above(*posterior, d.theta, d.x, problem->grid(a.grid_res));
    curves.push_back(diagnostics::ecp_from_mass_above(above, levels));
    // 1 − mass above plays the role of α̂ for the grid estimator.
    if (alphas.empty())
      for (double v : above) alphas.push_back(1.0 - v);
  }

  std::vector<std::pair<std::string, double>> metrics;
  for (const auto& c : curves) {
    metrics.emplace_back(c.method + ".auc", diagnostics::coverage_auc(c));
    metrics.emplace_back(c.method + ".calibration_error", diagnostics::calibration_error(c));
    metrics.emplace_back(c.method + ".conservativeness_error", diagnostics::conservativeness_error(c));
  }
  const auto elp = diagnostics::expected_log_posterior(*posterior, d.theta, d.x, problem->prior());
  metrics.emplace_back("expected_log_posterior", elp.value);
  metrics.emplace_back("expected_log_prior", elp.prior_value);
  metrics.emplace_back("expected_log_posterior_excluded", static_cast<double>(elp.excluded));
  metrics.emplace_back("expected_log_posterior_normalized", elp.normalized ? 1.0 : 0.0);
  metrics.emplace_back("ks", diagnostics::ks_statistic(alphas));
  const auto sbc = diagnostics::sbc_histogram(alphas, a.sbc_bins);
  metrics.emplace_back("sbc_chi_square", diagnostics::chi_square_uniform(sbc));

  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  {
    auto os = open_output(dir / "coverage.csv");
    report::write_coverage_csv(os, curves);
  }
  {
    auto os = open_output(dir / "metrics.csv");
    report::write_metrics_csv(os, metrics);
  }
  {
    auto os = open_output(dir / "sbc.csv");
    report::write_sbc_csv(os, sbc);
  }
  m.output("coverage", dir / "coverage.csv");
  m.output("metrics", dir / "metrics.csv");
  m.output("sbc", dir / "sbc.csv");
  if (!a.no_svg) {
    auto os = open_output(dir / "coverage.svg");
    report::write_coverage_svg(os, curves);
    m.output("svg", dir / "coverage.svg");
  }
  m.write(dir / "manifest.txt");
  for (const auto& [k, v] : metrics) std::cout << k << " " << io::format_g17(v) << "\n";
  return 0;
}

// -------------------------------------------------------------------- demo

struct DemoArgs {
  double level = 0.9;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  bool self_test = false;
  std::string out_dir = "demo";
};

int run_demo(const CLI::App& sub, const DemoArgs& a) {
  Manifest m(sub, a.seed);
  if (!(a.level > 0 && a.level < 1)) throw InputError("--level must lie in (0, 1)");
  auto r = diagnostics::appendix_d_demo(a.n, a.level, a.seed, a.self_test);
  const auto pair = mixture_demo_densities();
  const Mixture1d& approx = a.self_test ? pair.black : pair.red;
  const double lo = -registry::kMixtureHalfWidth, hi = registry::kMixtureHalfWidth;

  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  {
    io::KeyValue kv;
    kv.set("level", io::format_g17(r.level));
    kv.set("n", std::uint64_t{r.n});
    kv.set("ecp", io::format_g17(r.ecp));
    kv.set("threshold", io::format_g17(r.threshold));
    kv.set("segments", std::uint64_t{r.segments.size()});
    kv.set("self_test", r.self_test);
    double length = 0;
    for (const auto& s : r.segments) length += s.hi - s.lo;
    kv.set("total_length", io::format_g17(length));
    auto os = open_output(dir / "report.txt");
    os << kv.str();
  }
  {
    auto os = open_output(dir / "segments.csv");
    report::write_segments_csv(os, r.segments);
  }
  {
    auto os = open_output(dir / "densities.csv");
    os << "theta,truth,approx\n";
    const std::size_t points = 1201;
    for (std::size_t i = 0; i < points; ++i) {
      const double t = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
      os << io::format_g17(t) << ',' << io::format_g17(pair.black.density(t)) << ','
         << io::format_g17(approx.density(t)) << '\n';
    }
  }
  {
    auto os = open_output(dir / "demo.svg");
    report::write_demo_svg(os, r, pair.black, approx, lo, hi);
  }
  for (const char* f : {"report.txt", "segments.csv", "densities.csv", "demo.svg"}) m.output(f, dir / f);
  m.write(dir / "manifest.txt");
  std::cout << "ecp " << io::format_g17(r.ecp) << " at level " << io::format_g17(r.level) << " over " << r.n
            << " draws; HPDR has " << r.segments.size() << " segment(s)\n";
  for (const auto& s : r.segments) std::cout << "  [" << io::format_g17(s.lo) << ", " << io::format_g17(s.hi) << "]\n";
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::string method = "npe";
  std::vector<std::size_t> samples{1, 4, 16, 64};
  std::size_t steps = 20;
  std::size_t budget = 1024;
  std::uint64_t seed = 0;
  std::string out_dir = "overhead";
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median per-step wall time for the first `steps` optimizer steps.
double step_seconds(TrainConfig cfg, const Dataset& d, std::size_t steps) {
  TrainOptions opts;
  opts.max_steps = steps;
  cfg.epochs = steps;  // upper bound; max_steps stops earlier
  auto r = train(cfg, d, opts);
  std::vector<double> s;
  for (const auto& st : r.report.steps) s.push_back(st.seconds);
  return median(s);
}

int run_report(const CLI::App& sub, const ReportArgs& a) {
  Manifest m(sub, a.seed);
  const Dataset d = simulate_dataset("gaussian-linear", a.budget, a.seed);
  TrainConfig cfg;
  cfg.method = a.method;
  cfg.seed = a.seed;
  cfg.validation_fraction = 0.0;
  cfg.use_regularizer = false;
  const double base = step_seconds(cfg, d, a.steps);

  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  auto os = open_output(dir / "overhead.csv");
  os << "L,seconds_per_step,relative\n";
  os << "0," << io::format_g17(base) << ",1\n";
  std::cout << "L=0 (no regularizer): " << io::format_g17(base) << " s/step\n";
  cfg.use_regularizer = true;
  for (std::size_t l : a.samples) {
    cfg.reg.samples = l;
    const double s = step_seconds(cfg, d, a.steps);
    os << l << ',' << io::format_g17(s) << ',' << io::format_g17(s / base) << '\n';
    std::cout << "L=" << l << ": " << io::format_g17(s) << " s/step, " << io::format_g17(s / base) << "x\n";
  }
  m.output("overhead", dir / "overhead.csv");
  m.write(dir / "manifest.txt");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coverage-regularized neural posterior estimation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "key=value file of defaults; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::ignore);
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Draw (theta, x) pairs from a toy problem");
  s->add_option("--problem", sim.problem, "Problem id")->check(CLI::IsMember(registry::problem_ids()));
  s->add_option("--n", sim.n, "Number of pairs")->check(CLI::PositiveNumber);
  s->add_option("--seed", sim.seed, "Seed");
  s->add_option("--out", sim.out, "Output dataset file");
  s->add_option("--csv", sim.csv, "Also export the dataset as CSV");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train an estimator, optionally with the coverage regularizer");
  t->add_option("--method", tr.cfg.method, "Estimator")->check(CLI::IsMember({"npe", "nre"}));
  t->add_option("--reg", tr.reg, "Regularizer mode")->check(CLI::IsMember({"none", "calibration", "conservative"}));
  t->add_option("--loss-form", tr.loss_form, "Regularizer form")->check(CLI::IsMember({"sorting", "direct"}));
  t->add_option("--lambda", tr.cfg.reg.lambda, "Regularizer weight")->check(CLI::NonNegativeNumber);
  t->add_option("--L", tr.cfg.reg.samples, "Proposal draws per observation")->check(CLI::PositiveNumber);
  t->add_option("--levels", tr.levels, "Level count for the direct form")->check(CLI::PositiveNumber);
  t->add_option("--tau", tr.cfg.reg.temperature, "Straight-through band on density differences")
      ->check(CLI::PositiveNumber);
  t->add_option("--sort-strength", tr.cfg.reg.sort_strength, "Soft-sort strength, 0 for the exact sort")
      ->check(CLI::NonNegativeNumber);
  t->add_option("--epochs", tr.cfg.epochs, "Epochs")->check(CLI::PositiveNumber);
  t->add_option("--batch", tr.cfg.batch_size, "Batch size")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 30));
  t->add_option("--lr", tr.cfg.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
  t->add_option("--weight-decay", tr.cfg.weight_decay, "AdamW decoupled weight decay")->check(CLI::NonNegativeNumber);
  t->add_option("--clip", tr.cfg.clip, "Gradient norm clip")->check(CLI::PositiveNumber);
  t->add_option("--val-fraction", tr.cfg.validation_fraction, "Held-out fraction")->check(CLI::Range(0.0, 0.99));
  t->add_option("--hidden", tr.cfg.hidden, "Hidden units per layer")->check(CLI::PositiveNumber);
  t->add_option("--hidden-layers", tr.cfg.hidden_layers, "Hidden layers per network");
  t->add_option("--embedding", tr.cfg.embedding_dim, "Observation embedding width")->check(CLI::PositiveNumber);
  t->add_option("--coupling-layers", tr.cfg.coupling_layers, "Coupling layers (NPE)")
      ->check(CLI::Range(std::size_t{2}, std::size_t{64}));
  t->add_option("--seed", tr.cfg.seed, "Seed");
  t->add_option("--data", tr.data, "Training dataset")->required();
  t->add_option("--out-dir", tr.out_dir, "Output directory");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Coverage, calibration and density metrics on a test set");
  e->add_option("--checkpoint", ev.checkpoint, "Trained model");
  e->add_option("--oracle", ev.oracle, "Evaluate a reference posterior instead")
      ->check(CLI::IsMember({"analytic", "prior", "scaled"}));
  e->add_option("--scale", ev.scale, "Width factor for --oracle scaled")->check(CLI::PositiveNumber);
  e->add_option("--data", ev.data, "Test dataset")->required();
  e->add_option("--levels", ev.levels, "Number of credibility levels")->check(CLI::PositiveNumber);
  e->add_option("--level-min", ev.level_min, "Lowest level");
  e->add_option("--level-max", ev.level_max, "Highest level");
  e->add_option("--ecp", ev.ecp, "ECP estimator")->check(CLI::IsMember({"rank", "grid", "both"}));
  e->add_option("--L", ev.samples, "Proposal draws per pair")->check(CLI::PositiveNumber);
  e->add_option("--grid-res", ev.grid_res, "Grid cells per dimension")->check(CLI::Range(16, 1 << 16));
  e->add_option("--sbc-bins", ev.sbc_bins, "Histogram bins")->check(CLI::Range(2, 1 << 16));
  e->add_option("--seed", ev.seed, "Seed");
  e->add_option("--out-dir", ev.out_dir, "Output directory");
  e->add_flag("--no-svg", ev.no_svg, "Skip coverage.svg");

  DemoArgs dm;
  auto* g = app.add_subcommand("demo", "One-dimensional mixture coverage demo");
  g->add_option("--level", dm.level, "Credibility level");
  g->add_option("--n", dm.n, "Ground-truth draws")->check(CLI::PositiveNumber);
  g->add_option("--seed", dm.seed, "Seed");
  g->add_flag("--self", dm.self_test, "Use the ground truth as the approximation");
  g->add_option("--out-dir", dm.out_dir, "Output directory");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Per-step training cost of the regularizer as a function of L");
  r->add_option("--method", rp.method, "Estimator")->check(CLI::IsMember({"npe", "nre"}));
  r->add_option("--L", rp.samples, "Sample counts to time")->delimiter(',')->check(CLI::PositiveNumber);
  r->add_option("--steps", rp.steps, "Timed steps per setting")->check(CLI::PositiveNumber);
  r->add_option("--budget", rp.budget, "Training pairs")->check(CLI::Range(128, 1 << 24));
  r->add_option("--seed", rp.seed, "Seed");
  r->add_option("--out-dir", rp.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*s) return run_simulate(*s, sim);
    if (*t) return run_train(*t, tr);
    if (*e) return run_eval(*e, ev);
    if (*g) return run_demo(*g, dm);
    if (*r) return run_report(*r, rp);
  } catch (const NumericAbort& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
