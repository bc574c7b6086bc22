#include "mstate/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "mstate/aggregate.hpp"
#include "mstate/clustering.hpp"
#include "mstate/config.hpp"
#include "mstate/csv.hpp"
#include "mstate/error.hpp"
#include "mstate/ingest.hpp"
#include "mstate/preprocess.hpp"
#include "mstate/relevance.hpp"
#include "mstate/surrogate.hpp"
#include "mstate/synth.hpp"

namespace mstate::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using config::PipelineConfig;

// Planted benchmark written by `synth --planted`.
constexpr std::size_t kPlantedInstances = 2000;
constexpr std::size_t kPlantedRelevant = 8;
constexpr double kPlantedSeparation = 0.2;
constexpr double kPlantedNoise = 0.05;

fs::path artifact(const PipelineConfig& c, const char* name) { return c.out / name; }

void require_file(const fs::path& path, const char* stage) {
  if (!fs::exists(path)) {
    throw PipelineError("cli", stage, "missing input '" + path.string() + "'");
  }
}

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cli", "write", "cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

void stage_ingest(const PipelineConfig& c, std::ostream& out) {
  if (c.prices.empty() || c.sector_map.empty()) {
    throw PipelineError("cli", "ingest", "--prices and --sector-map are required");
  }
  require_file(c.prices, "ingest");
  require_file(c.sector_map, "ingest");
  const auto raw = ingest::load_prices(c.prices);
  const auto map = ingest::load_sector_map(c.sector_map);
  const auto kept = ingest::filter_coverage(raw, c.min_coverage);
  const auto filled = ingest::interpolate_missing(kept);
  const auto sectors = ingest::aggregate_sectors(filled, map);
  const auto returns = ingest::compute_returns(sectors);
  ingest::write_sector_prices(sectors, artifact(c, "sector_prices.csv"));
  ingest::write_returns(returns, artifact(c, "returns.csv"));
  out << "ingest: kept " << kept.tickers.size() << " of " << raw.tickers.size() << " tickers, "
      << returns.dates.size() << " return dates\n";
}

void stage_preprocess(const PipelineConfig& c, std::ostream& out) {
  require_file(artifact(c, "returns.csv"), "preprocess");
  const auto returns = ingest::load_returns(artifact(c, "returns.csv"));
  const auto norm = preprocess::local_normalize(returns, c.n);
  const auto matrices = preprocess::rolling_correlation(norm, c.tau);
  std::vector<preprocess::FeatureVector> vectors;
  vectors.reserve(matrices.size());
  for (const auto& m : matrices) {
    if (const auto problem = preprocess::check_invariants(m); !problem.empty()) {
      throw PipelineError("preprocess", "rolling_correlation", format_date(m.date) + ": " + problem);
    }
    vectors.push_back(preprocess::flatten(m));
  }
  preprocess::write_features(preprocess::stack(vectors), artifact(c, "features.csv"));
  out << "preprocess: " << vectors.size() << " feature vectors\n";
}

void stage_cluster(const PipelineConfig& c, std::ostream& out) {
  require_file(artifact(c, "features.csv"), "cluster");
  const auto features = preprocess::load_features(artifact(c, "features.csv"));
  clustering::KMeansOptions opts;
  opts.k = c.k;
  opts.seed = c.effective_kmeans_seed();
  opts.tol = c.kmeans_tol;
  opts.max_iter = c.kmeans_max_iter;
  opts.init = clustering::parse_init(c.kmeans_init);
  const auto result = clustering::fit_kmeans(features.values, opts);
  clustering::write_model(result.model, artifact(c, "model.json"));
  clustering::write_assignments(clustering::assign_all(result.model, features), artifact(c, "assignments.csv"));
  out << "cluster: k=" << c.k << ", " << result.model.iterations_run << " iterations, inertia "
      << csv::format_double(result.model.inertia) << '\n';
}

void stage_explain(const PipelineConfig& c, std::ostream& out) {
  require_file(artifact(c, "model.json"), "explain");
  require_file(artifact(c, "features.csv"), "explain");
  const auto model = clustering::load_model(artifact(c, "model.json"));
  const auto features = preprocess::load_features(artifact(c, "features.csv"));
  const auto rel = relevance::explain(model, features, relevance::parse_beta_scope(c.beta_scope));
  relevance::write_relevance(rel, artifact(c, "relevance.csv"));
  out << "explain: " << rel.size() << " relevance vectors\n";
}

json selection_json(const std::vector<std::size_t>& features) {
  std::vector<std::string> names;
  for (auto f : features) names.push_back(aggregate::feature_label(f, kFeatureCount));
  return {{"features", features}, {"names", names}};
}

void stage_aggregate(const PipelineConfig& c, std::ostream& out) {
  require_file(artifact(c, "relevance.csv"), "aggregate");
  require_file(artifact(c, "model.json"), "aggregate");
  const auto rel = relevance::load_relevance(artifact(c, "relevance.csv"));
  const int k = clustering::load_model(artifact(c, "model.json")).k();
  const auto chosen = aggregate::parse_method(c.method);

  std::vector<aggregate::AggregatedRelevance> all;
  std::vector<aggregate::ChangePointResult> results;
  std::vector<aggregate::ChangePointResult> chosen_results;
  json selections;
  fs::create_directories(c.out / "elbow");
  for (auto method : {aggregate::Method::kModeMode, aggregate::Method::kMedian}) {
    const auto aggs = aggregate::aggregate_all(rel, k, method);
    selections[aggregate::to_string(method)] = selection_json(aggregate::top_feature_per_cluster(aggs));
    for (const auto& agg : aggs) {
      auto cp = aggregate::bayesian_changepoint(aggregate::sort_curve(agg));
      aggregate::write_elbow(cp, c.out / "elbow" /
                                     ("elbow_" + aggregate::to_string(method) + "_c" + std::to_string(agg.cluster_id) +
                                      ".csv"));
      if (method == chosen) chosen_results.push_back(cp);
      results.push_back(std::move(cp));
      all.push_back(agg);
    }
  }
  aggregate::write_aggregates(all, artifact(c, "aggregates.csv"));
  aggregate::write_changepoints(results, artifact(c, "changepoints.json"));
  aggregate::write_relevant_mask(chosen_results, artifact(c, "relevant_mask.csv"));
  write_json(selections, artifact(c, "selections.json"));
  out << "aggregate: " << k << " clusters, " << aggregate::to_string(chosen) << " mask written\n";
}

std::vector<std::size_t> read_selection(const json& doc, const char* method) {
  try {
    return doc.at(method).at("features").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw PipelineError("cli", "surrogate", std::string("selections.json: ") + e.what());
  }
}

void stage_surrogate(const PipelineConfig& c, std::ostream& out) {
  for (const char* name : {"features.csv", "assignments.csv", "selections.json"}) require_file(artifact(c, name), "surrogate");
  const auto features = preprocess::load_features(artifact(c, "features.csv"));
  const auto assignments = clustering::load_assignments(artifact(c, "assignments.csv"));
  if (assignments.size() != features.size()) {
    throw PipelineError("cli", "surrogate", "assignments and features differ in length");
  }
  std::vector<int> labels;
  int k = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i].date != features.dates[i]) {
      throw PipelineError("cli", "surrogate", "assignment dates do not match feature dates");
    }
    labels.push_back(assignments[i].cluster_id);
    k = std::max(k, assignments[i].cluster_id + 1);
  }
  std::ifstream in(artifact(c, "selections.json"));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw PipelineError("cli", "surrogate", std::string("selections.json: ") + e.what());
  }
  const auto mode_mode = read_selection(doc, "mode-mode");
  const auto median = read_selection(doc, "median");

  surrogate::ComparisonConfig cc;
  cc.runs = c.runs;
  cc.base_seed = c.seed;
  cc.selection_seed = config::derive_seed(c.seed, "surrogate-selection");
  cc.spec = surrogate::NetworkSpec::table1(static_cast<int>(mode_mode.size()), std::max(k, c.k)).scaled(c.width_divisor);
  cc.train.epochs = c.epochs;
  cc.train.batch_size = c.batch_size;
  cc.train.learning_rate = c.learning_rate;
  cc.train.optimizer = c.optimizer == "sgd" ? surrogate::Optimizer::kSgd : surrogate::Optimizer::kAdam;
  cc.threads = c.threads;
  const auto reports = surrogate::compare_selections(features.values, labels, mode_mode, median, cc);

  surrogate::write_report_csv(reports, artifact(c, "surrogate_report.csv"));
  surrogate::write_summary_json(reports, artifact(c, "surrogate_summary.json"));
  surrogate::write_density_csv(reports, artifact(c, "surrogate_density.csv"));
  if (reports.front().first_network) surrogate::write_network(*reports.front().first_network, artifact(c, "surrogate_network.json"));
  for (const auto& r : reports) {
    out << "surrogate: " << r.method << " mean " << csv::format_double(r.mean) << " std " << csv::format_double(r.std)
        << '\n';
  }
}

void stage_changepoint(const PipelineConfig& c, const fs::path& curve_path, std::ostream& out) {
  require_file(curve_path, "changepoint");
  csv::Table table;
  try {
    table = csv::read(curve_path);
  } catch (const std::exception& e) {
    throw PipelineError("cli", "changepoint", e.what());
  }
  if (table.header != std::vector<std::string>{"feature", "score"}) {
    throw PipelineError("cli", "changepoint", "curve header must be 'feature,score'");
  }
  std::vector<std::string> names;
  Eigen::VectorXd scores(static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const auto v = cells.size() == 2 ? csv::parse_double(cells[1]) : std::nullopt;
    if (!v) throw PipelineError("cli", "changepoint", "malformed row at line " + std::to_string(table.line_numbers[r]));
    names.push_back(cells[0]);
    scores(static_cast<Eigen::Index>(r)) = *v;
  }
  aggregate::AggregatedRelevance agg;
  agg.scores = scores;
  const auto curve = aggregate::sort_curve(agg);
  const auto scan = aggregate::changepoint_scan(curve.sorted_scores);

  json doc;
  std::vector<std::string> sorted_names;
  for (auto p : curve.permutation) sorted_names.push_back(names[p]);
  doc["sorted_features"] = sorted_names;
  doc["sorted_scores"] = std::vector<double>(curve.sorted_scores.begin(), curve.sorted_scores.end());
  doc["candidates"] = scan.candidates;
  doc["posterior"] = std::vector<double>(scan.posterior.begin(), scan.posterior.end());
  doc["map_index"] = scan.map_index;
  doc["relevant_features"] =
      std::vector<std::string>(sorted_names.begin() + scan.map_index, sorted_names.end());
  write_json(doc, artifact(c, "changepoint.json"));
  out << "changepoint: map_index " << scan.map_index << " of " << names.size() << '\n';
}

void stage_synth(const PipelineConfig& c, bool planted, std::ostream& out) {
  auto sc = synth::SyntheticPriceConfig::defaults();
  sc.tickers_per_sector = c.synth_tickers_per_sector;
  sc.days = c.synth_days;
  sc.missing_probability = c.synth_missing_probability;
  sc.seed = config::derive_seed(c.seed, "synth-prices");
  ingest::write_prices(synth::generate_prices(sc), artifact(c, "prices.csv"));
  ingest::write_sector_map(synth::sector_map(sc), artifact(c, "sector_map.csv"));
  out << "synth: " << sc.days << " days x " << sc.tickers_per_sector * static_cast<int>(kSectorCount)
      << " tickers\n";
  if (!planted) return;

  const auto planted_seed = config::derive_seed(c.seed, "synth-planted");
  std::vector<std::size_t> columns(kFeatureCount);
  std::iota(columns.begin(), columns.end(), std::size_t{0});
  std::vector<std::size_t> relevant;
  std::mt19937_64 rng(planted_seed);
  std::sample(columns.begin(), columns.end(), std::back_inserter(relevant), kPlantedRelevant, rng);
  const auto data = synth::generate_planted(c.k, kPlantedInstances, relevant, kPlantedSeparation, kPlantedNoise,
                                            planted_seed);
  const auto fm = synth::to_feature_matrix(data);
  preprocess::write_features(fm, artifact(c, "planted_features.csv"));
  std::ofstream labels(artifact(c, "planted_labels.csv"));
  csv::write_row(labels, {"date", "label"});
  for (std::size_t i = 0; i < fm.dates.size(); ++i) {
    csv::write_row(labels, {format_date(fm.dates[i]), std::to_string(data.labels[i])});
  }
  std::vector<std::string> names;
  for (auto f : data.relevant_features) names.push_back(aggregate::feature_label(f, kFeatureCount));
  write_json({{"k", c.k},
              {"instances", kPlantedInstances},
              {"separation", kPlantedSeparation},
              {"noise", kPlantedNoise},
              {"seed", planted_seed},
              {"relevant_features", data.relevant_features},
              {"relevant_names", names}},
             artifact(c, "planted.json"));
  out << "synth: planted dataset with " << kPlantedInstances << " instances\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Market-state detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir, prices, sector_map, init, beta_scope, method, optimizer;
  double min_coverage = 0.0, tol = 0.0, learning_rate = 0.0;
  int n = 0, tau = 0, k = 0, max_iter = 0, runs = 0, epochs = 0, width_divisor = 0, batch_size = 0, threads = 0;
  std::uint64_t kmeans_seed = 0;

  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Global seed");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  auto* prices_opt = app.add_option("--prices", prices, "Price CSV");
  auto* map_opt = app.add_option("--sector-map", sector_map, "Sector map CSV");
  auto* cov_opt = app.add_option("--min-coverage", min_coverage, "Minimum ticker coverage");
  auto* n_opt = app.add_option("--n", n, "Normalisation window");
  auto* tau_opt = app.add_option("--tau", tau, "Correlation window");
  auto* k_opt = app.add_option("--k", k, "Cluster count");
  auto* kseed_opt = app.add_option("--kmeans-seed", kmeans_seed, "k-means seed");
  auto* tol_opt = app.add_option("--tol", tol, "k-means tolerance");
  auto* iter_opt = app.add_option("--max-iter", max_iter, "k-means iteration cap");
  auto* init_opt = app.add_option("--init", init, "k-means init (greedy_spread|uniform)");
  auto* beta_opt = app.add_option("--beta-scope", beta_scope, "members|all");
  auto* method_opt = app.add_option("--method", method, "mode-mode|median");
  auto* runs_opt = app.add_option("--runs", runs, "Surrogate runs per group");
  auto* epochs_opt = app.add_option("--epochs", epochs, "Surrogate training epochs");
  auto* div_opt = app.add_option("--width-divisor", width_divisor, "Divide hidden widths");
  auto* batch_opt = app.add_option("--batch-size", batch_size, "Mini-batch size (0 = full batch)");
  auto* lr_opt = app.add_option("--learning-rate", learning_rate, "Optimizer step size");
  auto* opt_opt = app.add_option("--optimizer", optimizer, "adam|sgd");
  auto* threads_opt = app.add_option("--threads", threads, "Surrogate worker threads (0 = all cores)");

  std::string curve;
  bool planted = false;
  app.add_subcommand("ingest", "Prices to sector returns");
  app.add_subcommand("preprocess", "Returns to correlation features");
  app.add_subcommand("cluster", "k-means market states");
  app.add_subcommand("explain", "Relevance per instance");
  app.add_subcommand("aggregate", "Relevance rankings and change points");
  app.add_subcommand("changepoint", "Change point of a single curve")
      ->add_option("--curve", curve, "CSV with feature,score")
      ->required();
  app.add_subcommand("surrogate", "Surrogate accuracy comparison");
  app.add_subcommand("synth", "Synthetic prices")->add_flag("--planted", planted, "Also write a planted dataset");
  app.add_subcommand("pipeline", "All stages from prices");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }
  const std::string name = app.get_subcommands().front()->get_name();

  PipelineConfig c;
  try {
    if (!config_path.empty()) c = config::load(config_path);
    if (*seed_opt) c.seed = seed;
    if (*out_opt) c.out = out_dir;
    if (*prices_opt) c.prices = prices;
    if (*map_opt) c.sector_map = sector_map;
    if (*cov_opt) c.min_coverage = min_coverage;
    if (*n_opt) c.n = n;
    if (*tau_opt) c.tau = tau;
    if (*k_opt) c.k = k;
    if (*kseed_opt) c.kmeans_seed = kmeans_seed;
    if (*tol_opt) c.kmeans_tol = tol;
    if (*iter_opt) c.kmeans_max_iter = max_iter;
    if (*init_opt) c.kmeans_init = init;
    if (*beta_opt) c.beta_scope = beta_scope;
    if (*method_opt) c.method = method;
    if (*runs_opt) c.runs = runs;
    if (*epochs_opt) c.epochs = epochs;
    if (*div_opt) c.width_divisor = width_divisor;
    if (*batch_opt) c.batch_size = batch_size;
    if (*lr_opt) c.learning_rate = learning_rate;
    if (*opt_opt) c.optimizer = optimizer;
    if (*threads_opt) c.threads = threads;
    c.validate();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    fs::create_directories(c.out);
    config::write(c, artifact(c, "config_effective.json"));
    if (name == "ingest") {
      stage_ingest(c, out);
    } else if (name == "preprocess") {
      stage_preprocess(c, out);
    } else if (name == "cluster") {
      stage_cluster(c, out);
    } else if (name == "explain") {
      stage_explain(c, out);
    } else if (name == "aggregate") {
      stage_aggregate(c, out);
    } else if (name == "changepoint") {
      stage_changepoint(c, curve, out);
    } else if (name == "surrogate") {
      stage_surrogate(c, out);
    } else if (name == "synth") {
      stage_synth(c, planted, out);
    } else {
      stage_ingest(c, out);
      stage_preprocess(c, out);
      stage_cluster(c, out);
      stage_explain(c, out);
      stage_aggregate(c, out);
      stage_surrogate(c, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kStageFailure;
  }
  return kSuccess;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mstate::cli
