#include "mstate/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "mstate/csv.hpp"
#include "mstate/error.hpp"
#include "mstate/sectors.hpp"

namespace mstate::clustering {

namespace {

using json = nlohmann::json;

struct Nearest {
  int id;
  double sq_dist;
};

Nearest nearest(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Nearest best{0, (centroids.row(0).transpose() - x).squaredNorm()};
  for (Eigen::Index l = 1; l < centroids.rows(); ++l) {
    const double d = (centroids.row(l).transpose() - x).squaredNorm();
    if (d < best.sq_dist) best = {static_cast<int>(l), d};
  }
  return best;
}

// Returns the inertia of the assignment.
double assign_rows(const Eigen::MatrixXd& data, const Eigen::MatrixXd& centroids,
                   std::vector<int>& labels, std::vector<double>& sq_dist) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Nearest n = nearest(centroids, data.row(i).transpose());
    labels[static_cast<std::size_t>(i)] = n.id;
    sq_dist[static_cast<std::size_t>(i)] = n.sq_dist;
    inertia += n.sq_dist;
  }
  return inertia;
}

Eigen::MatrixXd greedy_spread_init(const Eigen::MatrixXd& data, int k, std::mt19937_64& rng) {
  const Eigen::Index n = data.rows();
  Eigen::MatrixXd centroids(k, data.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = data.row(pick(rng));

  std::vector<double> closest(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    closest[static_cast<std::size_t>(i)] = (data.row(i) - centroids.row(0)).squaredNorm();
  }
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  std::vector<double> cumulative(static_cast<std::size_t>(n));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int c = 1; c < k; ++c) {
    std::partial_sum(closest.begin(), closest.end(), cumulative.begin());
    const double total = cumulative.back();
    if (!(total > 0.0)) {
      throw PipelineError("clustering", "fit_kmeans", "fewer distinct points than clusters");
    }
    Eigen::Index best = -1;
    double best_potential = 0.0;
    std::vector<double> best_closest;
    for (int t = 0; t < trials; ++t) {
      const double r = unit(rng) * total;
      // upper_bound lands on a point with positive weight.
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
      auto candidate = static_cast<Eigen::Index>(it - cumulative.begin());
      if (it == cumulative.end()) {
        candidate = n - 1;
        while (closest[static_cast<std::size_t>(candidate)] == 0.0) --candidate;
      }

      std::vector<double> trial_closest(closest);
      double potential = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto& d = trial_closest[static_cast<std::size_t>(i)];
        d = std::min(d, (data.row(i) - data.row(candidate)).squaredNorm());
        potential += d;
      }
      if (best < 0 || potential < best_potential) {
        best = candidate;
        best_potential = potential;
        best_closest = std::move(trial_closest);
      }
    }
    centroids.row(c) = data.row(best);
    closest = std::move(best_closest);
  }
  return centroids;
}

Eigen::MatrixXd uniform_init(const Eigen::MatrixXd& data, int k, std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::MatrixXd centroids(k, data.cols());
  int chosen = 0;
  for (const Eigen::Index i : order) {
    bool duplicate = false;
    for (int c = 0; c < chosen && !duplicate; ++c) duplicate = centroids.row(c) == data.row(i);
    if (duplicate) continue;
    centroids.row(chosen++) = data.row(i);
    if (chosen == k) return centroids;
  }
  throw PipelineError("clustering", "fit_kmeans", "fewer distinct points than clusters");
}

}  // namespace

std::string to_string(Init init) {
  return init == Init::kUniform ? "uniform" : "greedy_spread";
}

Init parse_init(const std::string& name) {
  if (name == "uniform") return Init::kUniform;
  if (name == "greedy_spread") return Init::kGreedySpread;
  throw PipelineError("clustering", "parse_init", "unknown init '" + name + "'");
}

int repair_empty_clusters(const Eigen::MatrixXd& data, Eigen::MatrixXd& centroids,
                          std::vector<int>& labels, std::vector<double>& sq_dist) {
  std::vector<int> counts(static_cast<std::size_t>(centroids.rows()), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  int repaired = 0;
  for (std::size_t e = 0; e < counts.size(); ++e) {
    if (counts[e] != 0) continue;
    std::size_t far = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (counts[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (far == labels.size() || sq_dist[i] > sq_dist[far]) far = i;
    }
    if (far == labels.size()) break;  // no donor cluster left
    --counts[static_cast<std::size_t>(labels[far])];
    labels[far] = static_cast<int>(e);
    counts[e] = 1;
    sq_dist[far] = 0.0;
    centroids.row(static_cast<Eigen::Index>(e)) = data.row(static_cast<Eigen::Index>(far));
    ++repaired;
  }
  return repaired;
}

KMeansResult fit_kmeans(const Eigen::MatrixXd& data, const KMeansOptions& options) {
  const Eigen::Index n = data.rows();
  if (n == 0) throw PipelineError("clustering", "fit_kmeans", "empty input");
  if (options.k < 2) throw PipelineError("clustering", "fit_kmeans", "k must be >= 2");
  if (n < options.k) {
    throw PipelineError("clustering", "fit_kmeans",
                        "fewer vectors (" + std::to_string(n) + ") than clusters (" +
                            std::to_string(options.k) + ")");
  }
  if (options.max_iter < 1) throw PipelineError("clustering", "fit_kmeans", "max_iter must be >= 1");
  if (!(options.tol >= 0.0)) throw PipelineError("clustering", "fit_kmeans", "tol must be >= 0");
  if (!data.allFinite()) throw PipelineError("clustering", "fit_kmeans", "non-finite input");

  std::mt19937_64 rng(options.seed);
  Eigen::MatrixXd centroids = options.init == Init::kUniform
                                  ? uniform_init(data, options.k, rng)
                                  : greedy_spread_init(data, options.k, rng);

  KMeansResult result;
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<double> sq_dist(static_cast<std::size_t>(n));
  int iterations = 0;
  for (int it = 0; it < options.max_iter; ++it) {
    ++iterations;
    result.inertia_history.push_back(assign_rows(data, centroids, labels, sq_dist));
    result.repairs += repair_empty_clusters(data, centroids, labels, sq_dist);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(options.k, data.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(options.k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = labels[static_cast<std::size_t>(i)];
      sums.row(l) += data.row(i);
      counts(l) += 1.0;
    }
    double shift = 0.0;
    for (int l = 0; l < options.k; ++l) {
      if (counts(l) == 0.0) continue;  // only when no donor existed; keep the old centroid
      const Eigen::RowVectorXd updated = sums.row(l) / counts(l);
      shift = std::max(shift, (updated - centroids.row(l)).norm());
      centroids.row(l) = updated;
    }
    if (shift <= options.tol) break;
  }

  result.model.centroids = centroids;
  result.model.seed = options.seed;
  result.model.tol = options.tol;
  result.model.max_iter = options.max_iter;
  result.model.init = options.init;
  result.model.iterations_run = iterations;
  result.labels.resize(static_cast<std::size_t>(n));
  result.model.inertia = assign_rows(data, centroids, result.labels, sq_dist);

  for (int a = 0; a < options.k; ++a) {
    for (int b = a + 1; b < options.k; ++b) {
      if (centroids.row(a) == centroids.row(b)) {
        throw PipelineError("clustering", "fit_kmeans",
                            "centroids " + std::to_string(a) + " and " + std::to_string(b) +
                                " coincide");
      }
    }
  }
  return result;
}

Assignment assign(const ClusterModel& model, const Eigen::Ref<const Eigen::VectorXd>& vector) {
  if (vector.size() != model.dim()) {
    throw PipelineError("clustering", "assign",
                        "dimension mismatch: vector has " + std::to_string(vector.size()) +
                            " entries, centroids have " + std::to_string(model.dim()));
  }
  const Nearest n = nearest(model.centroids, vector);
  return {Date{}, n.id, std::sqrt(n.sq_dist)};
}

Assignment assign(const ClusterModel& model, const preprocess::FeatureVector& vector) {
  Assignment a = assign(model, vector.values);
  a.date = vector.date;
  return a;
}

std::vector<Assignment> assign_all(const ClusterModel& model, const preprocess::FeatureMatrix& features) {
  std::vector<Assignment> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    Assignment a = assign(model, features.values.row(static_cast<Eigen::Index>(i)).transpose());
    a.date = features.dates[i];
    out.push_back(a);
  }
  return out;
}

void write_model(const ClusterModel& model, const std::filesystem::path& path) {
  json doc;
  doc["k"] = model.k();
  doc["seed"] = model.seed;
  doc["tol"] = model.tol;
  doc["max_iter"] = model.max_iter;
  doc["init"] = to_string(model.init);
  doc["inertia"] = model.inertia;
  doc["iterations_run"] = model.iterations_run;
  json index_map = json::array();
  for (Eigen::Index f = 0; f < model.dim(); ++f) {
    index_map.push_back(model.dim() == static_cast<Eigen::Index>(kFeatureCount)
                            ? feature_name(static_cast<std::size_t>(f))
                            : "x" + std::to_string(f));
  }
  doc["index_map"] = index_map;
  json centroids = json::array();
  for (Eigen::Index l = 0; l < model.centroids.rows(); ++l) {
    std::vector<double> row(model.centroids.row(l).begin(), model.centroids.row(l).end());
    centroids.push_back(row);
  }
  doc["centroids"] = centroids;
  std::ofstream out(path);
  if (!out) throw PipelineError("clustering", "write_model", "cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

ClusterModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("clustering", "load_model", "cannot open '" + path.string() + "'");
  try {
    const json doc = json::parse(in);
    ClusterModel model;
    model.seed = doc.at("seed").get<std::uint64_t>();
    model.tol = doc.at("tol").get<double>();
    model.max_iter = doc.at("max_iter").get<int>();
    model.init = parse_init(doc.at("init").get<std::string>());
    model.inertia = doc.at("inertia").get<double>();
    model.iterations_run = doc.at("iterations_run").get<int>();
    const auto rows = doc.at("centroids").get<std::vector<std::vector<double>>>();
    const int k = doc.at("k").get<int>();
    if (rows.empty() || static_cast<int>(rows.size()) != k) {
      throw std::runtime_error("centroid count does not match k");
    }
    model.centroids.resize(k, static_cast<Eigen::Index>(rows.front().size()));
    for (int l = 0; l < k; ++l) {
      if (rows[static_cast<std::size_t>(l)].size() != rows.front().size()) {
        throw std::runtime_error("ragged centroid array");
      }
      model.centroids.row(l) =
          Eigen::Map<const Eigen::RowVectorXd>(rows[static_cast<std::size_t>(l)].data(),
                                               static_cast<Eigen::Index>(rows.front().size()));
    }
    return model;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("clustering", "load_model", e.what());
  }
}

void write_assignments(const std::vector<Assignment>& assignments, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("clustering", "write_assignments", "cannot write '" + path.string() + "'");
  csv::write_row(out, {"date", "cluster_id", "distance"});
  for (const auto& a : assignments) {
    csv::write_row(out, {format_date(a.date), std::to_string(a.cluster_id), csv::format_double(a.distance)});
  }
}

std::vector<Assignment> load_assignments(const std::filesystem::path& path) {
  csv::Table table;
  try {
    table = csv::read(path);
  } catch (const std::exception& e) {
    throw PipelineError("clustering", "load_assignments", e.what());
  }
  if (table.header != std::vector<std::string>{"date", "cluster_id", "distance"}) {
    throw PipelineError("clustering", "load_assignments", "header must be 'date,cluster_id,distance'");
  }
  std::vector<Assignment> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const auto malformed = [&] {
      return PipelineError("clustering", "load_assignments",
                           "malformed row at line " + std::to_string(table.line_numbers[r]));
    };
    if (cells.size() != 3) throw malformed();
    const auto date = parse_date(cells[0]);
    const double id = csv::parse_double(cells[1]).value_or(-1.0);
    const auto dist = csv::parse_double(cells[2]);
    if (!date || !dist || id < 0 || id != std::floor(id)) throw malformed();
    out.push_back({*date, static_cast<int>(id), *dist});
  }
  return out;
}

}  // namespace mstate::clustering
