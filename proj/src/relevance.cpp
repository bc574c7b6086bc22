#include "mstate/relevance.hpp"

#include <cmath>
#include <fstream>

#include "mstate/csv.hpp"
#include "mstate/error.hpp"

namespace mstate::relevance {

namespace {

constexpr double kHyperplaneEps = 1e-12;

}  // namespace

std::string to_string(BetaScope scope) {
  return scope == BetaScope::kAllInstances ? "all" : "members";
}

BetaScope parse_beta_scope(const std::string& name) {
  if (name == "members") return BetaScope::kClusterMembers;
  if (name == "all") return BetaScope::kAllInstances;
  throw PipelineError("relevance", "parse_beta_scope", "unknown beta scope '" + name + "'");
}

NeuralisedClassifier neuralise(const clustering::ClusterModel& model, int j) {
  const int k = model.k();
  if (j < 0 || j >= k) {
    throw PipelineError("relevance", "neuralise",
                        "cluster id " + std::to_string(j) + " outside [0, " + std::to_string(k) + ")");
  }
  NeuralisedClassifier c;
  c.target = j;
  c.weights.resize(k - 1, model.dim());
  c.biases.resize(k - 1);
  c.midpoints.resize(k - 1, model.dim());
  const auto cj = model.centroids.row(j);
  Eigen::Index r = 0;
  for (int l = 0; l < k; ++l) {
    if (l == j) continue;
    const auto cl = model.centroids.row(l);
    c.competitors.push_back(l);
    c.weights.row(r) = 2.0 * (cj - cl);
    c.biases(r) = cl.squaredNorm() - cj.squaredNorm();
    c.midpoints.row(r) = 0.5 * (cj + cl);
    ++r;
  }
  return c;
}

ClassifierEvaluation evaluate(const NeuralisedClassifier& classifier,
                              const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != classifier.weights.cols()) {
    throw PipelineError("relevance", "evaluate", "dimension mismatch");
  }
  ClassifierEvaluation e;
  e.h = classifier.weights * x + classifier.biases;
  e.f = e.h.minCoeff();
  return e;
}

double estimate_beta(const NeuralisedClassifier& classifier, const Eigen::MatrixXd& members) {
  if (members.rows() == 0) throw PipelineError("relevance", "estimate_beta", "no members");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < members.rows(); ++i) {
    sum += evaluate(classifier, members.row(i).transpose()).f;
  }
  const double mean = sum / static_cast<double>(members.rows());
  if (!(mean > 0.0)) {
    throw PipelineError("relevance", "estimate_beta",
                        "non-positive mean f (" + csv::format_double(mean) + ") for cluster " +
                            std::to_string(classifier.target));
  }
  return 1.0 / mean;
}

Eigen::VectorXd softmin_weights(const Eigen::VectorXd& h, double beta) {
  const double h_min = h.minCoeff();
  Eigen::VectorXd w = (-beta * (h.array() - h_min)).exp().matrix();
  return w / w.sum();
}

Eigen::VectorXd lrp_cluster_layer(const ClassifierEvaluation& eval, double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw PipelineError("relevance", "lrp_cluster_layer", "beta must be finite and positive");
  }
  return softmin_weights(eval.h, beta) * eval.f;
}

Eigen::VectorXd lrp_input_layer(const Eigen::VectorXd& rho_l, const Eigen::Ref<const Eigen::VectorXd>& x,
                                const NeuralisedClassifier& classifier) {
  if (x.size() != classifier.weights.cols() || rho_l.size() != classifier.weights.rows()) {
    throw PipelineError("relevance", "lrp_input_layer", "dimension mismatch");
  }
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(x.size());
  for (Eigen::Index r = 0; r < classifier.weights.rows(); ++r) {
    if (rho_l(r) == 0.0) continue;
    const Eigen::VectorXd contrib =
        (x - classifier.midpoints.row(r).transpose()).cwiseProduct(classifier.weights.row(r).transpose());
    const double denom = contrib.sum();
    if (std::abs(denom) <= kHyperplaneEps) {
      throw PipelineError("relevance", "lrp_input_layer",
                          "instance lies on the decision hyperplane against cluster " +
                              std::to_string(classifier.competitors[static_cast<std::size_t>(r)]));
    }
    rho += contrib * (rho_l(r) / denom);
  }
  return rho;
}

std::vector<RelevanceVector> explain(const clustering::ClusterModel& model,
                                     const preprocess::FeatureMatrix& dataset, BetaScope scope) {
  if (dataset.size() == 0) throw PipelineError("relevance", "explain", "empty dataset");
  const int k = model.k();
  const auto assignments = clustering::assign_all(model, dataset);

  std::vector<NeuralisedClassifier> classifiers;
  std::vector<double> betas(static_cast<std::size_t>(k), 0.0);
  for (int j = 0; j < k; ++j) {
    classifiers.push_back(neuralise(model, j));
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (scope == BetaScope::kAllInstances || assignments[i].cluster_id == j) {
        rows.push_back(static_cast<Eigen::Index>(i));
      }
    }
    if (rows.empty()) continue;  // no instance needs this cluster's beta
    Eigen::MatrixXd members(static_cast<Eigen::Index>(rows.size()), dataset.values.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      members.row(static_cast<Eigen::Index>(r)) = dataset.values.row(rows[r]);
    }
    betas[static_cast<std::size_t>(j)] = estimate_beta(classifiers.back(), members);
  }

  std::vector<RelevanceVector> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int j = assignments[i].cluster_id;
    const auto& classifier = classifiers[static_cast<std::size_t>(j)];
    const Eigen::VectorXd x = dataset.values.row(static_cast<Eigen::Index>(i)).transpose();
    const ClassifierEvaluation eval = evaluate(classifier, x);
    RelevanceVector rv;
    rv.date = dataset.dates[i];
    rv.cluster_id = j;
    rv.f = eval.f;
    rv.beta = betas[static_cast<std::size_t>(j)];
    try {
      rv.rho = lrp_input_layer(lrp_cluster_layer(eval, rv.beta), x, classifier);
    } catch (const PipelineError& e) {
      throw PipelineError("relevance", "explain", format_date(rv.date) + ": " + e.what());
    }
    out.push_back(std::move(rv));
  }
  return out;
}

void write_relevance(const std::vector<RelevanceVector>& relevances, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("relevance", "write_relevance", "cannot write '" + path.string() + "'");
  std::vector<std::string> row{"date", "cluster_id", "f", "beta"};
  const auto cols = preprocess::feature_columns();
  row.insert(row.end(), cols.begin(), cols.end());
  csv::write_row(out, row);
  for (const auto& rv : relevances) {
    if (rv.rho.size() != static_cast<Eigen::Index>(cols.size())) {
      throw PipelineError("relevance", "write_relevance", "relevance vectors must have 45 entries");
    }
    row = {format_date(rv.date), std::to_string(rv.cluster_id), csv::format_double(rv.f),
           csv::format_double(rv.beta)};
    for (Eigen::Index i = 0; i < rv.rho.size(); ++i) row.push_back(csv::format_double(rv.rho(i)));
    csv::write_row(out, row);
  }
}

std::vector<RelevanceVector> load_relevance(const std::filesystem::path& path) {
  csv::Table table;
  try {
    table = csv::read(path);
  } catch (const std::exception& e) {
    throw PipelineError("relevance", "load_relevance", e.what());
  }
  std::vector<std::string> expected{"date", "cluster_id", "f", "beta"};
  const auto cols = preprocess::feature_columns();
  expected.insert(expected.end(), cols.begin(), cols.end());
  if (table.header != expected) {
    throw PipelineError("relevance", "load_relevance", "unexpected header");
  }
  std::vector<RelevanceVector> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const std::string where = "line " + std::to_string(table.line_numbers[r]);
    if (cells.size() != expected.size()) {
      throw PipelineError("relevance", "load_relevance", where + ": wrong cell count");
    }
    RelevanceVector rv;
    const auto date = parse_date(cells[0]);
    const auto id = csv::parse_double(cells[1]);
    const auto f = csv::parse_double(cells[2]);
    const auto beta = csv::parse_double(cells[3]);
    if (!date || !id || !f || !beta) throw PipelineError("relevance", "load_relevance", where + ": malformed");
    rv.date = *date;
    rv.cluster_id = static_cast<int>(*id);
    rv.f = *f;
    rv.beta = *beta;
    rv.rho.resize(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto v = csv::parse_double(cells[4 + c]);
      if (!v) throw PipelineError("relevance", "load_relevance", where + ": malformed relevance");
      rv.rho(static_cast<Eigen::Index>(c)) = *v;
    }
    out.push_back(std::move(rv));
  }
  return out;
}

}  // namespace mstate::relevance
