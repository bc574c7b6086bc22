#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstate/clustering.hpp"
#include "mstate/date.hpp"
#include "mstate/preprocess.hpp"

namespace mstate::relevance {

/// The k-means decision "x belongs to cluster j" rewritten as a linear layer
/// h_l = w_l . x + b_l over all competitors l != j followed by f_j = min_l h_l.
/// Row r of each matrix belongs to competitors[r].
struct NeuralisedClassifier {
  int target = 0;
  std::vector<int> competitors;
  Eigen::MatrixXd weights;    // w_l = 2 (c_j - c_l)
  Eigen::VectorXd biases;     // b_l = |c_l|^2 - |c_j|^2
  Eigen::MatrixXd midpoints;  // m_l = (c_j + c_l) / 2
};

struct ClassifierEvaluation {
  Eigen::VectorXd h;
  double f = 0.0;  // min over h; positive iff x is strictly closest to c_j
};

/// Which instances enter the mean of f_j when estimating beta.
enum class BetaScope {
  kClusterMembers,  // instances assigned to j (default)
  kAllInstances,    // every instance of the dataset
};

std::string to_string(BetaScope scope);
BetaScope parse_beta_scope(const std::string& name);

/// Per-feature relevances of one instance; sum(rho) == f.
struct RelevanceVector {
  Date date{};
  int cluster_id = 0;
  Eigen::VectorXd rho;
  double f = 0.0;
  double beta = 0.0;
};

NeuralisedClassifier neuralise(const clustering::ClusterModel& model, int j);

ClassifierEvaluation evaluate(const NeuralisedClassifier& classifier,
                              const Eigen::Ref<const Eigen::VectorXd>& x);

/// beta = 1 / mean(f) over the rows of `members`.
double estimate_beta(const NeuralisedClassifier& classifier, const Eigen::MatrixXd& members);

/// exp(-beta h_l) / sum exp(-beta h), computed relative to min(h).
Eigen::VectorXd softmin_weights(const Eigen::VectorXd& h, double beta);

/// Distributes f_j over the competitor nodes with softmin weights.
Eigen::VectorXd lrp_cluster_layer(const ClassifierEvaluation& eval, double beta);

/// rho_i = sum_l (x_i - m_il) w_il / h_l * rho_l. Throws when a competitor
/// carrying relevance has |h_l| <= 1e-12 (x on its decision hyperplane).
Eigen::VectorXd lrp_input_layer(const Eigen::VectorXd& rho_l, const Eigen::Ref<const Eigen::VectorXd>& x,
                                const NeuralisedClassifier& classifier);

/// Relevance of every instance with respect to its own cluster. beta is
/// estimated once per cluster from `dataset` according to `scope`.
std::vector<RelevanceVector> explain(const clustering::ClusterModel& model,
                                     const preprocess::FeatureMatrix& dataset,
                                     BetaScope scope = BetaScope::kClusterMembers);

void write_relevance(const std::vector<RelevanceVector>& relevances, const std::filesystem::path& path);
std::vector<RelevanceVector> load_relevance(const std::filesystem::path& path);

}  // namespace mstate::relevance
